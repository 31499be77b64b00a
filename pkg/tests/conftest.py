import numpy as np
import pytest

from segmap.geometry import Frame, Intrinsics, Pose
from segmap.pipeline import PipelineConfig, run_sequence
from segmap.sequence_io import SequenceReader
from segmap.synthetic import demo_room, write_sequence


def make_intrinsics(width=64, height=48, f=60.0):
    return Intrinsics(f, f, width / 2.0 - 0.5, height / 2.0 - 0.5, width, height)


def frame_from_parts(color_lab, depth, intr=None, pose=None, normals=None):
    """Hand-built Frame for unit tests (bypasses color conversion)."""
    from segmap.geometry import compute_normal_map, compute_vertex_map
    h, w = depth.shape
    intr = intr or make_intrinsics(w, h)
    pose = pose or Pose.identity()
    vm = compute_vertex_map(depth, intr)
    nm = compute_normal_map(vm) if normals is None else normals
    return Frame(color_lab=color_lab.astype(np.float32), depth=depth.astype(np.float32),
                 vertex_map=vm, normal_map=nm, intrinsics=intr, pose=pose)


@pytest.fixture(scope="session")
def demo_seq_dir(tmp_path_factory):
    """60-frame noiseless reference room at 320x240."""
    out = tmp_path_factory.mktemp("demo_seq")
    write_sequence(demo_room(frames=60, width=320, height=240), str(out))
    return str(out)


@pytest.fixture(scope="session")
def noisy_seq_dir(tmp_path_factory):
    """Same room with axial sensor noise (sigma_axial); pipeline gates run at k=3."""
    out = tmp_path_factory.mktemp("noisy_seq")
    write_sequence(demo_room(frames=60, width=320, height=240,
                             depth_noise=True, noise_multiplier=1.0), str(out))
    return str(out)


@pytest.fixture(scope="session")
def small_seq_dir(tmp_path_factory):
    """Short low-res room for fast pipeline tests."""
    out = tmp_path_factory.mktemp("small_seq")
    write_sequence(demo_room(frames=6, width=160, height=120), str(out))
    return str(out)


@pytest.fixture(scope="session")
def demo_result(demo_seq_dir):
    return run_sequence(SequenceReader(demo_seq_dir), PipelineConfig())


@pytest.fixture(scope="session")
def small_result(small_seq_dir):
    return run_sequence(SequenceReader(small_seq_dir), PipelineConfig())
