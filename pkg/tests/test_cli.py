import json
import os

import numpy as np
import pytest

from segmap.cli import main


@pytest.fixture(scope="module")
def cli_seq(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli_seq") / "seq")
    rc = main(["synth", out, "--frames", "4", "--resolution", "160x120",
               "--save-scene", out + ".json"])
    assert rc == 0
    assert os.path.isfile(out + ".json")
    return out


def test_synth_layout(cli_seq):
    for sub in ("color", "depth", "features", "labels"):
        assert len(os.listdir(os.path.join(cli_seq, sub))) == 4
    assert os.path.isfile(os.path.join(cli_seq, "intrinsics.txt"))
    assert os.path.isfile(os.path.join(cli_seq, "poses.txt"))


def test_run_writes_report_and_ply(cli_seq, tmp_path):
    report = str(tmp_path / "report.json")
    ply = str(tmp_path / "map.ply")
    ccsv = str(tmp_path / "clusters.csv")
    gcsv = str(tmp_path / "graph.csv")
    rc = main(["run", cli_seq, "--out", report, "--ply", ply,
               "--clusters-csv", ccsv, "--dump-graph", gcsv])
    assert rc == 0
    data = json.load(open(report))
    assert data["config"]["eta"] == 6.0
    assert data["map"]["num_surfels"] > 0
    assert "timing_ms" not in data  # deterministic by default
    assert data["memory"]["element_to_segment_ratio"] > 1
    assert open(ply, "rb").read(4) == b"ply\n"
    assert open(ccsv).readline().strip() == "label,cluster"
    assert open(gcsv).readline().strip() == "i,j,s"


def test_run_profile_includes_timing(cli_seq, tmp_path):
    report = str(tmp_path / "report.json")
    rc = main(["run", cli_seq, "--out", report, "--profile"])
    assert rc == 0
    data = json.load(open(report))
    assert set(data["timing_ms"]["stages_mean"]) == {
        "building_3d_segmentation_map", "deep_feature_extraction",
        "geometric_feature_extraction", "entropy_computation",
        "feature_entropy_update", "segment_clustering"}


def test_evaluate_reports_iou(cli_seq, tmp_path):
    report = str(tmp_path / "report.json")
    rc = main(["evaluate", cli_seq, "--out", report, "--num-classes", "8"])
    assert rc == 0
    data = json.load(open(report))
    assert "iou" in data and 0.0 <= data["iou"]["mean_iou"] <= 1.0
    assert "timing_ms" in data  # evaluate profiles by default


def test_export_ply_subcommand(cli_seq, tmp_path):
    ply = str(tmp_path / "out.ply")
    rc = main(["export-ply", cli_seq, ply, "--color", "clusters"])
    assert rc == 0
    data = open(ply, "rb").read()
    assert b"element vertex" in data[:200]


def test_config_flags_echoed(cli_seq, tmp_path):
    report = str(tmp_path / "report.json")
    rc = main(["run", cli_seq, "--out", report, "--eta", "3.5",
               "--sigma-lambda", "9.0", "--features", "optional"])
    assert rc == 0
    data = json.load(open(report))
    assert data["config"]["eta"] == 3.5
    assert data["config"]["sigma_lambda"] == 9.0
    assert data["config"]["feature_mode"] == "optional"
