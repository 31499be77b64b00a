"""Incremental segmented 3D surfel mapping with open-world class discovery."""

from .clustering import (ClusterMap, MclParams, SegmentGraph, build_graph, mcl,
                         mcl_dense, mcl_sparse, pairwise_similarity, recluster,
                         segment_weight)
from .features_io import FeaturePacket, PacketError, compute_entropy, load_packet, save_packet
from .geometry import (Frame, Intrinsics, Pose, axial_noise_sigma, compute_normal_map,
                       compute_vertex_map, make_frame, project, rgb_to_lab,
                       transform_directions, transform_points)
from .merging import MergeThresholds, agglomerate, merge_predicates, pair_qualifies, sigma_psi
from .pipeline import PipelineConfig, PipelineResult, build_report, run_sequence
from .segment_table import (LRF, DegenerateGeometryError, SegmentRecord, SegmentTable,
                            estimate_lrf, good_descriptor, merge_records, update_cnn,
                            update_deep, update_entropy, update_geo)
from .sequence_io import SequenceReader
from .slic import (FrameSegmentation, InsufficientGeometryError, SlicCenter, SlicParams,
                   Superpixel, center_from_pixel, run_slic, slic_distance)
from .surfels import (AssociationGates, LabelCorrespondence, RenderedSegmentMap,
                      SurfelMap, export_ply, fuse_frame, propagate_labels,
                      relabel_surfels, render_segment_map)
from .synthetic import (SceneSpec, busy_room, demo_room, load_scene, render_synthetic,
                        save_scene, write_sequence)

__version__ = "0.1.0"
