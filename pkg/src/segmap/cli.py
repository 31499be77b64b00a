"""Command line interface: synth, run, evaluate, export-ply."""

from __future__ import annotations

import argparse
import json
import sys

from .clustering import dump_clusters_csv
from .evaluation import evaluate_clusters
from .pipeline import PipelineConfig, build_report, run_sequence
from .sequence_io import SequenceReader
from .surfels import export_ply
from .synthetic import demo_room, load_scene, save_scene, write_sequence


def _add_config_flags(p: argparse.ArgumentParser):
    d = PipelineConfig()
    p.add_argument("--superpixels", type=int, default=d.target_superpixels,
                   help="target superpixel count per frame")
    p.add_argument("--alpha", type=float, default=d.slic_alpha,
                   help="normal-term weight in the SLIC distance")
    p.add_argument("--beta", type=float, default=d.slic_beta,
                   help="pixel-distance weight in the SLIC distance")
    p.add_argument("--slic-iters", type=int, default=d.slic_iterations)
    p.add_argument("--sigma-lambda", type=float, default=d.sigma_lambda,
                   help="color merge threshold")
    p.add_argument("--sigma-phi", type=float, default=d.sigma_phi,
                   help="convexity merge threshold")
    p.add_argument("--noise-k", type=float, default=d.noise_multiplier,
                   help="multiplier on the axial noise model for the depth gate")
    p.add_argument("--eta", type=float, default=d.eta,
                   help="similarity sharpness s = exp(-eta d)")
    p.add_argument("--mcl-inflation", type=float, default=d.mcl_inflation)
    p.add_argument("--mcl-prune", type=float, default=d.mcl_prune)
    p.add_argument("--mcl-max-iters", type=int, default=d.mcl_max_iters)
    p.add_argument("--features", choices=["required", "optional", "off"],
                   default=d.feature_mode)
    p.add_argument("--overlap", type=float, default=d.propagate_overlap,
                   help="label propagation overlap-ratio threshold")
    p.add_argument("--recluster-every", type=int, default=d.recluster_every)


def _config_from_args(args) -> PipelineConfig:
    return PipelineConfig(
        target_superpixels=args.superpixels,
        slic_alpha=args.alpha,
        slic_beta=args.beta,
        slic_iterations=args.slic_iters,
        sigma_lambda=args.sigma_lambda,
        sigma_phi=args.sigma_phi,
        noise_multiplier=args.noise_k,
        eta=args.eta,
        mcl_inflation=args.mcl_inflation,
        mcl_prune=args.mcl_prune,
        mcl_max_iters=args.mcl_max_iters,
        feature_mode=args.features,
        propagate_overlap=args.overlap,
        recluster_every=args.recluster_every,
    )


def write_report(path: str, report: dict):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def _cluster_color_ids(result):
    import numpy as np
    labels = result.surfel_map.view("labels")
    ids = np.full(len(labels), -1, dtype=np.int64)
    if result.clusters.assignment:
        max_label = max(result.clusters.assignment)
        lut = np.full(max_label + 2, -1, dtype=np.int64)
        for label, cid in result.clusters.assignment.items():
            lut[label] = cid
        sel = (labels >= 0) & (labels <= max_label)
        ids[sel] = lut[labels[sel]]
    return ids


def cmd_synth(args):
    if args.scene:
        spec = load_scene(args.scene)
    else:
        w, h = map(int, args.resolution.split("x"))
        spec = demo_room(frames=args.frames, width=w, height=h,
                         depth_noise=args.noise, noise_multiplier=args.noise_k,
                         seed=args.seed)
    if args.save_scene:
        save_scene(spec, args.save_scene)
    write_sequence(spec, args.out_dir, features=not args.no_features)
    print(f"wrote {len(spec.poses)}-frame sequence to {args.out_dir}")
    return 0


def _run_common(args, evaluate: bool):
    config = _config_from_args(args)
    seq = SequenceReader(args.sequence)
    result = run_sequence(seq, config, progress=args.verbose)
    report = build_report(result, profile=args.profile or evaluate)
    if evaluate:
        if not seq.has_gt_labels():
            print("error: sequence has no labels/ directory for evaluation",
                  file=sys.stderr)
            return 2
        ev = evaluate_clusters(result.surfel_map, result.clusters, seq,
                               num_classes=args.num_classes, macro=args.macro)
        report["iou"] = ev.to_dict()
    if args.out:
        write_report(args.out, report)
        print(f"wrote {args.out}")
    if args.ply:
        color_ids = None if args.color == "segments" else _cluster_color_ids(result)
        export_ply(result.surfel_map, args.ply, color_ids)
        print(f"wrote {args.ply} ({len(result.surfel_map)} surfels)")
    if args.clusters_csv:
        dump_clusters_csv(result.clusters, args.clusters_csv)
    if getattr(args, "dump_graph", None):
        from .clustering import build_graph, dump_graph_csv
        graph = build_graph(result.table.records, result.num_classes,
                            eta=config.eta, prune=config.mcl_prune)
        dump_graph_csv(graph, args.dump_graph)
    if evaluate:
        print(f"mean IoU: {report['iou']['mean_iou']:.4f}")
    return 0


def cmd_run(args):
    return _run_common(args, evaluate=False)


def cmd_evaluate(args):
    return _run_common(args, evaluate=True)


def cmd_export_ply(args):
    config = _config_from_args(args)
    result = run_sequence(SequenceReader(args.sequence), config, progress=args.verbose)
    color_ids = None if args.color == "segments" else _cluster_color_ids(result)
    export_ply(result.surfel_map, args.out_ply, color_ids)
    print(f"wrote {args.out_ply} ({len(result.surfel_map)} surfels)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="segmap",
        description="Incremental segmented 3D mapping with object class discovery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic RGBD sequence")
    p.add_argument("out_dir")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--resolution", default="320x240")
    p.add_argument("--noise", action="store_true", help="enable depth sensor noise")
    p.add_argument("--noise-k", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene", help="render this scene JSON instead of the demo room")
    p.add_argument("--save-scene", help="write the scene spec JSON here")
    p.add_argument("--no-features", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the pipeline over a sequence")
    p.add_argument("sequence")
    p.add_argument("--out", default="report.json")
    p.add_argument("--ply", default=None)
    p.add_argument("--color", choices=["segments", "clusters"], default="clusters")
    p.add_argument("--clusters-csv", default=None)
    p.add_argument("--dump-graph", default=None,
                   help="write the similarity graph as sparse triplet CSV")
    p.add_argument("--profile", action="store_true",
                   help="include wall-clock timing in the report")
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="run the pipeline and score IoU against labels/")
    p.add_argument("sequence")
    p.add_argument("--out", default="report.json")
    p.add_argument("--ply", default=None)
    p.add_argument("--color", choices=["segments", "clusters"], default="clusters")
    p.add_argument("--clusters-csv", default=None)
    p.add_argument("--num-classes", type=int, default=8,
                   help="ground-truth class count")
    p.add_argument("--macro", action="store_true",
                   help="per-frame macro-averaged IoU instead of micro")
    p.add_argument("--profile", action="store_true", default=True,
                   help=argparse.SUPPRESS)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-ply", help="run the pipeline and export the map as PLY")
    p.add_argument("sequence")
    p.add_argument("out_ply")
    p.add_argument("--color", choices=["segments", "clusters"], default="segments")
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_ply)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
