"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import json
import logging
import pathlib
import sys
import time
from argparse import ArgumentParser, Namespace
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from .data.scene_data import fetch_dir, load_scene, save_scene
from .data.synthgen import SCENES, get_scene, ground_truth_cloud, render
from .data.transforms import downsample_view
from .evaluate import cloud_metrics, depth_error_stats
from .fusion import fuse
from .pipeline import (
    ABLATIONS,
    CLOUD,
    PipelineConfig,
    ablation_config,
    config_hash,
    effective_parameters,
    parse_config,
    read_view_outputs,
    reconstruct,
    resolve_config,
    run_pipeline,
    write_manifest,
)
from .pmstereo import HypothesisMap, PixelState
from .utils import load_png, read_pfm, read_ply, save_png, write_pfm, write_ply

LOG_FILE = "tsarmvs.log"
ABLATION_TABLE = "ablation"

# every error of the package is a ValueError; missing files are OSErrors
HANDLED_ERRORS = (ValueError, OSError)


def setup_logging(output_dir: Optional[pathlib.Path], debug: bool = False):
    """Send root logger output to stdout and to a log file in ``output_dir``."""
    root = logging.getLogger()
    root.handlers = []

    if debug:
        root.setLevel(logging.DEBUG)
    else:
        root.setLevel(logging.INFO)

    formatter = logging.Formatter("%(asctime)s | %(message)s")

    ch = logging.StreamHandler(sys.stdout)
    ch.setFormatter(formatter)
    root.addHandler(ch)

    # send log to a file as well
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(output_dir / LOG_FILE, "w")
        fh.setFormatter(formatter)
        root.addHandler(fh)


def pipeline_config(args: Namespace) -> PipelineConfig:
    """Config file values, overridden by flags, then by ``TSAR_SEED``."""
    config = parse_config(args.config) if args.config is not None else PipelineConfig()
    overrides: Dict[str, Any] = {
        "input_dir": str(args.input_dir) if args.input_dir is not None else None,
        "scene": args.scene,
        "output_dir": str(args.output_dir) if args.output_dir is not None else None,
        "downsample": args.downsample,
        "rng_seed": args.seed,
        "jobs": args.jobs,
        "enable_jhf": args.enable_jhf,
        "enable_icr": args.enable_icr,
        "enable_ts": args.enable_ts,
        "dump_filter": args.dump_filter,
        "dump_superpixels": args.dump_superpixels,
        "dump_segmentation": args.dump_segmentation,
    }
    if args.output_dir is None and args.config is None:
        overrides["output_dir"] = str(fetch_dir("output_path"))

    return resolve_config(config, overrides)


def run_synth(args: Namespace) -> int:
    """Render a named scene into a scene directory with its ground truth."""
    spec = get_scene(args.scene, rng_seed=args.seed)
    views, gt = render(spec)
    save_scene(args.output_dir, views)
    for i, view in enumerate(views):
        write_pfm(args.output_dir / f"gt_depth_{view.id:03d}.pfm", gt.depth[i])
        write_pfm(args.output_dir / f"gt_normal_{view.id:03d}.pfm", gt.normal[i])
        save_png(
            args.output_dir / f"gt_textureless_{view.id:03d}.png",
            gt.textureless[i].astype(np.float64),
        )
    write_ply(args.output_dir / "gt_cloud.ply", ground_truth_cloud(views, gt, stride=2))
    with open(args.output_dir / "scene.yaml", "w") as f:
        yaml.safe_dump(
            {
                "name": spec.name,
                "depth_range": list(spec.depth_range),
                "noise_sigma": spec.noise_sigma,
                "rng_seed": spec.rng_seed,
            },
            f,
        )
    logging.info(f"rendered {spec.name} with {len(views)} views to {args.output_dir}")

    return 0


def run_reconstruct(args: Namespace) -> int:
    rec = reconstruct(pipeline_config(args))
    manifest = {
        "config_hash": config_hash(rec.config),
        "config": effective_parameters(rec.config),
        "views": {
            int(r.view_id): {"timings": r.timings, "state_counts": r.counts}
            for r in rec.results
        },
    }
    write_manifest(rec.config.output_dir, manifest)

    return 0


def run_fuse(args: Namespace) -> int:
    """Fuse maps written by ``reconstruct`` for a scene directory."""
    views = [downsample_view(v, args.downsample) for v in load_scene(args.input_dir)]
    maps = [read_view_outputs(args.maps_dir, v.id) for v in views]
    for view, hmap in zip(views, maps):
        if hmap.depth.shape != view.shape:
            raise ValueError(
                f"Map of view {view.id} has shape {hmap.depth.shape}, view has "
                f"{view.shape}; check --downsample."
            )
    params = parse_config(args.config).fusion if args.config else PipelineConfig().fusion
    start = time.perf_counter()
    cloud = fuse(views, maps, params)
    logging.info(f"fused {len(cloud)} points in {time.perf_counter() - start:.1f} s")
    write_ply(args.output, cloud)

    return 0


def report_path(args: Namespace, data_path: pathlib.Path) -> pathlib.Path:
    """``--report`` if given, else ``<stem>_eval.json`` next to ``data_path``."""
    if args.report is not None:
        return args.report

    return data_path.with_name(f"{data_path.stem}_eval.json")


def write_report(path: pathlib.Path, report: Dict[str, Any]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
    logging.info(f"wrote report to {path}")


def run_eval(args: Namespace) -> int:
    metrics = cloud_metrics(read_ply(args.pred), read_ply(args.gt), args.tol)
    logging.info(
        f"accuracy = {metrics.accuracy:.4f} completeness = {metrics.completeness:.4f} "
        f"f-score = {metrics.f_score:.4f} at tolerance {metrics.tolerance:g}"
    )
    write_report(
        report_path(args, args.pred),
        {"pred": str(args.pred), "gt": str(args.gt), **metrics._asdict()},
    )

    return 0


def run_eval_depth(args: Namespace) -> int:
    depth = read_pfm(args.depth).astype(np.float64)
    gt_depth = read_pfm(args.gt_depth).astype(np.float64)
    if args.state is not None:
        state = read_pfm(args.state).astype(np.uint8)
    else:
        state = np.full(depth.shape, PixelState.CONFIDENT, dtype=np.uint8)
    hmap = HypothesisMap(
        depth, np.zeros(depth.shape + (3,)), np.zeros(depth.shape), state
    )
    valid = gt_depth > 0
    if args.mask is not None:
        valid &= load_png(args.mask) > 0.5
    stats = depth_error_stats(hmap, gt_depth, valid, args.thresholds)
    for threshold, frac in stats.frac_below.items():
        logging.info(f"error < {threshold:g}: {frac:.4f}")
    write_report(
        report_path(args, args.depth),
        {
            "depth": str(args.depth),
            "gt_depth": str(args.gt_depth),
            "denominator": "valid ground-truth pixels; discarded pixels count as failures",
            "valid_pixels": int(valid.sum()),
            "frac_below": {f"{t:g}": v for t, v in stats.frac_below.items()},
        },
    )

    return 0


def run_all(args: Namespace) -> int:
    config = pipeline_config(args)
    result = run_pipeline(config)
    logging.info(
        f"wrote {result.manifest['fusion']['points']} points to "
        f"{pathlib.Path(config.output_dir) / CLOUD}"
    )

    return result.status


def ablation_row(variant: str, manifest: Dict[str, Any]) -> Dict[str, Any]:
    row: Dict[str, Any] = {"variant": variant, "points": manifest["fusion"]["points"]}
    evaluation = manifest.get("evaluation", {})
    for key in ("ref_textureless_acc", "ref_textured_acc"):
        if key in evaluation:
            row[key] = evaluation[key]
    for threshold, frac in evaluation.get("ref_depth_error", {}).items():
        row[f"err<{threshold}"] = frac
    if "cloud" in evaluation:
        row["f_score"] = evaluation["cloud"]["f_score"]

    return row


def run_ablate(args: Namespace) -> int:
    """Run every ablation variant and write a comparison table."""
    base = pipeline_config(args)
    variants: Sequence[str] = args.variants or list(ABLATIONS)
    rows: List[Dict[str, Any]] = []
    for variant in variants:
        config = ablation_config(base, variant)
        config = replace(config, output_dir=str(pathlib.Path(base.output_dir) / variant))
        logging.info(f"ablation {variant}")
        rows.append(ablation_row(variant, run_pipeline(config).manifest))

    table = pd.DataFrame(rows).set_index("variant")
    out_dir = pathlib.Path(base.output_dir)
    table.to_csv(out_dir / f"{ABLATION_TABLE}.csv")
    with open(out_dir / f"{ABLATION_TABLE}.txt", "w") as f:
        f.write(table.to_string(float_format="{:.4f}".format) + "\n")
    logging.info("\n" + table.to_string(float_format="{:.4f}".format))

    return 0


def add_pipeline_args(parser: ArgumentParser):
    parser.add_argument(
        "--config", type=pathlib.Path, default=None, help="INI configuration file"
    )
    parser.add_argument(
        "--input-dir",
        "--input_dir",
        dest="input_dir",
        type=pathlib.Path,
        default=None,
        help="Scene directory with cameras.txt and images/",
    )
    parser.add_argument(
        "--scene",
        choices=sorted(SCENES),
        default=None,
        help="Synthetic scene, used when no input directory is given",
    )
    parser.add_argument(
        "--out-dir",
        "--output_dir",
        dest="output_dir",
        type=pathlib.Path,
        default=None,
        help="Path to save outputs to",
    )
    parser.add_argument("--downsample", choices=[1, 2, 4], type=int, default=None)
    parser.add_argument("--seed", type=int, default=None, help="Master random seed")
    parser.add_argument(
        "--jobs", type=int, default=None, help="Number of views processed at once"
    )
    for stage in ("jhf", "icr", "ts"):
        parser.add_argument(
            f"--no-{stage}",
            f"--no_{stage}",
            dest=f"enable_{stage}",
            action="store_const",
            const=False,
            default=None,
            help=f"Disable the {stage.upper()} stage",
        )
    for dump in ("filter", "superpixels", "segmentation"):
        parser.add_argument(
            f"--dump-{dump}",
            f"--dump_{dump}",
            dest=f"dump_{dump}",
            action="store_const",
            const=True,
            default=None,
            help=f"Write {dump} visualizations",
        )


def create_arg_parser():
    parser = ArgumentParser(
        prog="tsarmvs", description="Textureless-aware multi-view stereo"
    )
    parser.add_argument("--debug", action="store_true", help="Log debug messages")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="Render a synthetic scene")
    synth.add_argument("--scene", choices=sorted(SCENES), required=True)
    synth.add_argument(
        "--out-dir", "--output_dir", dest="output_dir", type=pathlib.Path, required=True
    )
    synth.add_argument("--seed", type=int, default=None, help="Noise seed")
    synth.set_defaults(func=run_synth)

    recon = subparsers.add_parser("reconstruct", help="Estimate per-view maps")
    add_pipeline_args(recon)
    recon.set_defaults(func=run_reconstruct)

    fuse_parser = subparsers.add_parser("fuse", help="Fuse per-view maps")
    fuse_parser.add_argument(
        "--input-dir", "--input_dir", dest="input_dir", type=pathlib.Path, required=True
    )
    fuse_parser.add_argument(
        "--maps-dir", "--maps_dir", dest="maps_dir", type=pathlib.Path, required=True
    )
    fuse_parser.add_argument(
        "--out", "--output", dest="output", type=pathlib.Path, required=True
    )
    fuse_parser.add_argument("--downsample", choices=[1, 2, 4], type=int, default=2)
    fuse_parser.add_argument("--config", type=pathlib.Path, default=None)
    fuse_parser.set_defaults(func=run_fuse)

    evaluate = subparsers.add_parser("eval", help="Point cloud metrics")
    evaluate.add_argument(
        "--pred", "--cloud", dest="pred", type=pathlib.Path, required=True
    )
    evaluate.add_argument(
        "--gt", "--gt_cloud", dest="gt", type=pathlib.Path, required=True
    )
    evaluate.add_argument(
        "--tol", "--tolerance", dest="tol", type=float, required=True
    )
    evaluate.add_argument(
        "--report", type=pathlib.Path, default=None, help="JSON report path"
    )
    evaluate.set_defaults(func=run_eval)

    eval_depth = subparsers.add_parser("eval-depth", help="Depth error fractions")
    eval_depth.add_argument("--depth", type=pathlib.Path, required=True)
    eval_depth.add_argument(
        "--gt-depth", "--gt_depth", dest="gt_depth", type=pathlib.Path, required=True
    )
    eval_depth.add_argument("--state", type=pathlib.Path, default=None)
    eval_depth.add_argument("--mask", type=pathlib.Path, default=None)
    eval_depth.add_argument(
        "--thresholds", nargs="+", type=float, default=[0.02, 0.1]
    )
    eval_depth.add_argument(
        "--report", type=pathlib.Path, default=None, help="JSON report path"
    )
    eval_depth.set_defaults(func=run_eval_depth)

    run = subparsers.add_parser("run-all", help="Reconstruct, fuse and evaluate")
    add_pipeline_args(run)
    run.set_defaults(func=run_all)

    ablate = subparsers.add_parser("ablate", help="Run the ablation variants")
    add_pipeline_args(ablate)
    ablate.add_argument("--variants", nargs="+", choices=list(ABLATIONS), default=None)
    ablate.set_defaults(func=run_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = create_arg_parser().parse_args(argv)
    log_dir = getattr(args, "output_dir", None)
    if log_dir is None and getattr(args, "output", None) is not None:
        log_dir = args.output.parent
    setup_logging(log_dir, args.debug)

    try:
        return args.func(args)
    except HANDLED_ERRORS as e:
        logging.error(f"{type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
