"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import configparser
import dataclasses
import hashlib
import logging
import multiprocessing
import os
import re
import time
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import yaml
from tqdm import tqdm

from . import __version__
from .data.scene_data import load_scene
from .data.synthgen import (
    GroundTruth,
    SceneSpec,
    get_scene,
    ground_truth_cloud,
    render,
)
from .data.transforms import downsample_view
from .evaluate import (
    Metrics,
    cloud_metrics,
    depth_error_stats,
    relative_depth_accuracy,
    scaled_thresholds,
)
from .fusion import FusionParams, PointCloud, fuse
from .geom import CameraView
from .icrefine import RefineConfig, refine, superpixels
from .jhfilter import FilterConfig, ScoreMap, joint_filter
from .pmstereo import HypothesisMap, PatchMatchConfig, PixelState, run_patchmatch
from .texseg import (
    SegConfig,
    hough_lines,
    planarize_textureless,
    rasterize_segments,
    roberts_edges,
    segment_textureless,
)
from .utils import (
    depth_preview,
    discard_overlay,
    lines_overlay,
    read_pfm,
    region_colors,
    save_png,
    write_pfm,
    write_ply,
)

SEED_ENV = "TSAR_SEED"
MANIFEST = "manifest.yaml"
CLOUD = "cloud.ply"

SECTIONS = {
    "patchmatch": PatchMatchConfig,
    "filter": FilterConfig,
    "refine": RefineConfig,
    "segmentation": SegConfig,
    "fusion": FusionParams,
}

# fields that locate inputs and outputs but do not change results
IO_FIELDS = (
    "input_dir",
    "scene",
    "output_dir",
    "jobs",
    "dump_filter",
    "dump_superpixels",
    "dump_segmentation",
)

BOOL_VALUES = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


class ParseError(ValueError):
    """Raised for malformed or invalid configuration files."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


class UnknownKeyError(ParseError):
    """Raised for configuration keys or sections that do not exist."""


@dataclass(frozen=True)
class PipelineConfig:
    """
    Configuration of a full reconstruction run.

    Args:
        patchmatch: PatchMatch parameters.
        filter: Joint hypothesis filter parameters.
        refine: Iterative correlation refinement parameters.
        segmentation: Textureless segmentation parameters.
        fusion: Fusion thresholds.
        enable_jhf: Run the joint hypothesis filter.
        enable_icr: Run iterative correlation refinement.
        enable_ts: Run textureless segmentation and planarization.
        downsample: Image downsampling factor, one of 1, 2, 4.
        input_dir: Scene directory with images and a camera file.
        scene: Name of a synthetic scene, used when no input_dir is given.
        output_dir: Directory receiving all outputs.
        rng_seed: Master seed; per-view seeds are derived from it.
        jobs: Number of views processed concurrently.
        auto_depth_range: Use a synthetic scene's depth range for PatchMatch.
        dump_filter: Write joint filter scores and discard masks.
        dump_superpixels: Write superpixel visualizations.
        dump_segmentation: Write edge, line and region visualizations.
    """

    patchmatch: PatchMatchConfig = field(default_factory=PatchMatchConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    segmentation: SegConfig = field(default_factory=SegConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    enable_jhf: bool = True
    enable_icr: bool = True
    enable_ts: bool = True
    downsample: int = 2
    input_dir: Optional[str] = None
    scene: Optional[str] = None
    output_dir: str = "outputs"
    rng_seed: int = 0
    jobs: int = 1
    auto_depth_range: bool = True
    dump_filter: bool = False
    dump_superpixels: bool = False
    dump_segmentation: bool = False

    def __post_init__(self):
        if self.downsample not in (1, 2, 4):
            raise ValueError("downsample must be 1, 2 or 4.")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1.")


ABLATIONS: Dict[str, Callable[[PipelineConfig], PipelineConfig]] = {
    "full": lambda c: c,
    "baseline": lambda c: replace(c, enable_jhf=False, enable_icr=False, enable_ts=False),
    "wo_jhf": lambda c: replace(c, enable_jhf=False),
    "wo_dd": lambda c: replace(c, filter=replace(c.filter, use_discontinuity=False)),
    "wo_ce": lambda c: replace(c, filter=replace(c.filter, use_confidence=False)),
    "wo_icr": lambda c: replace(c, enable_icr=False),
    "wo_sp": lambda c: replace(c, refine=replace(c.refine, use_planarization=False)),
    "wo_wmf": lambda c: replace(c, refine=replace(c.refine, use_wmf=False)),
    "wo_ts": lambda c: replace(c, enable_ts=False),
}


def full_config(config: PipelineConfig) -> PipelineConfig:
    """Every stage and sub-stage switched on."""
    return replace(
        config,
        enable_jhf=True,
        enable_icr=True,
        enable_ts=True,
        filter=replace(config.filter, use_confidence=True, use_discontinuity=True),
        refine=replace(config.refine, use_planarization=True, use_wmf=True),
    )


def ablation_config(config: PipelineConfig, variant: str) -> PipelineConfig:
    if variant not in ABLATIONS:
        raise ValueError(f"Unknown ablation {variant}; choose from {list(ABLATIONS)}.")

    return ABLATIONS[variant](full_config(config))


def convert_value(value: str, annotation: Any) -> Any:
    """Convert a config string to the type of a dataclass field."""
    if typing.get_origin(annotation) is Union:
        if value.strip().lower() in ("", "none"):
            return None
        annotation = next(a for a in typing.get_args(annotation) if a is not type(None))
    value = value.strip()
    if annotation is bool:
        if value.lower() not in BOOL_VALUES:
            raise ValueError(f"invalid boolean {value!r}")
        return BOOL_VALUES[value.lower()]
    if annotation is int:
        return int(value)
    if annotation is float:
        return float(value)
    if annotation is str:
        return value

    raise ValueError(f"unsupported field type {annotation}")


def key_line_numbers(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every ``key = value`` line, keyed by (section, key)."""
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            section = header.group(1).strip().lower()
            lines[(section, "")] = lineno
            continue
        match = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", stripped)
        if match:
            lines[(section, match.group(1).strip().lower())] = lineno

    return lines


def build_section(
    cls: type, section: str, values: Mapping[str, str], lines: Dict[Tuple[str, str], int]
) -> Any:
    """Instantiate a config dataclass from string values, reporting line numbers."""
    hints = typing.get_type_hints(cls)
    names = {
        f.name
        for f in dataclasses.fields(cls)
        if hints[f.name] in (bool, int, float, str)
        or typing.get_origin(hints[f.name]) is Union
    }
    kwargs = {}
    for key, raw in values.items():
        lineno = lines.get((section, key))
        if key not in names:
            raise UnknownKeyError(f"unknown key {key!r} in [{section}]", lineno)
        try:
            kwargs[key] = convert_value(raw, hints[key])
        except ValueError as e:
            raise ParseError(f"[{section}] {key}: {e}", lineno) from e

    try:
        return cls(**kwargs)
    except ValueError as e:
        # blame the first key whose removal makes the section valid
        for key in kwargs:
            rest = {k: v for k, v in kwargs.items() if k != key}
            try:
                cls(**rest)
            except ValueError:
                continue
            raise ParseError(f"[{section}] {key}: {e}", lines.get((section, key))) from e
        raise ParseError(f"[{section}]: {e}", lines.get((section, ""))) from e


def parse_config_text(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ParseError(str(e).splitlines()[0], getattr(e, "lineno", None)) from e

    lines = key_line_numbers(text)
    stages = {}
    for section in parser.sections():
        if section != "pipeline" and section not in SECTIONS:
            raise UnknownKeyError(
                f"unknown section [{section}]", lines.get((section.lower(), ""))
            )
    for name, cls in SECTIONS.items():
        values = dict(parser[name]) if parser.has_section(name) else {}
        stages[name] = build_section(cls, name, values, lines)
    values = dict(parser["pipeline"]) if parser.has_section("pipeline") else {}
    for key in SECTIONS:
        if key in values:
            raise UnknownKeyError(
                f"unknown key {key!r} in [pipeline]", lines.get(("pipeline", key))
            )
    pipeline = build_section(PipelineConfig, "pipeline", values, lines)

    return replace(pipeline, **stages)


def parse_config(path: Union[str, Path]) -> PipelineConfig:
    """
    Read an INI-style configuration file.

    Sections are ``[pipeline]``, ``[patchmatch]``, ``[filter]``, ``[refine]``,
    ``[segmentation]`` and ``[fusion]``; missing keys keep their defaults.

    Args:
        path: Configuration file.

    Returns:
        The pipeline configuration.

    Raises:
        ParseError: Malformed lines, bad values or violated invariants.
        UnknownKeyError: Unknown sections or keys.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file {path} does not exist.")

    return parse_config_text(path.read_text())


def resolve_config(
    config: PipelineConfig,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Mapping[str, str] = os.environ,
) -> PipelineConfig:
    """Apply command-line overrides, then the seed environment variable."""
    if overrides:
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    if environ.get(SEED_ENV):
        try:
            seed = int(environ[SEED_ENV])
        except ValueError as e:
            raise ParseError(f"{SEED_ENV} must be an integer") from e
        config = replace(config, rng_seed=seed)

    return config


def effective_parameters(config: PipelineConfig) -> Dict[str, Any]:
    params = dataclasses.asdict(config)
    for name in IO_FIELDS:
        params.pop(name)

    return params


def config_hash(config: PipelineConfig) -> str:
    """Hash of every parameter that can change the results."""
    dump = yaml.safe_dump(effective_parameters(config), sort_keys=True)

    return hashlib.sha256(dump.encode("utf-8")).hexdigest()


def view_seed(master: int, view_id: int) -> int:
    return int(np.random.SeedSequence([master, view_id]).generate_state(1)[0])


class ViewTask(NamedTuple):
    index: int
    views: Sequence[CameraView]
    config: PipelineConfig


class ViewResult(NamedTuple):
    view_id: int
    hmap: HypothesisMap
    scores: Optional[ScoreMap]
    timings: Dict[str, float]
    counts: Dict[str, Dict[str, int]]


class Reconstruction(NamedTuple):
    config: PipelineConfig
    views: List[CameraView]
    results: List[ViewResult]
    spec: Optional[SceneSpec]
    gt: Optional[GroundTruth]

    @property
    def maps(self) -> List[HypothesisMap]:
        return [r.hmap for r in self.results]


class PipelineResult(NamedTuple):
    status: int
    manifest: Dict[str, Any]
    views: List[CameraView]
    maps: List[HypothesisMap]
    cloud: PointCloud


def process_view(task: ViewTask) -> ViewResult:
    """Run every enabled per-view stage on one reference view."""
    config = task.config
    ref = task.views[task.index]
    srcs = [v for i, v in enumerate(task.views) if i != task.index]
    seed = view_seed(config.rng_seed, ref.id)
    out_dir = Path(config.output_dir)
    timings: Dict[str, float] = {}
    counts: Dict[str, Dict[str, int]] = {}

    start = time.perf_counter()
    hmap = run_patchmatch(ref, srcs, replace(config.patchmatch, rng_seed=seed))
    timings["patchmatch"] = time.perf_counter() - start
    counts["patchmatch"] = hmap.state_counts()

    scores = None
    if config.enable_jhf:
        start = time.perf_counter()
        hmap, scores = joint_filter(hmap, config.filter)
        timings["jhf"] = time.perf_counter() - start
        counts["jhf"] = hmap.state_counts()
        if config.dump_filter:
            write_pfm(out_dir / f"score_{ref.id:03d}.pfm", scores.aggregate)
            save_png(
                out_dir / f"discard_{ref.id:03d}.png",
                discard_overlay(ref.image, hmap.state == PixelState.DISCARDED),
            )

    refine_cfg = replace(config.refine, rng_seed=seed)
    if config.enable_icr:
        start = time.perf_counter()
        hmap = refine(hmap, ref, refine_cfg, scores=scores)
        timings["icr"] = time.perf_counter() - start
        counts["icr"] = hmap.state_counts()
        if config.dump_superpixels:
            labels = superpixels(ref, refine_cfg).labels
            save_png(
                out_dir / f"superpixels_{ref.id:03d}.png",
                region_colors(ref.image, labels),
            )

    if config.enable_ts:
        start = time.perf_counter()
        regions, flags = segment_textureless(ref, config.segmentation)
        hmap = planarize_textureless(
            hmap, ref, regions, flags, config.segmentation, refine_cfg, scores=scores
        )
        timings["ts"] = time.perf_counter() - start
        counts["ts"] = hmap.state_counts()
        if config.dump_segmentation:
            edges = roberts_edges(ref.image, config.segmentation)
            segments = hough_lines(edges, config.segmentation)
            peak = max(float(edges.magnitude.max()), 1e-12)
            save_png(out_dir / f"edges_{ref.id:03d}.png", edges.magnitude / peak)
            save_png(
                out_dir / f"lines_{ref.id:03d}.png",
                lines_overlay(ref.image, rasterize_segments(segments, ref.shape)),
            )
            save_png(
                out_dir / f"regions_{ref.id:03d}.png",
                region_colors(ref.image, regions.labels, flags),
            )

    return ViewResult(ref.id, hmap, scores, timings, counts)


def write_view_outputs(
    out_dir: Path, view_id: int, hmap: HypothesisMap, cfg: PatchMatchConfig
):
    write_pfm(out_dir / f"depth_{view_id:03d}.pfm", hmap.depth)
    write_pfm(out_dir / f"normal_{view_id:03d}.pfm", hmap.normal)
    write_pfm(out_dir / f"cost_{view_id:03d}.pfm", hmap.cost)
    write_pfm(out_dir / f"state_{view_id:03d}.pfm", hmap.state.astype(np.float32))
    save_png(
        out_dir / f"depth_{view_id:03d}.png",
        depth_preview(
            hmap.depth, cfg.depth_min, cfg.depth_max, hmap.state == PixelState.DISCARDED
        ),
    )


def read_view_outputs(out_dir: Union[str, Path], view_id: int) -> HypothesisMap:
    """Read the depth, normal, cost and state maps written for one view."""
    out_dir = Path(out_dir)
    depth = read_pfm(out_dir / f"depth_{view_id:03d}.pfm").astype(np.float64)
    normal = read_pfm(out_dir / f"normal_{view_id:03d}.pfm").astype(np.float64)
    cost = read_pfm(out_dir / f"cost_{view_id:03d}.pfm").astype(np.float64)
    state = read_pfm(out_dir / f"state_{view_id:03d}.pfm").astype(np.uint8)

    return HypothesisMap(depth, normal, cost, state)


def load_views(
    config: PipelineConfig,
) -> Tuple[List[CameraView], Optional[SceneSpec], Optional[GroundTruth]]:
    """
    Views at processing resolution, plus the scene and its ground truth at the
    same resolution for synthetic inputs.
    """
    if config.input_dir is not None:
        views = load_scene(config.input_dir)
        spec, gt = None, None
    elif config.scene is not None:
        spec = get_scene(config.scene)
        views, _ = render(spec)
        _, gt = render(spec.scaled(config.downsample))
    else:
        raise ValueError("Either input_dir or scene must be given.")
    if len(views) < 2:
        raise ValueError(f"At least two views are required, found {len(views)}.")

    return [downsample_view(v, config.downsample) for v in views], spec, gt


def evaluate_run(
    views: Sequence[CameraView],
    maps: Sequence[HypothesisMap],
    cloud: PointCloud,
    used: Sequence[np.ndarray],
    spec: SceneSpec,
    gt: GroundTruth,
) -> Dict[str, Any]:
    """Reference-view depth metrics, per-view running statistics and cloud metrics."""
    thresholds = scaled_thresholds(spec.depth_range)
    report: Dict[str, Any] = {}
    ref_hit = gt.hit(0)
    masks = {
        "textureless": gt.textureless[0] & ref_hit,
        "textured": ~gt.textureless[0] & ref_hit,
    }
    for name, mask in masks.items():
        if mask.any():
            report[f"ref_{name}_acc"] = relative_depth_accuracy(
                maps[0], gt.depth[0], mask
            )
    stats = depth_error_stats(maps[0], gt.depth[0], ref_hit, thresholds)
    report["ref_depth_error"] = {f"{t:.4g}": v for t, v in stats.frac_below.items()}
    fused = depth_error_stats(
        maps[0], gt.depth[0], ref_hit, thresholds, fused_mask=used[0]
    )
    report["ref_fused_depth_error"] = {
        f"{t:.4g}": v for t, v in fused.frac_below.items()
    }

    metrics = Metrics(["rel_acc"])
    for i, hmap in enumerate(maps):
        metrics.push({"rel_acc": relative_depth_accuracy(hmap, gt.depth[i], gt.hit(i))})
    report["views_rel_acc"] = repr(metrics)

    if len(cloud) > 0:
        gt_cloud = ground_truth_cloud(views, gt, stride=4)
        report["cloud"] = cloud_metrics(cloud, gt_cloud, thresholds[-1])._asdict()
    logging.info(f"evaluation: {report}")

    return report


def reconstruct(config: PipelineConfig) -> Reconstruction:
    """
    Estimate and write the hypothesis map of every view.

    Every view is downsampled and taken as reference once: PatchMatch, then
    the enabled joint filter, refinement and textureless planarization.

    Args:
        config: Resolved pipeline configuration.

    Returns:
        The effective configuration, the processed views and their results.
    """
    views, spec, gt = load_views(config)
    if spec is not None and config.auto_depth_range:
        config = replace(
            config,
            patchmatch=replace(
                config.patchmatch,
                depth_min=spec.depth_range[0],
                depth_max=spec.depth_range[1],
            ),
        )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.info(
        f"config hash {config_hash(config)}, {len(views)} views at "
        f"1/{config.downsample} resolution"
    )

    tasks = [ViewTask(i, views, config) for i in range(len(views))]
    start = time.perf_counter()
    if config.jobs == 1:
        results = [process_view(t) for t in tqdm(tasks, desc="views")]
    else:
        with multiprocessing.Pool(config.jobs) as pool:
            results = list(
                tqdm(pool.imap(process_view, tasks), total=len(tasks), desc="views")
            )
    logging.info(f"per-view stages took {time.perf_counter() - start:.1f} s")

    for result in results:
        write_view_outputs(out_dir, result.view_id, result.hmap, config.patchmatch)

    return Reconstruction(config, views, results, spec, gt)


def write_manifest(out_dir: Union[str, Path], manifest: Dict[str, Any]):
    with open(Path(out_dir) / MANIFEST, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """
    Run the full reconstruction.

    The per-view maps of ``reconstruct`` are fused into ``cloud.ply``; a
    ``manifest.yaml`` records the config hash, timings, pixel state counts
    and, for synthetic scenes, the evaluation.

    Args:
        config: Resolved pipeline configuration.

    Returns:
        Exit status, manifest, views, maps and the fused cloud.
    """
    rec = reconstruct(config)
    config = rec.config
    out_dir = Path(config.output_dir)

    start = time.perf_counter()
    cloud, used = fuse(rec.views, rec.maps, config.fusion, return_masks=True)
    fusion_time = time.perf_counter() - start
    write_ply(out_dir / CLOUD, cloud)

    manifest: Dict[str, Any] = {
        "version": __version__,
        "config_hash": config_hash(config),
        "config": effective_parameters(config),
        "views": {
            int(r.view_id): {"timings": r.timings, "state_counts": r.counts}
            for r in rec.results
        },
        "fusion": {"points": len(cloud), "time": fusion_time},
    }
    if rec.spec is not None and rec.gt is not None:
        manifest["evaluation"] = evaluate_run(
            rec.views, rec.maps, cloud, used, rec.spec, rec.gt
        )
    write_manifest(out_dir, manifest)

    return PipelineResult(0, manifest, rec.views, rec.maps, cloud)
