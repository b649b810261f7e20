"""
Command-line entry point: `python -m app <synth|detect|identify|sweep> ...`.

Flags override the environment defaults from app.config. Failures are logged
and mapped to exit codes: 2 input error, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import os
from dataclasses import replace
from typing import List, Optional, Sequence

from .config import LOG_LEVEL, DetectionSettings, IdentifySettings, SweepSettings, configure_logging
from .detect import write_rois_csv, write_score_map
from .errors import HyperspectralError
from .identify import write_identifications_csv
from .report import FORMATS, emit_report, parse_formats
from .scene_synth import generate_scene, load_scene_spec, load_truth, standard_scene_spec, with_seed, write_scene
from .services.pipeline import PipelineService
from .sweep import parse_grid

logger = logging.getLogger("app.cli")


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cube", required=True, help="ENVI header of the scene cube")
    p.add_argument("--library", required=True, help="spectral library CSV")
    p.add_argument("--mask", default=None, help="band mask file (one 0/1 token per sensor band)")
    p.add_argument("--use-bbl", action="store_true", help="apply the header bad band list when no --mask is given")


def _add_detection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, default=None, help="ACE threshold in (-1, 1] (default 0.5)")
    p.add_argument("--cap", type=int, default=None, help="maximum ROIs kept per map (default 100)")
    p.add_argument("--order", choices=("score", "raster"), default=None, help="ROI ordering before the cap")
    p.add_argument("--squared", action="store_true", help="score with squared ACE")
    p.add_argument("--workers", type=int, default=None, help="threads for ACE scoring")


def _add_identify(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p-min", type=float, default=None, help="minimum best-class probability (default 0.5)")
    p.add_argument("--f-min", type=float, default=None, help="minimum spectral fit (default 0.5)")
    p.add_argument("--inner", type=int, default=None, help="background annulus inner half-width")
    p.add_argument("--outer", type=int, default=None, help="background annulus outer half-width")
    p.add_argument("--max-ace", type=float, default=None, help="background pixels must score below this")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app",
        description="PCA-truncation target detection: synthesize scenes, detect, identify and sweep k.",
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default from LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene, library and truth table")
    p.add_argument("--spec", default=None, help="scene spec JSON (default: the standard scene)")
    p.add_argument("--seed", type=int, default=None, help="override the scene spec seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("detect", help="ACE map and ROIs for one target at rank k")
    _add_inputs(p)
    p.add_argument("--target", required=True)
    p.add_argument("-k", type=int, required=True, help="retained principal components")
    _add_detection(p)
    p.add_argument("--out", required=True, help="output directory for score_map.hdr/.img and rois.csv")

    p = sub.add_parser("identify", help="detect, then identify every ROI")
    _add_inputs(p)
    p.add_argument("--target", required=True)
    p.add_argument("-k", type=int, required=True, help="retained principal components")
    _add_detection(p)
    _add_identify(p)
    p.add_argument("--out", required=True, help="output directory for rois.csv and identifications.csv")

    p = sub.add_parser("sweep", help="detect and identify across a grid of k")
    _add_inputs(p)
    p.add_argument("--targets", required=True, help="comma-separated target names")
    p.add_argument("--grid", default=None, help="start:stop[:step] or comma list (default 5:bands:5)")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--formats", default=",".join(FORMATS), help="comma list of csv,json,svg")
    p.add_argument("--radius", type=int, default=None, help="track/truth match radius in pixels (default 3)")
    p.add_argument("--metric", choices=("chebyshev", "euclidean"), default=None)
    p.add_argument("--truth", default=None, help="truth.csv for ground-truth accuracy")
    timing = p.add_mutually_exclusive_group()
    timing.add_argument("--timing", action="store_true", help="record wall_ms; reports then differ between runs")
    timing.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 even when RECORD_TIMING is set")
    _add_detection(p)
    _add_identify(p)
    return parser


def _pick(**overrides):
    return {k: v for k, v in overrides.items() if v is not None}


def _detection(args: argparse.Namespace) -> DetectionSettings:
    return replace(
        DetectionSettings(),
        **_pick(
            threshold=args.threshold,
            cap=args.cap,
            order=args.order,
            squared=True if args.squared else None,
            workers=args.workers,
        ),
    )


def _identification(args: argparse.Namespace) -> IdentifySettings:
    return replace(
        IdentifySettings(),
        **_pick(p_min=args.p_min, f_min=args.f_min, inner=args.inner, outer=args.outer, max_ace=args.max_ace),
    )


def _timing(args: argparse.Namespace) -> Optional[bool]:
    if args.timing:
        return True
    return False if args.no_timing else None


def _cmd_synth(args: argparse.Namespace) -> List[str]:
    spec = load_scene_spec(args.spec) if args.spec else standard_scene_spec()
    if args.seed is not None:
        spec = with_seed(spec, args.seed)
    cube, library, truth = generate_scene(spec)
    return list(write_scene(args.out, cube, library, truth).values())


def _cmd_detect(args: argparse.Namespace, pipeline: PipelineService) -> List[str]:
    inputs = pipeline.load_inputs(args.cube, args.library, mask_path=args.mask, use_bbl=args.use_bbl)
    found = pipeline.detect(inputs, args.target, args.k, _detection(args))
    score_path = os.path.join(args.out, "score_map.hdr")
    write_score_map(found.score_map, score_path)
    rois_path = os.path.join(args.out, "rois.csv")
    write_rois_csv(found.rois, rois_path)
    return [score_path, rois_path]


def _cmd_identify(args: argparse.Namespace, pipeline: PipelineService) -> List[str]:
    inputs = pipeline.load_inputs(args.cube, args.library, mask_path=args.mask, use_bbl=args.use_bbl)
    outcome = pipeline.identify(inputs, args.target, args.k, _detection(args), _identification(args))
    rois_path = os.path.join(args.out, "rois.csv")
    write_rois_csv(outcome.rois, rois_path)
    ids_path = os.path.join(args.out, "identifications.csv")
    write_identifications_csv(outcome.results, ids_path)
    return [rois_path, ids_path]


def _cmd_sweep(args: argparse.Namespace, pipeline: PipelineService) -> List[str]:
    formats = parse_formats(args.formats)
    settings = replace(
        SweepSettings(),
        detection=_detection(args),
        identify=_identification(args),
        **_pick(radius=args.radius, metric=args.metric, record_timing=_timing(args)),
    )
    grid = parse_grid(args.grid) if args.grid else None
    truth = load_truth(args.truth) if args.truth else None
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    inputs = pipeline.load_inputs(args.cube, args.library, mask_path=args.mask, use_bbl=args.use_bbl)
    outcome = pipeline.sweep(inputs, targets, grid, settings, truth)
    return emit_report(
        outcome.result.report,
        outcome.tracks,
        args.out,
        formats,
        outcome.accuracy,
        nontarget_tracks=outcome.nontarget_tracks,
        overlay=outcome.result.overlay,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    pipeline = PipelineService()
    try:
        if args.command == "synth":
            written = _cmd_synth(args)
        elif args.command == "detect":
            written = _cmd_detect(args, pipeline)
        elif args.command == "identify":
            written = _cmd_identify(args, pipeline)
        else:
            written = _cmd_sweep(args, pipeline)
    except HyperspectralError as e:
        logger.error("%s failed: %s: %s", args.command, type(e).__name__, e.message)
        return e.exit_code
    for path in written:
        print(path)
    return 0


__all__ = ["build_parser", "main"]
