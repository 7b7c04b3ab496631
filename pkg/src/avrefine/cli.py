"""Command-line front end: refine, eval, synth, skeleton, graph, render.

Every command is a pure function of its inputs and configuration; rerunning
produces identical output bytes.  A run manifest is written to the output
directory even on failure, recording the error class.  Exit codes: 0 on
success, 2 for invalid input, 3 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .metrics import EvalReport, evaluate, format_table
from .raster import (
    BinaryMap,
    FormatError,
    LabelMap,
    ProbabilityMaps,
    binarize,
    load_labels,
    load_mask,
    load_probability_map,
    save_labels,
    save_mask,
    save_overlay,
    write_pfm,
)
from .refine import ConfigError, RefineConfig, refine_pipeline
from .skeleton import thin
from .synth import InfeasibleSpecError, SynthSpec, generate
from .vessel_graph import graph_to_json


def _load_config(path) -> RefineConfig:
    if path is None:
        return RefineConfig()
    try:
        return RefineConfig.from_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def cmd_refine(args) -> dict:
    cfg = _load_config(args.config)
    t0 = time.perf_counter()
    maps = ProbabilityMaps.load(args.vessel, args.artery, args.vein)
    labels, graph, _trace = refine_pipeline(maps, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overlay_path = out / "overlay.png"
    labels_path = out / "labels.png"
    graph_path = out / "graph.json"
    save_overlay(labels, overlay_path)
    save_labels(labels_path, labels)
    graph_path.write_text(graph_to_json(graph, cfg.digest()) + "\n")

    _say(args, f"refined {maps.width}x{maps.height} map: {len(graph.segments)} segments")
    return {
        "inputs": [str(args.vessel), str(args.artery), str(args.vein)],
        "config_digest": cfg.digest(),
        "outputs": [str(overlay_path), str(labels_path), str(graph_path)],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def cmd_skeleton(args) -> dict:
    t0 = time.perf_counter()
    vessel = load_probability_map(args.vessel)
    sk = thin(binarize(vessel, args.threshold), source_threshold=args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sk_path = out / "skeleton.png"
    save_mask(sk_path, BinaryMap(sk.bits))
    _say(args, f"skeleton: {int(sk.bits.sum())} pixels at threshold {args.threshold}")
    return {
        "inputs": [str(args.vessel)],
        "outputs": [str(sk_path)],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def _keypoint_overlay(graph, shape) -> np.ndarray:
    rgb = np.zeros((*shape, 3), dtype=np.uint8)
    for seg in graph.segments:
        rgb[seg.pixels[:, 1], seg.pixels[:, 0]] = (255, 255, 255)
    for kp in graph.keypoints:
        color = (0, 0, 255) if kp.kind.value == "crossing" else (255, 255, 0)
        rgb[kp.y, kp.x] = color
    return rgb


def cmd_graph(args) -> dict:
    cfg = _load_config(args.config)
    t0 = time.perf_counter()
    maps = ProbabilityMaps.load(args.vessel, args.artery, args.vein)
    from .refine import unify_labels
    from .skeleton import fuse_multiscale
    from .vessel_graph import build_graph

    skeletons = fuse_multiscale(maps.vessel, cfg.thresholds)
    support = binarize(maps.vessel, cfg.thresholds[-1])
    graph = unify_labels(build_graph(skeletons, support, cfg.cup), maps)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph_path = out / "graph.json"
    kp_path = out / "keypoints.png"
    graph_path.write_text(graph_to_json(graph, cfg.digest()) + "\n")
    rgb = _keypoint_overlay(graph, (maps.height, maps.width))
    if cfg.cup.radius > 0:
        _draw_circle(rgb, cfg.cup.center, cfg.cup.radius, (255, 0, 255))
    Image.fromarray(rgb, mode="RGB").save(kp_path, format="PNG")

    _say(args, f"graph: {len(graph.segments)} segments, {len(graph.keypoints)} keypoints")
    return {
        "inputs": [str(args.vessel), str(args.artery), str(args.vein)],
        "config_digest": cfg.digest(),
        "outputs": [str(graph_path), str(kp_path)],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def _draw_circle(rgb: np.ndarray, center, radius: float, color) -> None:
    h, w = rgb.shape[:2]
    cx, cy = center
    for t in range(max(16, int(8 * radius))):
        ang = 2 * np.pi * t / max(16, int(8 * radius))
        x = int(round(cx + radius * np.cos(ang)))
        y = int(round(cy + radius * np.sin(ang)))
        if 0 <= x < w and 0 <= y < h:
            rgb[y, x] = color


def cmd_render(args) -> dict:
    t0 = time.perf_counter()
    labels = load_labels(args.labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overlay_path = out / "overlay.png"
    save_overlay(labels, overlay_path)
    _say(args, f"rendered {labels.width}x{labels.height} overlay")
    return {
        "inputs": [str(args.labels)],
        "outputs": [str(overlay_path)],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def cmd_synth(args) -> dict:
    t0 = time.perf_counter()
    if args.spec is not None:
        with open(args.spec) as f:
            spec = SynthSpec.from_dict(json.load(f))
    else:
        spec = SynthSpec(seed=args.seed)
    maps, gt_labels, gt_vessel = generate(spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "vessel": out / "vessel.pfm",
        "artery": out / "artery.pfm",
        "vein": out / "vein.pfm",
        "gt_labels": out / "gt_labels.png",
        "gt_vessel": out / "gt_vessel.png",
    }
    write_pfm(paths["vessel"], maps.vessel)
    write_pfm(paths["artery"], maps.artery)
    write_pfm(paths["vein"], maps.vein)
    save_overlay(gt_labels, paths["gt_labels"])
    save_mask(paths["gt_vessel"], gt_vessel)

    _say(args, f"synthesized {spec.width}x{spec.height} fixture, seed {spec.seed}")
    return {
        "inputs": [] if args.spec is None else [str(args.spec)],
        "spec": spec.to_dict(),
        "outputs": [str(p) for p in paths.values()],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def _evaluate_one(pred_path, gt_path, gt_vessel_path, vessel_map_path) -> EvalReport:
    pred = load_labels(pred_path)
    gt = load_labels(gt_path)
    gt_vessel = load_mask(gt_vessel_path)
    scores = None
    if vessel_map_path is not None:
        scores = load_probability_map(vessel_map_path)
    return evaluate(pred, gt, gt_vessel, scores)


def _match_batch(pred_dir: Path, gt_dir: Path, gt_vessel_dir: Path, vessel_dir):
    names = sorted(p.name for p in pred_dir.iterdir() if p.suffix.lower() == ".png")
    if not names:
        raise ValueError(f"{pred_dir}: no PNG predictions found")
    jobs = []
    for name in names:
        gt_path = gt_dir / name
        gv_path = gt_vessel_dir / name
        if not gt_path.exists():
            raise ValueError(f"missing ground-truth file {gt_path}")
        if not gv_path.exists():
            raise ValueError(f"missing vessel ground-truth file {gv_path}")
        vm_path = None
        if vessel_dir is not None:
            for suffix in (".pfm", ".png"):
                cand = Path(vessel_dir) / (Path(name).stem + suffix)
                if cand.exists():
                    vm_path = cand
                    break
        jobs.append((name, pred_dir / name, gt_path, gv_path, vm_path))
    return jobs


def _run_eval_job(job):
    name, pred, gt, gv, vm = job
    return name, _evaluate_one(pred, gt, gv, vm)


def cmd_eval(args) -> dict:
    t0 = time.perf_counter()
    pred_path = Path(args.pred)
    reports: dict[str, EvalReport] = {}
    if pred_path.is_dir():
        jobs = _match_batch(pred_path, Path(args.gt), Path(args.gt_vessel), args.vessel_map)
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_eval_job, jobs))
        else:
            results = [_run_eval_job(j) for j in jobs]
        for name, report in sorted(results):
            reports[name] = report
    else:
        reports[pred_path.name] = _evaluate_one(
            pred_path, args.gt, args.gt_vessel, args.vessel_map
        )

    rows = {name: r.row() for name, r in reports.items()}
    if len(reports) > 1:
        stacked = np.array(list(rows.values()), dtype=np.float64)
        with np.errstate(invalid="ignore"):
            rows["mean"] = list(np.nanmean(stacked, axis=0))
    table = format_table(rows)

    out = Path(args.out) if args.out else None
    outputs = []
    report_doc = {
        "images": {name: r.to_dict() for name, r in reports.items()},
        "mean": {
            col: (None if np.isnan(v) else float(v))
            for col, v in zip(
                ["full_image_acc", "center_acc", "center_f1", "center2px_acc",
                 "center2px_f1", "vessel_discovery", "segmentation_auc"],
                rows.get("mean", next(iter(rows.values()))),
            )
        },
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        table_path = out / "report.txt"
        report_path.write_text(json.dumps(report_doc, indent=2) + "\n")
        table_path.write_text(table + "\n")
        outputs = [str(report_path), str(table_path)]
    if args.json:
        print(json.dumps(report_doc, indent=2))
    else:
        _say(args, table)
    return {
        "inputs": [str(args.pred), str(args.gt), str(args.gt_vessel)],
        "outputs": outputs,
        "report": report_doc["mean"],
        "timing_s": {"total": round(time.perf_counter() - t0, 4)},
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avrefine",
        description="Refine artery/vein classification maps with vessel-graph propagation.",
    )
    parser.add_argument("--version", action="version", version=f"avrefine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for batch modes")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--json", action="store_true", help="print the manifest as JSON")

    p = sub.add_parser("refine", help="run the full refinement pipeline")
    p.add_argument("vessel", help="vessel probability map (PNG or PFM)")
    p.add_argument("artery", help="artery probability map")
    p.add_argument("vein", help="vein probability map")
    p.add_argument("--config", help="RefineConfig JSON file")
    common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("skeleton", help="binarize and thin a vessel map")
    p.add_argument("vessel")
    p.add_argument("--threshold", type=float, default=0.5)
    common(p)
    p.set_defaults(func=cmd_skeleton)

    p = sub.add_parser("graph", help="extract the vessel graph and keypoint overlay")
    p.add_argument("vessel")
    p.add_argument("artery")
    p.add_argument("vein")
    p.add_argument("--config")
    common(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("render", help="render a label map as an RGB overlay")
    p.add_argument("labels")
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="generate a synthetic fixture set")
    p.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--seed", type=int, default=42, help="seed when no spec file is given")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate a prediction against ground truth")
    p.add_argument("pred", help="predicted label PNG, or a directory for batch mode")
    p.add_argument("gt", help="ground-truth label PNG or directory")
    p.add_argument("gt_vessel", help="ground-truth vessel PNG or directory")
    p.add_argument("--vessel-map", dest="vessel_map",
                   help="vessel score map (PFM/PNG) or directory, enables AUC")
    p.add_argument("--out", help="output directory for report files")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    manifest = {
        "tool": "avrefine",
        "version": __version__,
        "command": args.command,
        "status": "error",
    }
    out_dir = Path(args.out) if getattr(args, "out", None) else None
    try:
        result = args.func(args)
        manifest.update(result)
        manifest["status"] = "ok"
        if out_dir is not None:
            _write_manifest(out_dir, manifest)
        if args.json and args.command != "eval":
            print(json.dumps(manifest, indent=2))
        return 0
    except (ConfigError, InfeasibleSpecError) as exc:
        manifest["error"] = {"class": type(exc).__name__, "message": str(exc)}
        if out_dir is not None:
            _write_manifest(out_dir, manifest)
        print(f"avrefine: config error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, FileNotFoundError, ValueError, OSError) as exc:
        manifest["error"] = {"class": type(exc).__name__, "message": str(exc)}
        if out_dir is not None:
            _write_manifest(out_dir, manifest)
        print(f"avrefine: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
