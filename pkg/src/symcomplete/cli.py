"""Command-line front door: complete, detect-plane, augment, eval, sweep-threshold."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .augment import damage_batch
from .completion import CompletionConfig, complete, detect_symmetry_plane
from .geometry import BoundingBox, GeometryError, Plane
from .io import CloudFormat, CloudParseError, load_cloud, save_cloud
from .metrics import (
    SymmetryEvalConfig,
    chamfer_distance,
    symmetry_correct,
)
from .normals import NormalParams
from .registration import RegistrationError, RegistrationParams

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

_RATE_SUFFIX = re.compile(r"__dr(\d+)$")


class ConfigError(Exception):
    """Invalid configuration; carries one message per offending field."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


@dataclass
class PipelineOptions:
    seed: int = 0
    epsilon: float = 0.3
    cube_side: float | None = None
    cube_side_factor: float = 4.0
    neighbor_count: int = 30
    skip_threshold: float = 4.0
    voxel_size: float | None = None
    passes: int = 1
    jobs: int = 1


_OPTION_TYPES = {
    "seed": int,
    "epsilon": float,
    "cube_side": float,
    "cube_side_factor": float,
    "neighbor_count": int,
    "skip_threshold": float,
    "voxel_size": float,
    "passes": int,
    "jobs": int,
}


def _read_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config file {path}: {exc}"]) from None
    errors = [f"unknown config key: {key}" for key in data if key not in _OPTION_TYPES]
    if errors:
        raise ConfigError(errors)
    return data


def _default_jobs() -> int:
    raw = os.environ.get("SYMCOMPLETE_JOBS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def resolve_options(args) -> PipelineOptions:
    """Merge CLI flags over config-file values over defaults; validate everything."""
    file_cfg = _read_config_file(args.config) if getattr(args, "config", None) else {}
    opts = PipelineOptions(jobs=_default_jobs())
    errors = []
    for f in fields(PipelineOptions):
        cli_value = getattr(args, f.name, None)
        value = cli_value if cli_value is not None else file_cfg.get(f.name)
        if value is None:
            continue
        try:
            setattr(opts, f.name, _OPTION_TYPES[f.name](value))
        except (TypeError, ValueError):
            errors.append(f"{f.name}: expected {_OPTION_TYPES[f.name].__name__}, got {value!r}")
    if opts.seed < 0:
        errors.append("seed: must be non-negative")
    if not (0.0 < opts.epsilon < 1.0):
        errors.append(f"epsilon: must be in (0, 1), got {opts.epsilon}")
    if opts.cube_side is not None and opts.cube_side <= 0:
        errors.append("cube_side: must be positive")
    if opts.cube_side_factor <= 0:
        errors.append("cube_side_factor: must be positive")
    if opts.neighbor_count < 3:
        errors.append("neighbor_count: must be at least 3")
    if opts.skip_threshold < 0:
        errors.append("skip_threshold: must be non-negative")
    if opts.voxel_size is not None and opts.voxel_size <= 0:
        errors.append("voxel_size: must be positive")
    if opts.passes < 1:
        errors.append("passes: must be at least 1")
    if opts.jobs < 1:
        errors.append("jobs: must be at least 1")
    if errors:
        raise ConfigError(errors)
    return opts


def _completion_config(opts: PipelineOptions) -> CompletionConfig:
    from .metrics import BalanceConfig

    balance = BalanceConfig(opts.cube_side, opts.epsilon) if opts.cube_side else None
    registration = (
        RegistrationParams(voxel_size=opts.voxel_size) if opts.voxel_size else None
    )
    return CompletionConfig(
        balance=balance,
        registration=registration,
        normal_params=NormalParams(neighbor_count=opts.neighbor_count),
        skip_threshold=opts.skip_threshold,
        seed=opts.seed,
        passes=opts.passes,
        balance_epsilon=opts.epsilon,
        cube_side_factor=opts.cube_side_factor,
    )


def _plane_payload(plane: Plane | None) -> dict | None:
    if plane is None:
        return None
    return {"anchor": plane.anchor.tolist(), "normal": plane.normal.tolist()}


def _write_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        print(text, end="")


# ------------------------------------------------------------------ commands

def cmd_complete(args) -> int:
    opts = resolve_options(args)
    loaded = load_cloud(args.input)
    result = complete(loaded.cloud, _completion_config(opts))
    fmt = CloudFormat(args.format) if args.format else loaded.format
    save_cloud(result.completed, args.output, fmt)
    if result.skipped:
        print(
            f"skipped: completion rejected (scaled Chamfer "
            f"{result.diagnostics.scaled_chamfer}); wrote the input unchanged",
            file=sys.stderr,
        )
    if args.diagnostics:
        payload = {
            "input": str(args.input),
            "output": str(args.output),
            "skipped": result.skipped,
            "seed": opts.seed,
            "plane": _plane_payload(result.plane),
            "diagnostics": result.diagnostics.to_dict(),
        }
        _write_json(payload, args.diagnostics)
    return EXIT_OK


def cmd_detect_plane(args) -> int:
    opts = resolve_options(args)
    loaded = load_cloud(args.input)
    detection = detect_symmetry_plane(
        loaded.cloud, _completion_config(opts), refine=not args.candidates_only
    )
    payload = {
        "input": str(args.input),
        "selected": {
            "anchor": detection.plane.anchor.tolist(),
            "normal": detection.plane.normal.tolist(),
            "source": detection.source,
        },
        "candidates": [
            {
                "source": c.source.value,
                "anchor": c.plane.anchor.tolist(),
                "normal": c.plane.normal.tolist(),
                "balanced_distance": float(c.score),
            }
            for c in detection.candidates
        ],
        "notes": list(detection.notes),
    }
    _write_json(payload, args.json)
    return EXIT_OK


def cmd_augment(args) -> int:
    opts = resolve_options(args)
    rates = _parse_rates(args.rates)
    manifest = damage_batch(
        args.input_dir, args.output_dir, rates, seed=opts.seed, jobs=opts.jobs
    )
    print(f"wrote {manifest}")
    return EXIT_OK


def _parse_rates(raw: str) -> list[float]:
    try:
        rates = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError([f"rates: not a comma-separated float list: {raw!r}"]) from None
    if not rates or any(not (0.0 < r < 1.0) for r in rates):
        raise ConfigError([f"rates: every rate must be in (0, 1), got {raw!r}"])
    return rates


def _cloud_stems(directory: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.suffix.lower() in (".ply", ".xyz")
    }


def _rate_of(stem: str) -> int | None:
    m = _RATE_SUFFIX.search(stem)
    return int(m.group(1)) if m else None


def _strip_rate(stem: str) -> str:
    return _RATE_SUFFIX.sub("", stem)


def _match_pairs(pred_dir: Path, gt_dir: Path) -> tuple[list[tuple[str, Path, Path]], list[str]]:
    preds = _cloud_stems(pred_dir)
    gts = _cloud_stems(gt_dir)
    pairs = []
    unmatched = []
    for stem, path in preds.items():
        gt = gts.get(stem) or gts.get(_strip_rate(stem))
        if gt is None:
            unmatched.append(stem)
        else:
            pairs.append((stem, path, gt))
    unmatched.extend(
        stem for stem in gts
        if stem not in preds and not any(_strip_rate(s) == stem for s in preds)
    )
    return sorted(pairs), sorted(set(unmatched))


def cmd_eval(args) -> int:
    opts = resolve_options(args)
    if args.symmetry:
        return _eval_symmetry(args)
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    pairs, unmatched = _match_pairs(pred_dir, gt_dir)
    if unmatched:
        for stem in unmatched:
            print(f"unmatched: {stem}", file=sys.stderr)
        if not args.allow_partial:
            return EXIT_RUNTIME
    if not pairs:
        print("error: no matched files to evaluate", file=sys.stderr)
        return EXIT_RUNTIME

    def one(item):
        stem, pred_path, gt_path = item
        try:
            cd = chamfer_distance(load_cloud(pred_path).cloud, load_cloud(gt_path).cloud)
        except (CloudParseError, GeometryError, OSError) as exc:
            return {"file": stem, "error": str(exc)}
        return {"file": stem, "rate": _rate_of(stem), "cd_x1e4": cd * 1e4}

    rows = _parallel_map(one, pairs, opts.jobs)
    failed = [r for r in rows if "error" in r]
    rows = [r for r in rows if "error" not in r]
    for row in sorted(failed, key=lambda r: r["file"]):
        print(f"failed: {row['file']}: {row['error']}", file=sys.stderr)
    if failed and not args.allow_partial:
        return EXIT_RUNTIME
    if not rows:
        print("error: nothing evaluated", file=sys.stderr)
        return EXIT_RUNTIME
    rows.sort(key=lambda r: r["file"])
    by_rate: dict[str, list[float]] = {}
    for row in rows:
        key = "all" if row["rate"] is None else str(row["rate"])
        by_rate.setdefault(key, []).append(row["cd_x1e4"])
    summary = {k: sum(v) / len(v) for k, v in sorted(by_rate.items(), key=_rate_key)}
    overall = sum(r["cd_x1e4"] for r in rows) / len(rows)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "file", "rate", "cd_x1e4"])
            for row in rows:
                writer.writerow(["object", row["file"], row["rate"], f"{row['cd_x1e4']:.6f}"])
            for rate, mean in summary.items():
                writer.writerow(["mean", "", rate, f"{mean:.6f}"])
            writer.writerow(["mean", "", "overall", f"{overall:.6f}"])
    if args.json:
        _write_json({"objects": rows, "by_rate": summary, "overall": overall}, args.json)
    for rate, mean in summary.items():
        print(f"rate {rate}: mean CD x 1e4 = {mean:.4f}")
    print(f"overall: mean CD x 1e4 = {overall:.4f}")
    return EXIT_OK


def _rate_key(item):
    key = item[0]
    return (0, int(key)) if key.isdigit() else (1, 0)


def _eval_symmetry(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds = {p.stem.replace(".plane", ""): p for p in sorted(pred_dir.glob("*.json"))}
    gts = {p.stem.replace(".gt", ""): p for p in sorted(gt_dir.glob("*.json"))}
    stems = sorted(set(preds) & set(gts))
    unmatched = sorted(set(preds) ^ set(gts))
    for stem in unmatched:
        print(f"unmatched: {stem}", file=sys.stderr)
    if unmatched and not args.allow_partial:
        return EXIT_RUNTIME
    if not stems:
        print("error: no matched files to evaluate", file=sys.stderr)
        return EXIT_RUNTIME

    rows = []
    for stem in stems:
        pred_data = json.loads(preds[stem].read_text())
        gt_data = json.loads(gts[stem].read_text())
        selected = pred_data.get("selected")
        bounds = BoundingBox(gt_data["bounds"]["min"], gt_data["bounds"]["max"])
        cfg = SymmetryEvalConfig(args.theta, bounds.diagonal / args.tau_fraction)
        correct = False
        if selected is not None:
            pred_plane = Plane(selected["anchor"], selected["normal"])
            correct = any(
                symmetry_correct(pred_plane, Plane(g["anchor"], g["normal"]), bounds, cfg)
                for g in gt_data["planes"]
            )
        rows.append({"file": stem, "correct": correct})
    acc = sum(r["correct"] for r in rows) / len(rows)
    payload = {
        "objects": rows,
        "accuracy": acc,
        "angle_threshold": args.theta,
        "center_threshold_fraction": args.tau_fraction,
    }
    if args.json:
        _write_json(payload, args.json)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "correct"])
            for row in rows:
                writer.writerow([row["file"], int(row["correct"])])
            writer.writerow(["accuracy", f"{acc:.6f}"])
    print(f"symmetry accuracy: {acc:.2%} over {len(rows)} objects")
    return EXIT_OK


def cmd_sweep_threshold(args) -> int:
    opts = resolve_options(args)
    values = _sweep_values(args)
    input_dir, gt_dir = Path(args.input_dir), Path(args.gt_dir)
    pairs, unmatched = _match_pairs(input_dir, gt_dir)
    for stem in unmatched:
        print(f"unmatched: {stem}", file=sys.stderr)
    if not pairs:
        print("error: no matched damaged/ground-truth pairs", file=sys.stderr)
        return EXIT_RUNTIME

    base_cfg = _completion_config(opts)
    cfg = CompletionConfig(
        balance=base_cfg.balance,
        registration=base_cfg.registration,
        normal_params=base_cfg.normal_params,
        skip_threshold=math.inf,
        seed=base_cfg.seed,
        passes=base_cfg.passes,
        balance_epsilon=base_cfg.balance_epsilon,
        cube_side_factor=base_cfg.cube_side_factor,
    )

    def one(item):
        stem, damaged_path, gt_path = item
        try:
            damaged = load_cloud(damaged_path).cloud
            gt = load_cloud(gt_path).cloud
            result = complete(damaged, cfg)
        except (CloudParseError, GeometryError, RegistrationError, OSError) as exc:
            return {"file": stem, "error": str(exc)}
        return {
            "scaled": result.diagnostics.scaled_chamfer or 0.0,
            "cd_completed": chamfer_distance(result.completed, gt),
            "cd_damaged": chamfer_distance(damaged, gt),
        }

    records = _parallel_map(one, pairs, opts.jobs)
    for rec in records:
        if "error" in rec:
            print(f"failed: {rec['file']}: {rec['error']}", file=sys.stderr)
    records = [r for r in records if "error" not in r]
    if not records:
        print("error: nothing evaluated", file=sys.stderr)
        return EXIT_RUNTIME
    rows = []
    for d_star in values:
        final = [
            r["cd_completed"] if r["scaled"] <= d_star else r["cd_damaged"]
            for r in records
        ]
        rows.append((d_star, 1e4 * sum(final) / len(final)))

    out = sys.stdout
    close = False
    if args.csv:
        out = open(args.csv, "w", newline="")
        close = True
    try:
        writer = csv.writer(out)
        writer.writerow(["d_star", "mean_cd_x1e4"])
        for d_star, mean_cd in rows:
            writer.writerow([d_star, f"{mean_cd:.6f}"])
    finally:
        if close:
            out.close()
    return EXIT_OK


def _sweep_values(args) -> list[float]:
    if args.values:
        try:
            values = [float(tok) for tok in args.values.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError([f"values: not a float list: {args.values!r}"]) from None
    elif args.start is not None and args.stop is not None and args.step:
        values = []
        v = args.start
        while v <= args.stop + 1e-12:
            values.append(round(v, 12))
            v += args.step
    else:
        raise ConfigError(["sweep range: give --values or --start/--stop/--step"])
    if not values:
        raise ConfigError(["sweep range: empty"])
    return values


def _parallel_map(fn, items, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# ------------------------------------------------------------------ parser

def _add_pipeline_flags(p: argparse.ArgumentParser, *, skip: bool = True) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--epsilon", type=float, default=None,
                   help="balance tolerance in (0, 1) (default 0.3)")
    p.add_argument("--cube-side", dest="cube_side", type=float, default=None,
                   help="absolute balance cube side (default: derived from spacing)")
    p.add_argument("--cube-side-factor", dest="cube_side_factor", type=float, default=None,
                   help="cube side as a multiple of mean point spacing (default 4)")
    p.add_argument("--knn", dest="neighbor_count", type=int, default=None,
                   help="neighborhood size for normal estimation (default 30)")
    p.add_argument("--voxel-size", dest="voxel_size", type=float, default=None,
                   help="registration voxel size (default: derived from spacing)")
    p.add_argument("--passes", type=int, default=None,
                   help="hole-fill passes (default 1)")
    if skip:
        p.add_argument("--skip-threshold", dest="skip_threshold", type=float, default=None,
                       help="scaled Chamfer threshold above which completion is rejected")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads for batch commands (default $SYMCOMPLETE_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symcomplete",
        description="Complete damaged mirror-symmetric point clouds without training data.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="complete one damaged cloud")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=[f.value for f in CloudFormat], default=None,
                   help="output format (default: same as input)")
    p.add_argument("--diagnostics", default=None, help="write diagnostics JSON here")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("detect-plane", help="report symmetry plane candidates and selection")
    p.add_argument("input")
    p.add_argument("--candidates-only", action="store_true",
                   help="list scored candidates without registration refinement")
    p.add_argument("--json", default=None, help="write JSON here instead of stdout")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_detect_plane)

    p = sub.add_parser("augment", help="carve reproducible damage into a cloud directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--rates", required=True, help="comma-separated damage rates in (0, 1)")
    _add_pipeline_flags(p, skip=False)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="score completions (or planes) against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.add_argument("--symmetry", action="store_true",
                   help="evaluate plane JSONs instead of completed clouds")
    p.add_argument("--theta", type=float, default=0.2,
                   help="max normal angle in radians (symmetry mode)")
    p.add_argument("--tau-fraction", dest="tau_fraction", type=float, default=20.0,
                   help="center threshold = bbox diagonal / this (symmetry mode)")
    p.add_argument("--allow-partial", action="store_true")
    _add_pipeline_flags(p, skip=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-threshold", help="skip-threshold performance curve")
    p.add_argument("--input-dir", required=True, help="damaged clouds")
    p.add_argument("--gt-dir", required=True, help="matching ground-truth clouds")
    p.add_argument("--values", default=None, help="comma-separated threshold values")
    p.add_argument("--start", type=float, default=None)
    p.add_argument("--stop", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--csv", default=None, help="write the curve here (default stdout)")
    _add_pipeline_flags(p, skip=False)
    p.set_defaults(func=cmd_sweep_threshold)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (
        logging.INFO if args.verbose == 1 else logging.DEBUG
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for message in exc.messages:
            print(f"config error: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except (CloudParseError, GeometryError, RegistrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
