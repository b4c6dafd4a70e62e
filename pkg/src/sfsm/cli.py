"""Command line front end.

Four subcommands cover the operational surface: `generate` writes synthetic
track and truth files plus a manifest, `run` executes the three-stage
pipeline on one track file, `bench` evaluates variants over a generated
dataset, and `report` renders a benchmark summary as a text table.

Exit codes are a stable contract: 0 success, 2 usage or config errors,
3 pipeline failure (the failing stage is named on stderr).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import SfsmError, ValidationError
from .evaluation import rows_to_csv, run_benchmark
from .pipeline import (
    VARIANT_ALIASES,
    PipelineConfig,
    SuccessThresholds,
    failure_stage,
    run_pipeline,
    write_solution,
)
from .synth import SceneConfig, generate_benchmark_set, read_truth, write_truth
from .tracks import read_tracks, write_tracks
from .version import VERSION_STRING

MANIFEST_NAME = "manifest.json"

USAGE_ERROR = 2
PIPELINE_ERROR = 3


class CliError(SfsmError):
    """Raised for usage and config problems; carries the exit code."""

    code = USAGE_ERROR


def _load_json(path, what):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise CliError(f"cannot read {what} {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"bad JSON in {what} {path!r}: {exc}") from exc


def _dump_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_thresholds(text) -> SuccessThresholds:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError("--thresholds expects three comma-separated numbers: "
                       "ate,are_deg,depth")
    try:
        ate, are, depth = (float(p) for p in parts)
        return SuccessThresholds(max_rms_ate=ate, max_rms_are_deg=are,
                                 max_rms_depth=depth)
    except (ValueError, ValidationError) as exc:
        raise CliError(f"bad --thresholds value: {exc}") from exc


def _pipeline_config(args) -> PipelineConfig:
    """Config file first, then flag overrides."""
    if getattr(args, "config", None):
        raw = _load_json(args.config, "pipeline config")
        try:
            cfg = PipelineConfig.from_dict(raw)
        except SfsmError as exc:
            raise CliError(f"bad pipeline config {args.config!r}: {exc}") from exc
    else:
        cfg = PipelineConfig()
    try:
        # bench collects --variant into a list and hands it to the harness;
        # only `run` treats it as a single base-config override.
        if isinstance(getattr(args, "variant", None), str):
            cfg = dataclasses.replace(cfg, variant=args.variant)
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(
                cfg, step1=dataclasses.replace(cfg.step1, rng_seed=args.seed))
        if getattr(args, "thresholds", None):
            cfg = dataclasses.replace(cfg,
                                      thresholds=_parse_thresholds(args.thresholds))
    except ValidationError as exc:
        raise CliError(str(exc)) from exc
    return cfg


def cmd_generate(args) -> int:
    raw = _load_json(args.config, "scene config") if args.config else {}
    if not isinstance(raw, dict):
        raise CliError("scene config JSON must be an object")
    n_sequences = int(raw.pop("n_sequences", 1))
    master_seed = int(raw.pop("master_seed", 0))
    if args.n_sequences is not None:
        n_sequences = args.n_sequences
    if args.seed is not None:
        master_seed = args.seed
    try:
        scene_cfg = SceneConfig.from_dict(raw)
        sequences = generate_benchmark_set(scene_cfg, n_sequences, master_seed)
    except SfsmError as exc:
        raise CliError(str(exc)) from exc

    os.makedirs(args.out, exist_ok=True)
    entries = []
    for i, (ft, truth) in enumerate(sequences):
        tracks_name = "tracks_%04d.txt" % i
        truth_name = "truth_%04d.txt" % i
        write_tracks(ft, os.path.join(args.out, tracks_name))
        write_truth(os.path.join(args.out, truth_name), truth)
        entries.append({"index": i, "seed": truth.seed,
                        "tracks": tracks_name, "truth": truth_name})
    manifest = {
        "kind": "sfsm-dataset",
        "version": VERSION_STRING,
        "scene_config": scene_cfg.to_dict(),
        "master_seed": master_seed,
        "n_sequences": n_sequences,
        "sequences": entries,
    }
    _dump_json(os.path.join(args.out, MANIFEST_NAME), manifest)
    print(f"wrote {n_sequences} sequence(s) to {args.out}")
    print("seeds: " + " ".join(str(e["seed"]) for e in entries))
    return 0


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    try:
        ft = read_tracks(args.tracks)
    except OSError as exc:
        raise CliError(f"cannot read tracks {args.tracks!r}: {exc}") from exc
    except SfsmError as exc:
        raise CliError(f"bad tracks file {args.tracks!r}: {exc}") from exc

    try:
        result = run_pipeline(ft, cfg)
    except SfsmError as exc:
        print(f"{failure_stage(exc)}: {exc}", file=sys.stderr)
        return PIPELINE_ERROR
    write_solution(args.out, result)
    print(f"wrote {args.out}")
    print("converged" if result.converged else "not converged",
          "final_rms_px %.6g" % result.sol.final_rms_px,
          "iterations %d+%d" % (result.s2.report.iterations,
                                result.sol.report.iterations))
    if not result.converged:
        stage = "step2" if not result.s2.report.converged else "step3"
        report = result.s2.report if stage == "step2" else result.sol.report
        print(f"{stage}: did not converge ({report.termination_reason})",
              file=sys.stderr)
        return PIPELINE_ERROR
    return 0


def _load_dataset(dataset_dir):
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    manifest = _load_json(path, "dataset manifest")
    for key in ("kind", "sequences"):
        if key not in manifest:
            raise CliError(f"dataset manifest {path!r} is missing {key!r}")
    if manifest["kind"] != "sfsm-dataset":
        raise CliError(f"{path!r} is not an sfsm dataset manifest")
    if not manifest["sequences"]:
        raise CliError(f"dataset manifest {path!r} lists no sequences")
    sequences = []
    try:
        for entry in manifest["sequences"]:
            ft = read_tracks(os.path.join(dataset_dir, entry["tracks"]))
            truth = read_truth(os.path.join(dataset_dir, entry["truth"]))
            sequences.append((ft, truth))
    except (OSError, KeyError, SfsmError) as exc:
        raise CliError(f"broken dataset under {dataset_dir!r}: {exc}") from exc
    return manifest, sequences


def cmd_bench(args) -> int:
    manifest, sequences = _load_dataset(args.dataset)
    cfg = _pipeline_config(args)
    variants = args.variant or sorted(set(VARIANT_ALIASES.values()))
    try:
        summaries = run_benchmark(sequences, variants, cfg=cfg,
                                  jobs=args.jobs, timing=args.timing)
    except ValidationError as exc:
        raise CliError(str(exc)) from exc

    os.makedirs(args.out, exist_ok=True)
    csv_paths = []
    for name, summary in summaries.items():
        path = os.path.join(args.out, f"{name}.csv")
        with open(path, "w") as f:
            f.write(rows_to_csv(summary.rows))
        csv_paths.append(path)
    summary_json = {
        "kind": "sfsm-benchmark",
        "version": VERSION_STRING,
        "dataset": {
            "path": args.dataset,
            "master_seed": manifest.get("master_seed"),
            "n_sequences": manifest.get("n_sequences"),
            "scene_config": manifest.get("scene_config"),
        },
        "pipeline_config": cfg.to_dict(),
        "jobs": args.jobs,
        "timing": args.timing,
        "variants": {name: s.to_dict() for name, s in summaries.items()},
    }
    summary_path = os.path.join(args.out, "summary.json")
    _dump_json(summary_path, summary_json)
    for path in csv_paths:
        print(f"wrote {path}")
    print(f"wrote {summary_path}")
    return 0


REPORT_FIELDS = ("success_rate", "mean_rms_ate", "mean_rms_are_deg",
                 "mean_rms_depth", "mean_t_step1", "mean_t_step2", "mean_t_step3")


def _num(value, fmt="%.6g"):
    if value is None or (isinstance(value, float) and value != value):
        return "n/a"
    return fmt % value


def cmd_report(args) -> int:
    summary = _load_json(args.summary, "benchmark summary")
    if not isinstance(summary, dict) or "variants" not in summary:
        raise CliError(f"{args.summary!r} does not look like a benchmark "
                       "summary: missing 'variants'")
    variants = summary["variants"]
    if not isinstance(variants, dict) or not variants:
        raise CliError("summary 'variants' must be a non-empty object")
    for name, entry in variants.items():
        missing = [k for k in REPORT_FIELDS if k not in entry]
        if missing:
            raise CliError(f"variant {name!r} is missing fields: {missing}")

    header = ["Method", "Success Rate (%)", "RMS ATE", "RMS ARE (deg)",
              "Normalized Depth RMSE Mean", "Mean Compute Time per step"]
    rows = [header]
    for name, entry in sorted(variants.items()):
        times = " / ".join(_num(entry[f"mean_t_step{i}"], "%.4g")
                           for i in (1, 2, 3))
        rows.append([
            name,
            _num(entry["success_rate"], "%.1f"),
            _num(entry["mean_rms_ate"]),
            _num(entry["mean_rms_are_deg"]),
            _num(entry["mean_rms_depth"]),
            times + " s",
        ])
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    print("\n".join(lines))

    first = next(iter(variants.values()))
    thr = first.get("thresholds")
    if isinstance(thr, dict):
        print("success criterion: rms_ate <= %s and rms_are_deg <= %s and "
              "rms_depth <= %s, all steps converged"
              % (_num(thr.get("max_rms_ate")), _num(thr.get("max_rms_are_deg")),
                 _num(thr.get("max_rms_depth"))))
    for name, entry in sorted(variants.items()):
        pop = entry.get("population")
        if pop:
            print(f"{name} means over: {pop}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfsm",
        description="Small-motion monocular initialization: synthetic data, "
                    "pipeline runs, benchmarks, and reports.",
    )
    parser.add_argument("--version", action="version", version=VERSION_STRING)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic sequences + manifest")
    p.add_argument("--config", help="scene config JSON (may set n_sequences, "
                                    "master_seed)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--n-sequences", type=int, help="sequence count override")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the pipeline on one tracks file")
    p.add_argument("tracks", help="tracks file")
    p.add_argument("--out", required=True, help="solution file to write")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES),
                   help="pipeline variant override")
    p.add_argument("--seed", type=int, help="stage-1 RANSAC seed override")
    p.add_argument("--thresholds", help="success gates ate,are_deg,depth")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="evaluate variants over a dataset")
    p.add_argument("dataset", help="dataset directory from `generate`")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", action="append",
                   help="variant to evaluate (repeatable; default: all)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="stage-1 RANSAC seed override")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--thresholds", help="success gates ate,are_deg,depth")
    p.add_argument("--timing", action="store_true",
                   help="report median-of-3 stage timings (breaks "
                        "byte-reproducibility of outputs)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render a benchmark summary table")
    p.add_argument("summary", help="summary.json from `bench`")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
