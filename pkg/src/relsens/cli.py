"""Command-line front end.

``relsens run --config cfg.toml`` builds (or ingests) the sample, runs the
sweep plan and writes the result table; ``relsens verify`` runs the built-in
acceptance checks.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    IngestError,
    NumericalError,
    ParameterError,
    UndefinedIndexError,
    UnsupportedOperationError,
)
from .estimation import FailureEstimate, EvaluatedSample, SensitivityRecord, estimate_pf, sweep
from .models import build_sample, ingest_sample

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

COLUMNS = (
    "variable", "mode", "branch", "delta", "tau", "p_delta",
    "s_hat", "stderr", "ci_lo", "ci_hi", "ess", "flags",
)
SERIES_COLUMNS = ("delta", "s_hat", "ci_lo", "ci_hi")


@dataclass(frozen=True)
class RunResult:
    sample: EvaluatedSample
    p_f: FailureEstimate
    records: list[SensitivityRecord]


def resolve_threads(threads: int) -> int:
    if threads < 0:
        raise ParameterError(f"--threads must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def execute(cfg: RunConfig, threads: int = 1) -> RunResult:
    """Build or ingest the sample and run every plan entry."""
    if cfg.tabulated:
        sample = ingest_sample(cfg.sample_path, cfg.marginals)
    else:
        sample = build_sample(cfg.model, cfg.marginals, cfg.n, cfg.seed)
    p_f = estimate_pf(sample)
    records = sweep(sample, cfg.plan, cfg.output.confidence, resolve_threads(threads))
    return RunResult(sample, p_f, records)


def _num(x: float) -> str:
    return repr(float(x))


def _row(r: SensitivityRecord) -> list[str]:
    return [
        f"x{r.variable + 1}", str(r.mode), r.branch.value, _num(r.delta), _num(r.tau),
        _num(r.p_delta_hat), _num(r.s_hat), _num(r.stderr), _num(r.ci_lo), _num(r.ci_hi),
        _num(r.ess), ";".join(r.flags),
    ]


def format_csv(records: Sequence[SensitivityRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow(_row(r))
    return buf.getvalue()


def _json_num(x: float):
    x = float(x)
    return x if math.isfinite(x) else None


def format_json(cfg: RunConfig, result: RunResult) -> str:
    doc = {
        "n": result.sample.n,
        "seed": result.sample.seed,
        "p_f": result.p_f.p_hat,
        "p_f_stderr": result.p_f.stderr,
        "failures": result.p_f.failures,
        "confidence": cfg.output.confidence,
        "marginals": [str(m) for m in cfg.marginals],
        "sample_flags": list(result.sample.flags),
        "records": [
            {
                "variable": f"x{r.variable + 1}",
                "mode": str(r.mode),
                "branch": r.branch.value,
                "delta": r.delta,
                "tau": _json_num(r.tau),
                "p_delta": _json_num(r.p_delta_hat),
                "s_hat": _json_num(r.s_hat),
                "stderr": _json_num(r.stderr),
                "ci_lo": _json_num(r.ci_lo),
                "ci_hi": _json_num(r.ci_hi),
                "ess": _json_num(r.ess),
                "flags": list(r.flags),
                "feasible": r.feasible,
                **({"note": r.note} if r.note else {}),
            }
            for r in result.records
        ],
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _series_files(records: Sequence[SensitivityRecord]) -> dict[str, str]:
    groups: dict[str, list[SensitivityRecord]] = {}
    for r in records:
        groups.setdefault(f"x{r.variable + 1}_{r.mode}_{r.branch.value}.csv", []).append(r)
    files = {}
    for name, rows in groups.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in rows:
            w.writerow([_num(r.delta), _num(r.s_hat), _num(r.ci_lo), _num(r.ci_hi)])
        files[name] = buf.getvalue()
    return files


def write_outputs(cfg: RunConfig, result: RunResult, path: Path) -> list[Path]:
    """Write the result table (and series files if configured); return the paths written."""
    text = format_json(cfg, result) if cfg.output.format == "json" else format_csv(result.records)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    written = [path]
    if cfg.output.series is not None:
        cfg.output.series.mkdir(parents=True, exist_ok=True)
        for name, body in sorted(_series_files(result.records).items()):
            target = cfg.output.series / name
            target.write_text(body, encoding="utf-8", newline="\n")
            written.append(target)
    return written


def ranking(records: Sequence[SensitivityRecord]) -> list[tuple[int, float]]:
    """(variable, max |S_hat|) pairs, most influential first."""
    best: dict[int, float] = {}
    for r in records:
        if r.feasible and math.isfinite(r.s_hat):
            best[r.variable] = max(best.get(r.variable, 0.0), abs(r.s_hat))
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))


def summary(result: RunResult) -> str:
    p = result.p_f
    lines = [f"p_f = {p.p_hat:.6g} (stderr {p.stderr:.3g}, {p.failures} failures), N = {result.sample.n}"]
    for flag in result.sample.flags:
        lines.append(f"sample flag: {flag}")
    ranked = ranking(result.records)
    for var, s in sorted(ranked):
        lines.append(f"  x{var + 1}: max |S| = {s:.4g}")
    if ranked:
        lines.append("ranking: " + " > ".join(f"x{v + 1}" for v, _ in ranked))
    infeasible = sum(not r.feasible for r in result.records)
    if infeasible:
        lines.append(f"{infeasible} infeasible cell(s) recorded")
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error in {args.config}:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        result = execute(cfg, args.threads)
    except (ParameterError, UnsupportedOperationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, UndefinedIndexError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (IngestError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.output) if args.output else cfg.output.path
    try:
        written = write_outputs(cfg, result, out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(summary(result))
    print(f"wrote {len(result.records)} records to {written[0]}")
    if len(written) > 1:
        print(f"wrote {len(written) - 1} series file(s) to {cfg.output.series}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(fast=args.fast, threads=resolve_threads(args.threads))
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relsens",
        description="Perturbation-based sensitivity analysis of failure probabilities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the sweeps described by a config file")
    run.add_argument("--config", required=True, help="TOML configuration file")
    run.add_argument("--threads", type=int, default=1, help="worker threads (0 = one per CPU)")
    run.add_argument("--output", help="override output.path from the config")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the built-in acceptance checks")
    ver.add_argument("--fast", action="store_true", help="scale single-sample sizes down 10x")
    ver.add_argument("--threads", type=int, default=1, help="worker threads (0 = one per CPU)")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 0:
        print("--threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
