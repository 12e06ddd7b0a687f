"""Run configuration files (TOML).

A configuration names the model, the input marginals, the sample, a list of
sweep plan entries and where to write results::

    marginals = ["normal(0,1)", "normal(0,1)", "normal(0,1)"]

    [model]
    name = "linear"              # or "tabulated" with path = "sample.csv"
    intercept = 3.0
    coefficients = [0.1, 0.5, 1.0]

    [sample]
    n = 1000000
    seed = 12345

    [[plan]]
    variables = "all"            # or a list of 1-based indices
    mode = "tilt.mean"
    branches = ["neg", "pos"]
    deltas = {start = 0.1, stop = 1.0, steps = 10}

    [output]
    path = "results.csv"
    format = "csv"               # or "json"
    confidence = 0.95
    series = "series"            # optional directory of per-curve files

Relative paths are resolved against the directory holding the file.
Validation reports every problem it finds, not just the first.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .distributions import DistributionSpec, parse_distribution
from .errors import ConfigError, RelsensError
from .estimation import PlanEntry
from .models import LinearGaussian
from .tilt import Branch, mode_problem, parse_mode

FORMATS = ("csv", "json")

_TOP_KEYS = {"model", "marginals", "sample", "plan", "output"}
_MODEL_KEYS = {"linear": {"name", "intercept", "coefficients"}, "tabulated": {"name", "path"}}
_SAMPLE_KEYS = {"n", "seed"}
_PLAN_KEYS = {"variables", "mode", "branches", "deltas"}
_OUTPUT_KEYS = {"path", "format", "confidence", "series"}


@dataclass(frozen=True)
class OutputSpec:
    path: Path
    format: str = "csv"
    confidence: float = 0.95
    series: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    model: LinearGaussian | None
    sample_path: Path | None
    marginals: tuple[DistributionSpec, ...]
    n: int | None
    seed: int | None
    plan: tuple[PlanEntry, ...]
    output: OutputSpec
    source: Path | None = None

    @property
    def tabulated(self) -> bool:
        return self.sample_path is not None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _unknown(table: dict, allowed: set, where: str, problems: list) -> None:
    for key in sorted(set(table) - allowed):
        problems.append(f"{where}: unknown key {key!r}")


def grid(start: float, stop: float, steps: int) -> tuple[float, ...]:
    """``steps`` evenly spaced values from start to stop inclusive, tidied to 15 digits."""
    if steps == 1:
        return (float(start),)
    h = (stop - start) / (steps - 1)
    return tuple(float(f"{start + k * h:.15g}") for k in range(steps))


def _deltas(raw, where: str, problems: list) -> tuple[float, ...]:
    if isinstance(raw, list):
        bad = [v for v in raw if not (_is_real(v) and v >= 0)]
        if not raw:
            problems.append(f"{where}.deltas: empty list")
        if bad:
            problems.append(f"{where}.deltas: values must be finite and >= 0, got {bad}")
            return ()
        return tuple(float(v) for v in raw)
    if isinstance(raw, dict):
        _unknown(raw, {"start", "stop", "steps"}, f"{where}.deltas", problems)
        start, stop, steps = raw.get("start"), raw.get("stop"), raw.get("steps")
        ok = True
        if not (_is_real(start) and start >= 0):
            problems.append(f"{where}.deltas.start: need a finite value >= 0, got {start!r}")
            ok = False
        if not _is_real(stop):
            problems.append(f"{where}.deltas.stop: need a finite value, got {stop!r}")
            ok = False
        if not (_is_int(steps) and steps >= 1):
            problems.append(f"{where}.deltas.steps: need an integer >= 1, got {steps!r}")
            ok = False
        if ok and stop < start:
            problems.append(f"{where}.deltas: stop {stop} is below start {start}")
            ok = False
        return grid(float(start), float(stop), steps) if ok else ()
    problems.append(f"{where}.deltas: need a list or a {{start, stop, steps}} table, got {raw!r}")
    return ()


def _plan(raw_plan, marginals, problems: list) -> tuple[PlanEntry, ...]:
    if not isinstance(raw_plan, list) or not raw_plan:
        problems.append("plan: need at least one [[plan]] entry")
        return ()
    entries = []
    d = len(marginals)
    for k, item in enumerate(raw_plan, start=1):
        where = f"plan[{k}]"
        if not isinstance(item, dict):
            problems.append(f"{where}: not a table")
            continue
        _unknown(item, _PLAN_KEYS, where, problems)

        variables = item.get("variables", "all")
        if variables == "all":
            idx = list(range(d))
        elif isinstance(variables, list) and variables and all(_is_int(v) for v in variables):
            out_of_range = [v for v in variables if not 1 <= v <= d]
            if out_of_range:
                problems.append(f"{where}.variables: {out_of_range} outside 1..{d}")
            if len(set(variables)) != len(variables):
                problems.append(f"{where}.variables: duplicate indices {variables}")
            idx = [v - 1 for v in variables if 1 <= v <= d]
        else:
            problems.append(f"{where}.variables: need \"all\" or a list of 1-based indices, got {variables!r}")
            idx = []

        mode = None
        if "mode" not in item:
            problems.append(f"{where}.mode: missing")
        else:
            try:
                mode = parse_mode(str(item["mode"]))
            except RelsensError as exc:
                problems.append(f"{where}.mode: {exc}")

        branches = item.get("branches", ["neg", "pos"])
        parsed_branches = []
        if not isinstance(branches, list) or not branches:
            problems.append(f"{where}.branches: need a non-empty list of \"neg\"/\"pos\"")
        else:
            for b in branches:
                try:
                    parsed_branches.append(Branch(b))
                except ValueError:
                    problems.append(f"{where}.branches: unknown branch {b!r} (use neg or pos)")
            if len(set(parsed_branches)) != len(parsed_branches):
                problems.append(f"{where}.branches: duplicates in {branches}")

        if "deltas" not in item:
            problems.append(f"{where}.deltas: missing")
            deltas = ()
        else:
            deltas = _deltas(item["deltas"], where, problems)

        if mode is not None:
            for i in idx:
                if marginals[i] is None:
                    continue
                why = mode_problem(marginals[i], mode)
                if why:
                    problems.append(f"{where}: x{i + 1} = {marginals[i]}: {why}")
        for i in idx:
            for b in parsed_branches:
                if mode is not None and deltas:
                    entries.append(PlanEntry(i, mode, b, deltas))
    return tuple(entries)


def parse_config(data: dict[str, Any], base_dir: Path | str = ".", source: Path | None = None) -> RunConfig:
    """Validate a decoded configuration table; raise ConfigError listing every problem."""
    base = Path(base_dir)

    def resolve(rel: str) -> Path:
        return Path(os.path.normpath(base / rel))
    problems: list[str] = []
    _unknown(data, _TOP_KEYS, "config", problems)

    raw_marginals = data.get("marginals")
    marginals: list[DistributionSpec | None] = []
    if not isinstance(raw_marginals, list) or not raw_marginals:
        problems.append("marginals: need a non-empty list of distribution literals")
    else:
        for k, lit in enumerate(raw_marginals, start=1):
            try:
                marginals.append(parse_distribution(str(lit)))
            except RelsensError as exc:
                problems.append(f"marginals[{k}]: {exc}")
                marginals.append(None)

    model = None
    sample_path = None
    raw_model = data.get("model")
    if not isinstance(raw_model, dict):
        problems.append("model: missing [model] table")
        name = None
    else:
        name = raw_model.get("name")
        if name not in _MODEL_KEYS:
            problems.append(f"model.name: need one of {sorted(_MODEL_KEYS)}, got {name!r}")
        else:
            _unknown(raw_model, _MODEL_KEYS[name], "model", problems)
        if name == "linear":
            c0 = raw_model.get("intercept")
            coefs = raw_model.get("coefficients")
            if not _is_real(c0):
                problems.append(f"model.intercept: need a finite number, got {c0!r}")
            if not (isinstance(coefs, list) and coefs and all(_is_real(c) for c in coefs)):
                problems.append(f"model.coefficients: need a non-empty list of numbers, got {coefs!r}")
            elif marginals and len(coefs) != len(marginals):
                problems.append(f"model.coefficients: {len(coefs)} coefficients for {len(marginals)} marginals")
            elif not any(coefs):
                problems.append("model.coefficients: all zero")
            elif _is_real(c0):
                model = LinearGaussian(c0, tuple(coefs))
        elif name == "tabulated":
            path = raw_model.get("path")
            if not isinstance(path, str) or not path:
                problems.append("model.path: need the path of a sample CSV file")
            else:
                sample_path = resolve(path)

    n = seed = None
    raw_sample = data.get("sample")
    if name == "tabulated":
        if raw_sample is not None:
            problems.append("sample: not allowed with a tabulated model (the file fixes the sample)")
    elif name == "linear":
        if not isinstance(raw_sample, dict):
            problems.append("sample: missing [sample] table with n and seed")
        else:
            _unknown(raw_sample, _SAMPLE_KEYS, "sample", problems)
            n, seed = raw_sample.get("n"), raw_sample.get("seed")
            if not (_is_int(n) and n >= 1):
                problems.append(f"sample.n: need an integer >= 1, got {n!r}")
            if not (_is_int(seed) and seed >= 0):
                problems.append(f"sample.seed: need an integer >= 0, got {seed!r}")

    plan = _plan(data.get("plan"), marginals, problems)

    raw_out = data.get("output")
    output = None
    if not isinstance(raw_out, dict):
        problems.append("output: missing [output] table")
    else:
        _unknown(raw_out, _OUTPUT_KEYS, "output", problems)
        path = raw_out.get("path")
        fmt = raw_out.get("format", "csv")
        conf = raw_out.get("confidence", 0.95)
        series = raw_out.get("series")
        if not isinstance(path, str) or not path:
            problems.append("output.path: missing")
        if fmt not in FORMATS:
            problems.append(f"output.format: need one of {FORMATS}, got {fmt!r}")
        if not (_is_real(conf) and 0 < conf < 1):
            problems.append(f"output.confidence: need a value in (0, 1), got {conf!r}")
        if series is not None and (not isinstance(series, str) or not series):
            problems.append("output.series: need a directory path")
        if not problems:
            output = OutputSpec(resolve(path), fmt, float(conf), resolve(series) if series else None)

    if problems:
        raise ConfigError(problems)
    return RunConfig(model, sample_path, tuple(marginals), n, seed, plan, output, source)


def load_config(path: Path | str) -> RunConfig:
    """Read and validate a TOML configuration file."""
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: invalid TOML: {exc}"]) from None
    return parse_config(data, path.parent, source=path)
