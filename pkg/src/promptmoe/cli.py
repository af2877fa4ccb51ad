"""Command-line front end: suite selection, config handling, result emission.

Configuration is a single JSON file (nested key/value); every key is
optional and unknown keys are rejected by name. Flag > environment variable >
config file > built-in default, with environment overrides spelled
``PROMPTMOE_<FLAG>`` (``PROMPTMOE_SUITE``, ``PROMPTMOE_SEED``, ...). A run is
reproducible from (config, seed) alone: suite reruns write byte-identical CSV
in single-process mode and the same row set at any parallelism.

Exit codes: 0 all suite assertions passed, 1 an assertion failed (the failing
invariant is named on stdout and in summary.json), 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .suites import (
    SuiteOutcome,
    run_equivalence_suite,
    run_gradcheck_suite,
    run_params_suite,
    run_rate_suite,
)

__all__ = [
    "ExperimentConfig",
    "EquivalenceSettings",
    "GradcheckSettings",
    "RateSettings",
    "parse_config",
    "emit_config",
    "run_suite",
    "main",
]

ENV_PREFIX = "PROMPTMOE_"
SUITES = ("equivalence", "gradcheck", "params", "rate-nonlinear", "rate-linear", "all")
FORMATS = ("csv", "json", "table")
_RATE_SUITES = ("rate-nonlinear", "rate-linear")


@dataclass(frozen=True)
class EquivalenceSettings:
    instances: int = 100
    max_tokens: int = 8
    max_dim: int = 16
    max_prompts: int = 4


@dataclass(frozen=True)
class GradcheckSettings:
    seeds: int = 20
    step: float = 1e-5


@dataclass(frozen=True)
class RateSettings:
    n_grid: tuple[int, ...] = (200, 500, 1000, 2000, 5000, 10000)
    replications: int = 20
    noise_std: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str = "all"
    seed: int = 7
    out_dir: str = "results"
    jobs: int = 1
    format: str = "table"
    equivalence: EquivalenceSettings = field(default_factory=EquivalenceSettings)
    gradcheck: GradcheckSettings = field(default_factory=GradcheckSettings)
    rate: RateSettings = field(default_factory=RateSettings)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f"suite must be one of {SUITES}, got {self.suite!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["rate"]["n_grid"] = list(self.rate.n_grid)
        return out


def _build_section(cls, data: dict, path: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]!r}" if path else f"unknown key {unknown[0]!r}")
    return data


def _config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    top = dict(_build_section(ExperimentConfig, data, ""))
    sections = {}
    for name, cls in (
        ("equivalence", EquivalenceSettings),
        ("gradcheck", GradcheckSettings),
        ("rate", RateSettings),
    ):
        raw = top.pop(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be an object")
        raw = dict(_build_section(cls, raw, name))
        if name == "rate" and "n_grid" in raw:
            grid = raw["n_grid"]
            if (
                not isinstance(grid, list)
                or not all(isinstance(v, int) and v > 0 for v in grid)
                or grid != sorted(set(grid))
            ):
                raise ConfigError("rate.n_grid must be a strictly increasing list of positive integers")
            raw["n_grid"] = tuple(grid)
        try:
            sections[name] = cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"invalid section {name!r}: {exc}") from exc
    try:
        return ExperimentConfig(**top, **sections)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def parse_config(path) -> ExperimentConfig:
    """Strictly parse a config file; diagnostics carry line/column positions."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return _config_from_dict(data)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; emit(parse(emit(c))) is byte-identical to emit(c)."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def _run_one(name: str, cfg: ExperimentConfig) -> SuiteOutcome:
    if name == "equivalence":
        e = cfg.equivalence
        return run_equivalence_suite(
            cfg.seed,
            instances=e.instances,
            max_tokens=e.max_tokens,
            max_dim=e.max_dim,
            max_prompts=e.max_prompts,
        )
    if name == "gradcheck":
        return run_gradcheck_suite(cfg.seed, seeds=cfg.gradcheck.seeds, step=cfg.gradcheck.step)
    if name == "params":
        return run_params_suite(cfg.seed)
    if name in _RATE_SUITES:
        return run_rate_suite(
            "D1" if name == "rate-nonlinear" else "D2",
            cfg.seed,
            jobs=cfg.jobs,
            n_grid=cfg.rate.n_grid,
            replications=cfg.rate.replications,
            noise_std=cfg.rate.noise_std,
        )
    raise ConfigError(f"unknown suite {name!r}")


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


_HEADLINE_KEYS = {
    "equivalence": ("max_abs_diff",),
    "gradcheck": ("max_rel_err",),
    "params": ("reference_adaptive", "reference_plain"),
    "rate-nonlinear": ("slope", "r_squared", "failure_count"),
    "rate-linear": ("slope", "r_squared", "failure_count"),
}


def _render_table(outcomes: list[SuiteOutcome]) -> str:
    lines = [f"{'suite':<16} {'status':<6} headline", "-" * 64]
    for o in outcomes:
        status = "PASS" if o.passed else "FAIL"
        headline = "  ".join(
            f"{k}={o.summary[k]:.6g}" if isinstance(o.summary.get(k), float) else f"{k}={o.summary.get(k)}"
            for k in _HEADLINE_KEYS.get(o.name, ())
        )
        lines.append(f"{o.name:<16} {status:<6} {headline}")
        for failure in o.failures:
            lines.append(f"{'':<16} FAIL   {failure}")
    return "\n".join(lines) + "\n"


def run_suite(cfg: ExperimentConfig) -> int:
    """Execute the selected suites, write artifacts, return the exit code."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(SUITES[:-1]) if cfg.suite == "all" else [cfg.suite]
    outcomes = [_run_one(name, cfg) for name in names]

    for outcome in outcomes:
        _write_csv(out_dir / f"{outcome.name}.csv", outcome.rows)
    summary = {
        "config": cfg.to_dict(),
        "passed": all(o.passed for o in outcomes),
        "failures": [f for o in outcomes for f in o.failures],
        "suites": {
            o.name: {"passed": o.passed, "failures": o.failures, **o.summary}
            for o in outcomes
        },
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    table = _render_table(outcomes)
    (out_dir / "summary.txt").write_text(table)

    if cfg.format == "table":
        print(table, end="")
    elif cfg.format == "json":
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        for outcome in outcomes:
            print((out_dir / f"{outcome.name}.csv").read_text(), end="")
    return 0 if summary["passed"] else 1


def _env_overrides() -> dict:
    out = {}
    mapping = {
        "SUITE": ("suite", str),
        "SEED": ("seed", int),
        "OUT": ("out_dir", str),
        "JOBS": ("jobs", int),
        "FORMAT": ("format", str),
    }
    for env_name, (key, cast) in mapping.items():
        raw = os.environ.get(ENV_PREFIX + env_name)
        if raw is None:
            continue
        try:
            out[key] = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {ENV_PREFIX}{env_name}: {raw!r}") from exc
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="promptmoe",
        description="Run verification suites: attention/MoE equivalence, gradient "
        "checks, parameter accounting, and estimation-rate experiments.",
    )
    parser.add_argument("--suite", choices=SUITES, help="suite to run (default: all)")
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (default: 7)")
    parser.add_argument("--out", help="output directory (default: results)")
    parser.add_argument("--jobs", type=int, help="parallel worker processes (default: 1)")
    parser.add_argument("--format", choices=FORMATS, help="stdout rendering (default: table)")
    args = parser.parse_args(argv)

    try:
        config_path = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
        cfg = parse_config(config_path) if config_path else ExperimentConfig()
        overrides = _env_overrides()
        for key, flag in (
            ("suite", args.suite),
            ("seed", args.seed),
            ("out_dir", args.out),
            ("jobs", args.jobs),
            ("format", args.format),
        ):
            if flag is not None:
                overrides[key] = flag
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run_suite(cfg)


if __name__ == "__main__":
    sys.exit(main())
