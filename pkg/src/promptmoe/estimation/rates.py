"""Convergence-rate experiments for the prompt-estimation losses.

For each sample size in a grid, several replications draw a dataset from a
fixed ground-truth mixture, fit the mixing measure by least squares starting
from a small perturbation of the truth (so statistical error is measured, not
global-search error), and record the Voronoi loss. The log-log slope of the
mean loss against n is the empirical convergence rate; a parametric
n^{-1/2}-type rate shows up as a slope near -0.5.

Everything is deterministic in (config, master seed): each task draws from
its own counter-based substream, workers rebuild the shared ground truth from
the same stream, and results are reduced in sorted task order, so parallel
runs produce the same rows as single-process runs.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, FitError
from ..tensor_core import Rng
from .fitting import (
    OptimizerConfig,
    duplicate_atom,
    fit_least_squares,
    perturbed_measure,
)
from .model import (
    MixingMeasure,
    PretrainedExpertSpec,
    RegressionConfig,
    eval_regression_batch,
    make_ground_truth,
    make_pretrained_spec,
    sample_dataset,
)
from .voronoi import voronoi_assign, voronoi_loss_d1, voronoi_loss_d2

__all__ = [
    "RateExperimentConfig",
    "RateResult",
    "run_rate_experiment",
    "fit_loglog_slope",
]

DEFAULT_N_GRID = (200, 500, 1000, 2000, 5000, 10000)

#: replication substreams hang off this branch of the master seed
_TASK_STREAM = 1
_TRUTH_STREAM = 0


@dataclass(frozen=True)
class RateExperimentConfig:
    """Protocol of one rate experiment."""

    loss_kind: str = "D1"  # "D1" (nonlinear track) or "D2" (linear track)
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    replications: int = 20
    noise_std: float = 0.1
    dim: int = 2
    out_dim: int = 2
    rank: int = 1
    num_pretrained: int = 1
    num_true: int = 2
    extra_atoms: int = 0  # fitted atoms beyond the true count
    init_spread: float = 1e-2
    probe_size: int = 200
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.loss_kind not in ("D1", "D2"):
            raise DomainError(f"loss_kind must be D1 or D2, got {self.loss_kind!r}")
        if len(self.n_grid) < 1 or list(self.n_grid) != sorted(set(self.n_grid)):
            raise DomainError("n_grid must be strictly increasing")
        if self.replications < 1:
            raise DomainError("replications must be >= 1")

    @property
    def activation(self) -> str:
        return "tanh" if self.loss_kind == "D1" else "identity"

    def regression_config(self, sample_size: int) -> RegressionConfig:
        return RegressionConfig(
            dim=self.dim,
            out_dim=self.out_dim,
            rank=self.rank,
            num_pretrained=self.num_pretrained,
            num_true=self.num_true,
            max_fitted=self.num_true + self.extra_atoms,
            sample_size=sample_size,
            noise_std=self.noise_std,
            activation=self.activation,
        )


@dataclass
class RateResult:
    rows: list[dict]
    per_n: list[dict]  # one entry per grid point: n, mean, std, counts
    slope: float
    intercept: float
    r_squared: float
    failure_count: int
    total_fits: int
    prompt_error_slope: float | None
    summary: dict


def _branch(cfg: RateExperimentConfig) -> tuple[int, int]:
    """Distinct substream branch per experiment variant under one master seed."""
    return (0 if cfg.loss_kind == "D1" else 1, cfg.extra_atoms)


def _shared_problem(cfg: RateExperimentConfig, master_seed: int):
    """Ground truth, fixed components and probe inputs, all from one substream."""
    rng = Rng(master_seed).child(_TRUTH_STREAM, *_branch(cfg))
    reg = cfg.regression_config(sample_size=cfg.n_grid[0])
    pre = make_pretrained_spec(reg, rng.child(0))
    truth = make_ground_truth(reg, rng.child(1))
    probe = rng.child(2).uniform(reg.input_low, reg.input_high, (cfg.probe_size, cfg.dim))
    return pre, truth, probe


def _activation_values(u: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(u) if activation == "tanh" else u


def _prompt_sup_error(
    fitted: MixingMeasure,
    truth: MixingMeasure,
    probe: np.ndarray,
    activation: str,
) -> float:
    """Worst-case prompt-function gap over probe inputs, singleton cells only."""
    assignment = voronoi_assign(fitted, truth, metric="atoms")
    worst = np.nan
    for j, cell in enumerate(assignment.cells):
        if len(cell) != 1:
            continue
        i = cell[0]
        p_fit = _activation_values(probe @ fitted.w1[i].T, activation) @ fitted.w2.T
        p_true = _activation_values(probe @ truth.w1[j].T, activation) @ truth.w2.T
        gap = float(np.max(np.linalg.norm(p_fit - p_true, axis=1)))
        worst = gap if np.isnan(worst) else max(worst, gap)
    return worst


def _run_task(payload: tuple) -> dict:
    """One (sample size, replication) fit; executed possibly in a worker process."""
    cfg, master_seed, n_index, replication = payload
    n = cfg.n_grid[n_index]
    pre, truth, probe = _shared_problem(cfg, master_seed)
    reg = cfg.regression_config(sample_size=n)
    task_rng = Rng(master_seed).child(_TASK_STREAM, *_branch(cfg), n_index, replication)
    row = {
        "n": n,
        "replication": replication,
        "loss_kind": cfg.loss_kind,
        "loss": float("nan"),
        "fit_status": "ok",
        "iterations": 0,
        "seed": master_seed,
        "regression_l2": float("nan"),
        "prompt_sup_error": float("nan"),
    }
    try:
        dataset = sample_dataset(truth, pre, reg, task_rng.child(0))
        embedded = (
            duplicate_atom(truth, index=0, copies=1 + cfg.extra_atoms)
            if cfg.extra_atoms > 0
            else truth
        )
        init = perturbed_measure(embedded, task_rng.child(1), cfg.init_spread)
        result = fit_least_squares(dataset, pre, reg, init, opt=cfg.optimizer)
        fitted = result.measure
        if cfg.loss_kind == "D1":
            row["loss"] = voronoi_loss_d1(fitted, truth)
        else:
            row["loss"] = voronoi_loss_d2(fitted, truth)
        row["iterations"] = result.iterations
        row["fit_status"] = result.status
        diff = eval_regression_batch(probe, fitted, pre, reg) - eval_regression_batch(
            probe, truth, pre, reg
        )
        row["regression_l2"] = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
        if cfg.loss_kind == "D1":
            row["prompt_sup_error"] = _prompt_sup_error(
                fitted, truth, probe, cfg.activation
            )
    except (FitError, DomainError) as exc:
        row["fit_status"] = f"failed: {exc}"
    return row


def run_rate_experiment(
    cfg: RateExperimentConfig,
    master_seed: int,
    jobs: int = 1,
    experiment_id: str | None = None,
) -> RateResult:
    """Full grid of fits, mean losses per n, and the fitted log-log slope."""
    experiment_id = experiment_id or f"rate-{cfg.loss_kind.lower()}"
    tasks = [
        (cfg, master_seed, n_index, rep)
        for n_index in range(len(cfg.n_grid))
        for rep in range(cfg.replications)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    for row in rows:
        row["experiment_id"] = experiment_id
    rows.sort(key=lambda r: (r["n"], r["replication"]))

    per_n = []
    mean_points = []
    prompt_points = []
    failure_count = 0
    for n in cfg.n_grid:
        group = [r for r in rows if r["n"] == n]
        ok = [r for r in group if not r["fit_status"].startswith("failed")]
        failure_count += len(group) - len(ok)
        losses = np.array([r["loss"] for r in ok])
        entry = {
            "n": n,
            "fits": len(group),
            "ok": len(ok),
            "mean_loss": float(np.mean(losses)) if len(ok) else float("nan"),
            "std_loss": float(np.std(losses)) if len(ok) else float("nan"),
            "mean_regression_l2": float(np.mean([r["regression_l2"] for r in ok]))
            if len(ok)
            else float("nan"),
        }
        prompt_errors = [
            r["prompt_sup_error"] for r in ok if np.isfinite(r["prompt_sup_error"])
        ]
        entry["mean_prompt_sup_error"] = (
            float(np.mean(prompt_errors)) if prompt_errors else float("nan")
        )
        per_n.append(entry)
        if len(ok):
            mean_points.append((n, entry["mean_loss"]))
        if prompt_errors:
            prompt_points.append((n, entry["mean_prompt_sup_error"]))

    slope, intercept, r_squared = fit_loglog_slope(mean_points)
    prompt_slope = None
    if len(prompt_points) >= 3:
        prompt_slope = fit_loglog_slope(prompt_points)[0]

    total = len(rows)
    summary = {
        "experiment_id": experiment_id,
        "loss_kind": cfg.loss_kind,
        "n_grid": list(cfg.n_grid),
        "replications": cfg.replications,
        "noise_std": cfg.noise_std,
        "extra_atoms": cfg.extra_atoms,
        "slope": slope,
        "intercept": intercept,
        "r_squared": r_squared,
        "prompt_error_slope": prompt_slope,
        "failure_count": failure_count,
        "total_fits": total,
        "failure_rate": failure_count / total if total else 0.0,
        "valid": failure_count < 0.1 * total,
        "per_n": per_n,
        "master_seed": master_seed,
    }
    return RateResult(
        rows=rows,
        per_n=per_n,
        slope=slope,
        intercept=intercept,
        r_squared=r_squared,
        failure_count=failure_count,
        total_fits=total,
        prompt_error_slope=prompt_slope,
        summary=summary,
    )


def fit_loglog_slope(points: list[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares of log(loss) on log(n).

    Nonpositive losses cannot be log-transformed; such points are dropped with
    a warning. Returns (slope, intercept, R^2); a perfectly constant series
    has slope 0 and R^2 defined as 1.
    """
    kept = [(n, loss) for n, loss in points if loss > 0]
    if len(kept) < len(points):
        warnings.warn(
            f"dropped {len(points) - len(kept)} nonpositive-loss points from slope fit",
            stacklevel=2,
        )
    if len(kept) < 3:
        raise DomainError(f"need at least 3 positive points, have {len(kept)}")
    log_n = np.log([n for n, _ in kept])
    log_loss = np.log([loss for _, loss in kept])
    slope, intercept = np.polyfit(log_n, log_loss, 1)
    predicted = slope * log_n + intercept
    ss_res = float(np.sum((log_loss - predicted) ** 2))
    ss_tot = float(np.sum((log_loss - np.mean(log_loss)) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r_squared)
