"""Least-squares fitting of the mixing measure.

The objective is the sum of squared residuals of the gated mixture regression
over a dataset; gradients come from the import-selected hot kernels. The
optimizer is a projected first-order method with one adaptive step size per
coordinate (sign-based growth/shrink) wrapped in monotone acceptance: a trial
step that would increase the objective is rejected and all step sizes shrink,
so the accepted-objective trace is non-increasing by construction. Parameters
are clipped into the compact box [-box, box] after every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, FitError
from ..tensor_core import Rng
from . import kernels
from .model import (
    MixingMeasure,
    PretrainedExpertSpec,
    RegressionConfig,
    pretrained_expert_values,
    pretrained_scores,
)

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "fit_least_squares",
    "random_measure",
    "perturbed_measure",
    "duplicate_atom",
]


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 5000
    patience: int = 50
    rel_tol: float = 1e-10
    step_init: float = 0.01
    step_min: float = 1e-14
    step_max: float = 1.0
    grow: float = 1.2
    shrink: float = 0.5
    box: float = 5.0
    restarts: int = 5


@dataclass
class FitResult:
    measure: MixingMeasure
    objective: float
    iterations: int
    converged: bool
    status: str
    objective_trace: np.ndarray  # accepted objectives, non-increasing
    n_evals: int


def random_measure(cfg: RegressionConfig, rng: Rng, num_atoms: int | None = None) -> MixingMeasure:
    """Random measure inside the parameter box, for stress-mode starts."""
    ell = cfg.max_fitted if num_atoms is None else num_atoms
    return MixingMeasure(
        log_weights=rng.uniform(-1.0, 1.0, ell),
        w1=rng.uniform(-1.5, 1.5, (ell, cfg.rank, cfg.dim)),
        w2=rng.uniform(-1.5, 1.5, (cfg.dim, cfg.rank)),
    )


def perturbed_measure(G: MixingMeasure, rng: Rng, spread: float) -> MixingMeasure:
    """Gaussian jitter of every coordinate; used for oracle-style inits."""
    return MixingMeasure(
        log_weights=G.log_weights + rng.normal(0.0, spread, G.log_weights.shape),
        w1=G.w1 + rng.normal(0.0, spread, G.w1.shape),
        w2=G.w2 + rng.normal(0.0, spread, G.w2.shape),
    )


def duplicate_atom(G: MixingMeasure, index: int = 0, copies: int = 2) -> MixingMeasure:
    """Split one atom into equal-weight copies; the represented measure is unchanged."""
    if copies < 2:
        return G.copy()
    log_w = G.log_weights
    split = np.full(copies, log_w[index] - np.log(copies))
    return MixingMeasure(
        log_weights=np.concatenate([np.delete(log_w, index), split]),
        w1=np.concatenate(
            [np.delete(G.w1, index, axis=0), np.repeat(G.w1[index : index + 1], copies, axis=0)]
        ),
        w2=G.w2.copy(),
    )


class _Objective:
    """Flattened view of (log_weights, w1, w2) over a fixed dataset."""

    def __init__(self, X, Y, pre, cfg, ell):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.Y = np.ascontiguousarray(Y, dtype=np.float64)
        self.pre_scores = pretrained_scores(self.X, pre)
        self.pre_experts = pretrained_expert_values(self.X, pre)
        self.xb = np.ascontiguousarray(self.X @ cfg.score_proj)
        self.out_proj = cfg.output_proj
        self.act_code = cfg.activation_code
        self.ell = ell
        self.rank = cfg.rank
        self.dim = cfg.dim
        self.n_evals = 0

    def flatten(self, G: MixingMeasure) -> np.ndarray:
        return np.concatenate([G.log_weights, G.w1.ravel(), G.w2.ravel()])

    def unflatten(self, theta: np.ndarray) -> MixingMeasure:
        ell, r, d = self.ell, self.rank, self.dim
        return MixingMeasure(
            log_weights=theta[:ell].copy(),
            w1=theta[ell : ell + ell * r * d].reshape(ell, r, d).copy(),
            w2=theta[ell + ell * r * d :].reshape(d, r).copy(),
        )

    def __call__(self, theta: np.ndarray, want_grad: bool = True):
        ell, r, d = self.ell, self.rank, self.dim
        log_w = theta[:ell]
        w1 = theta[ell : ell + ell * r * d].reshape(ell, r, d)
        w2 = theta[ell + ell * r * d :].reshape(d, r)
        self.n_evals += 1
        obj, gb, gw1, gw2 = kernels.objective_and_grad(
            self.X, self.Y, self.pre_scores, self.pre_experts, self.xb,
            log_w, w1, w2, self.out_proj, self.act_code, want_grad,
        )
        if not want_grad:
            return obj, None
        return obj, np.concatenate([gb, gw1.ravel(), gw2.ravel()])


def _minimize(objective: _Objective, theta0: np.ndarray, opt: OptimizerConfig):
    """Monotone per-coordinate adaptive descent from one start."""
    theta = np.clip(theta0, -opt.box, opt.box)
    f, g = objective(theta)
    if not np.isfinite(f):
        return None
    delta = np.full_like(theta, opt.step_init)
    trace = [f]
    f_hist = [f]
    iterations = 0
    converged = False
    for iterations in range(1, opt.max_iterations + 1):
        trial = np.clip(theta - np.sign(g) * delta, -opt.box, opt.box)
        f_new, g_new = objective(trial)
        if np.isfinite(f_new) and f_new <= f:
            same = np.sign(g) * np.sign(g_new)
            delta = np.where(
                same > 0,
                np.minimum(delta * opt.grow, opt.step_max),
                np.where(same < 0, np.maximum(delta * opt.shrink, opt.step_min), delta),
            )
            theta, f, g = trial, f_new, g_new
            trace.append(f)
        else:
            delta = np.maximum(delta * opt.shrink, opt.step_min)
        f_hist.append(f)
        if len(f_hist) > opt.patience:
            old, new = f_hist[-opt.patience - 1], f_hist[-1]
            if old - new <= opt.rel_tol * max(old, 1e-300):
                converged = True
                break
        if np.all(delta <= opt.step_min):
            converged = True
            break
    return theta, f, iterations, converged, np.asarray(trace)


def fit_least_squares(
    dataset: tuple[np.ndarray, np.ndarray],
    pre: PretrainedExpertSpec,
    cfg: RegressionConfig,
    init: MixingMeasure,
    opt: OptimizerConfig | None = None,
    rng: Rng | None = None,
    starts: int = 1,
) -> FitResult:
    """Best mixing measure found by (multi-start) monotone adaptive descent.

    ``starts=1`` runs from ``init`` alone (oracle-init mode); larger values
    add random restarts inside the box (stress mode, needs ``rng``). A start
    whose objective is non-finite is replaced by a fresh random init, up to
    ``opt.restarts`` times; if every attempt fails a :class:`FitError` with
    diagnostics is raised.
    """
    opt = opt or OptimizerConfig()
    X, Y = dataset
    if init.num_atoms < 1 or init.num_atoms > cfg.max_fitted:
        raise DomainError(
            f"init must carry between 1 and {cfg.max_fitted} atoms, has {init.num_atoms}"
        )
    if starts > 1 and rng is None:
        raise DomainError("multi-start mode needs an rng")
    objective = _Objective(X, Y, pre, cfg, init.num_atoms)

    best = None
    failures: list[str] = []
    for start in range(starts):
        if start == 0:
            theta0 = objective.flatten(init)
        else:
            theta0 = objective.flatten(random_measure(cfg, rng, init.num_atoms))
        outcome = _minimize(objective, theta0, opt)
        retries = 0
        while outcome is None and retries < opt.restarts:
            retries += 1
            failures.append(f"start {start}: non-finite objective, restart {retries}")
            if rng is None:
                break
            theta0 = objective.flatten(random_measure(cfg, rng, init.num_atoms))
            outcome = _minimize(objective, theta0, opt)
        if outcome is None:
            failures.append(f"start {start}: exhausted restarts")
            continue
        theta, f, iterations, converged, trace = outcome
        if best is None or f < best[1]:
            best = (theta, f, iterations, converged, trace)

    if best is None:
        raise FitError(
            "all optimization starts failed with non-finite objectives",
            diagnostics={
                "attempts": failures,
                "starts": starts,
                "restarts": opt.restarts,
                "num_atoms": init.num_atoms,
                "sample_size": int(X.shape[0]),
            },
        )
    theta, f, iterations, converged, trace = best
    return FitResult(
        measure=objective.unflatten(theta),
        objective=f,
        iterations=iterations,
        converged=converged,
        status="ok" if converged else "max_iterations",
        objective_trace=trace,
        n_evals=objective.n_evals,
    )
