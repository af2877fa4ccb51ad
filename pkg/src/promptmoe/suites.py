"""Executable verification suites behind the command-line interface.

Each suite returns a :class:`SuiteOutcome`: CSV-ready rows, a JSON-ready
summary, and named assertion failures (empty when the suite passes). All
randomness flows from the master seed through counter-based substreams, so a
suite rerun with the same configuration reproduces its rows exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import gradient_engine as ge
from .estimation import RateExperimentConfig, run_rate_experiment
from .prompt_attention import (
    moe_decompose,
    moe_eval,
    prompted_head_outputs,
    prompted_msa_forward,
    random_attention_weights,
)
from .tensor_core import Rng
from .vapt_prompts import (
    PromptShapeConfig,
    count_trainable_scalars,
    init_vapt_params,
    vapt_forward,
    vapt_param_count,
    vpt_param_count,
)

__all__ = [
    "SuiteOutcome",
    "EQUIVALENCE_TOLERANCE",
    "GRADCHECK_TOLERANCE",
    "RATE_SLOPE_WINDOW",
    "run_equivalence_suite",
    "run_gradcheck_suite",
    "run_params_suite",
    "run_rate_suite",
]

EQUIVALENCE_TOLERANCE = 1e-10
GATE_SUM_TOLERANCE = 1e-12
GRADCHECK_TOLERANCE = 1e-5
#: empirical log-log slope window consistent with a ~n^{-1/2} rate
RATE_SLOPE_WINDOW = (-0.65, -0.35)

#: reference configuration: 12 blocks, 10 prompts, 14x14 map, 3x3 kernel,
#: rank-8 projector at width 768 — the adaptive count must undercut plain
#: prompt tuning here.
REFERENCE_SHAPE = PromptShapeConfig(
    blocks=12, prompts=10, height=14, width=14, kernel_size=3, rank=8, dim=768
)
REFERENCE_ADAPTIVE_COUNT = 29676
REFERENCE_PLAIN_COUNT = 92160


@dataclass
class SuiteOutcome:
    name: str
    rows: list[dict]
    summary: dict
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def run_equivalence_suite(
    seed: int,
    instances: int = 100,
    max_tokens: int = 8,
    max_dim: int = 16,
    max_prompts: int = 4,
    tolerance: float = EQUIVALENCE_TOLERANCE,
) -> SuiteOutcome:
    """Mixture re-evaluation must reproduce every prompted attention row."""
    start = time.perf_counter()
    rng = Rng(seed).child(10)
    rows = []
    for k in range(instances):
        r = rng.child(k)
        heads = int(r.child(0).integers(0, 3))
        num_heads = (1, 2, 4)[heads]
        head_dim = int(r.child(1).integers(1, max_dim // num_heads + 1))
        d = num_heads * head_dim
        n = int(r.child(2).integers(1, max_tokens + 1))
        n_p = int(r.child(3).integers(0, max_prompts + 1))
        w = random_attention_weights(d, num_heads, r.child(4))
        X = r.child(5).uniform(-1.0, 1.0, (n, d))
        P = r.child(6).uniform(-1.0, 1.0, (n_p, d))
        head_rows = prompted_head_outputs(X, P, w)
        full = prompted_msa_forward(X, P, w)
        max_head_diff = 0.0
        max_gate_gap = 0.0
        max_output_diff = 0.0
        for i in range(n):
            per_head = []
            for m in range(num_heads):
                dec = moe_decompose(X, P, w, m, i)
                value = moe_eval(dec)
                per_head.append(value)
                max_head_diff = max(
                    max_head_diff, float(np.max(np.abs(value - head_rows[m, i])))
                )
                max_gate_gap = max(
                    max_gate_gap, abs(float(dec.gating_weights().sum()) - 1.0)
                )
            rebuilt = np.concatenate(per_head) @ w.wo
            max_output_diff = max(
                max_output_diff, float(np.max(np.abs(rebuilt - full[i])))
            )
        rows.append(
            {
                "instance": k,
                "heads": num_heads,
                "dim": d,
                "tokens": n,
                "prompts": n_p,
                "max_head_diff": max_head_diff,
                "max_output_diff": max_output_diff,
                "max_gate_gap": max_gate_gap,
            }
        )
    worst_head = max(r["max_head_diff"] for r in rows)
    worst_output = max(r["max_output_diff"] for r in rows)
    worst_gate = max(r["max_gate_gap"] for r in rows)
    failures = []
    if worst_head >= tolerance:
        failures.append(
            f"moe-equivalence: max per-head abs diff {worst_head:.3e} >= {tolerance}"
        )
    if worst_output >= tolerance:
        failures.append(
            f"moe-equivalence-projected: max output abs diff {worst_output:.3e} >= {tolerance}"
        )
    if worst_gate >= GATE_SUM_TOLERANCE:
        failures.append(
            f"gating-normalization: |sum - 1| = {worst_gate:.3e} >= {GATE_SUM_TOLERANCE}"
        )
    summary = {
        "instances": instances,
        "max_abs_diff": worst_head,
        "max_output_diff": worst_output,
        "max_gate_gap": worst_gate,
        "tolerance": tolerance,
        "elapsed_seconds": time.perf_counter() - start,
    }
    return SuiteOutcome("equivalence", rows, summary, failures)


def run_gradcheck_suite(
    seed: int,
    seeds: int = 20,
    step: float = 1e-5,
    tolerance: float = GRADCHECK_TOLERANCE,
) -> SuiteOutcome:
    """Reverse-mode gradients against central differences, tiny shapes."""
    start = time.perf_counter()
    rng = Rng(seed).child(11)
    rows = []
    worst = 0.0
    for k in range(seeds):
        r = rng.child(k)
        num_heads = (1, 2)[int(r.child(0).integers(0, 2))]
        head_dim = int(r.child(1).integers(2, 5))
        d = num_heads * head_dim  # stays <= 8
        n_p = int(r.child(2).integers(1, 3))
        rank = int(r.child(3).integers(1, min(3, d)))
        kernel = int(r.child(4).integers(1, 3))
        w = random_attention_weights(d, num_heads, r.child(5))
        shape = PromptShapeConfig(
            blocks=1, prompts=n_p, height=3, width=3, kernel_size=kernel, rank=rank, dim=d
        )
        X = r.child(6).uniform(-1.0, 1.0, (shape.tokens, d))
        prompts = r.child(8).uniform(-1.0, 1.0, (n_p, d))
        # Targets sit close to the forward output: small residuals keep the
        # central-difference oracle's roundoff noise far below the tolerance
        # without changing which Jacobian entries the check exercises.
        y_vpt = prompted_msa_forward(X, prompts, w) + r.child(7).normal(
            0.0, 5e-4, (shape.tokens, d)
        )
        checks = [
            (
                "vpt",
                ge.vpt_prompt_loss(X, y_vpt, w),
                ge.vpt_param_vector(prompts),
            )
        ]
        for activation in ("tanh", "identity"):
            params = init_vapt_params(shape, r.child(9), activation=activation)
            y_vapt = vapt_forward(X, params, w, 0) + r.child(7).normal(
                0.0, 5e-4, (shape.tokens, d)
            )
            checks.append(
                (
                    f"vapt-{activation}",
                    ge.vapt_loss(X, y_vapt, w, params),
                    ge.vapt_param_vector(params),
                )
            )
        for name, loss, vector in checks:
            err = ge.grad_check(loss, vector, step)
            worst = max(worst, err)
            rows.append(
                {
                    "seed_index": k,
                    "check": name,
                    "dim": d,
                    "prompts": n_p,
                    "rank": rank,
                    "kernel_size": kernel,
                    "parameters": len(vector),
                    "max_rel_err": err,
                }
            )
    failures = []
    if worst >= tolerance:
        failures.append(
            f"gradient-check: max relative error {worst:.3e} >= {tolerance}"
        )
    summary = {
        "seeds": seeds,
        "checks": len(rows),
        "max_rel_err": worst,
        "tolerance": tolerance,
        "step": step,
        "elapsed_seconds": time.perf_counter() - start,
    }
    return SuiteOutcome("gradcheck", rows, summary, failures)


def _param_grid() -> list[PromptShapeConfig]:
    grid = []
    for blocks in (1, 2, 12):
        for prompts in (1, 4):
            for height, width, kernel in ((3, 3, 1), (3, 3, 2), (4, 5, 2)):
                grid.append(
                    PromptShapeConfig(
                        blocks=blocks,
                        prompts=prompts,
                        height=height,
                        width=width,
                        kernel_size=kernel,
                        rank=1 + (blocks + prompts) % 3,
                        dim=6 + 2 * ((blocks * prompts) % 4),
                    )
                )
    grid.append(REFERENCE_SHAPE)
    return grid


def run_params_suite(seed: int) -> SuiteOutcome:
    """Closed-form parameter counts against enumeration of actual arrays."""
    start = time.perf_counter()
    rng = Rng(seed).child(12)
    rows = []
    failures = []
    for idx, shape in enumerate(_param_grid()):
        params = init_vapt_params(shape, rng.child(idx))
        formula = vapt_param_count(shape)
        formula_ln = vapt_param_count(shape, include_layer_norm=True)
        enumerated = count_trainable_scalars(params)
        enumerated_ln = count_trainable_scalars(params, include_layer_norm=True)
        plain = vpt_param_count(shape)
        ok = formula == enumerated and formula_ln == enumerated_ln
        if not ok:
            failures.append(
                f"param-count: config {idx} formula {formula} != enumeration {enumerated}"
            )
        rows.append(
            {
                "config": idx,
                "blocks": shape.blocks,
                "prompts": shape.prompts,
                "height": shape.height,
                "width": shape.width,
                "kernel_size": shape.kernel_size,
                "rank": shape.rank,
                "dim": shape.dim,
                "adaptive_count": formula,
                "adaptive_count_with_ln": formula_ln,
                "plain_count": plain,
                "enumeration_matches": ok,
            }
        )
    reference = vapt_param_count(REFERENCE_SHAPE)
    reference_plain = vpt_param_count(REFERENCE_SHAPE)
    if reference != REFERENCE_ADAPTIVE_COUNT:
        failures.append(
            f"param-count-reference: adaptive {reference} != {REFERENCE_ADAPTIVE_COUNT}"
        )
    if reference_plain != REFERENCE_PLAIN_COUNT:
        failures.append(
            f"param-count-reference: plain {reference_plain} != {REFERENCE_PLAIN_COUNT}"
        )
    if not reference < reference_plain:
        failures.append("param-efficiency: adaptive count not below plain count")
    summary = {
        "configs": len(rows),
        "reference_adaptive": reference,
        "reference_plain": reference_plain,
        "elapsed_seconds": time.perf_counter() - start,
    }
    return SuiteOutcome("params", rows, summary, failures)


_RATE_CSV_COLUMNS = (
    "experiment_id",
    "n",
    "replication",
    "loss_kind",
    "loss",
    "fit_status",
    "iterations",
    "seed",
)


def run_rate_suite(
    kind: str,
    seed: int,
    jobs: int = 1,
    n_grid: tuple[int, ...] | None = None,
    replications: int = 20,
    noise_std: float = 0.1,
    slope_window: tuple[float, float] = RATE_SLOPE_WINDOW,
) -> SuiteOutcome:
    """Empirical convergence rate of a Voronoi loss; slope must sit in-window."""
    start = time.perf_counter()
    name = f"rate-{'nonlinear' if kind == 'D1' else 'linear'}"
    cfg = RateExperimentConfig(
        loss_kind=kind,
        n_grid=tuple(n_grid) if n_grid else RateExperimentConfig().n_grid,
        replications=replications,
        noise_std=noise_std,
    )
    result = run_rate_experiment(cfg, seed, jobs=jobs, experiment_id=name)
    rows = [{c: row[c] for c in _RATE_CSV_COLUMNS} for row in result.rows]
    failures = []
    if not result.summary["valid"]:
        failures.append(
            f"rate-failure-budget: {result.failure_count}/{result.total_fits} fits failed"
        )
    lo, hi = slope_window
    if not lo <= result.slope <= hi:
        failures.append(
            f"rate-slope: fitted slope {result.slope:.4f} outside [{lo}, {hi}]"
        )
    summary = dict(result.summary)
    summary["slope_window"] = list(slope_window)
    summary["elapsed_seconds"] = time.perf_counter() - start
    return SuiteOutcome(name, rows, summary, failures)
