"""Repeated seeded runs and the empirical check of the delta(T_k) tail bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ergodicity import ErgodicityReport, delta_trace
from .simulator import RunConfig, Trace, run


@dataclass
class MonteCarloSummary:
    runs: int
    steps: int
    seed: int
    target: float
    final_errors: np.ndarray
    min_update_counts: np.ndarray  # per run, fewest estimate refreshes over nodes
    deltas: np.ndarray             # (runs, steps), deltas[r, k-1] = delta(T_k)
    report: ErgodicityReport | None = None
    tail_rows: list[dict] = field(default_factory=list)

    @property
    def tail_bound_holds(self) -> bool:
        return all(row["within_bound"] for row in self.tail_rows)

    def to_document(self) -> dict:
        doc = {
            "runs": self.runs,
            "steps": self.steps,
            "seed": self.seed,
            "target": self.target,
            "final_error_max": float(self.final_errors.max()),
            "final_error_median": float(np.median(self.final_errors)),
            "runs_below_1e-6": int(np.sum(self.final_errors < 1e-6)),
            "min_update_count": int(self.min_update_counts.min()),
            "final_delta_max": float(self.deltas[:, -1].max()),
        }
        if self.report is not None:
            doc["constants"] = self.report.constants()
            doc["tail_bound_holds"] = self.tail_bound_holds if self.tail_rows else None
        return doc


def tail_rows(deltas: np.ndarray, report: ErgodicityReport) -> list[dict]:
    """Per round ``k >= ceil(8l/w)``: fraction of runs with ``delta(T_k) > beta**k``
    against ``alpha**k`` plus three binomial standard errors."""
    if not report.defined:
        return []
    runs, steps = deltas.shape
    alpha, beta = report.alpha, report.beta
    rows = []
    for k in range(report.k_threshold, steps + 1):
        ak = alpha**k
        frac = float(np.mean(deltas[:, k - 1] > beta**k))
        allowed = ak + 3 * math.sqrt(ak * (1 - ak) / runs)
        rows.append({
            "k": k,
            "exceed_fraction": frac,
            "alpha_pow_k": ak,
            "allowed": allowed,
            "within_bound": frac <= allowed,
        })
    return rows


def monte_carlo(config: RunConfig, runs: int, report: ErgodicityReport | None = None) -> MonteCarloSummary:
    """Run ``runs`` independent streams keyed by ``(config.seed, run index)``.

    Results are stored in run-index order so the summary depends only on
    the configuration.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    block = report.block_length if report is not None else 1
    errors = np.zeros(runs)
    counts = np.zeros(runs, dtype=np.int64)
    deltas = np.zeros((runs, config.steps))
    for r in range(runs):
        trace: Trace = run(replace(config, run_index=r))
        errors[r] = trace.final_error()
        counts[r] = min(len(u) for u in trace.update_times)
        deltas[r], _, _ = delta_trace(config.graph, trace.masks, block)
    summary = MonteCarloSummary(
        runs=runs,
        steps=config.steps,
        seed=config.seed,
        target=config.init.target,
        final_errors=errors,
        min_update_counts=counts,
        deltas=deltas,
        report=report,
    )
    if report is not None:
        summary.tail_rows = tail_rows(deltas, report)
    return summary
