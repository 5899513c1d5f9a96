"""Augmented transition matrices and their forward products.

All vectors are rows and matrices act from the right: ``y_k = y_{k-1} @ M_k``
and ``y_k = y_0 @ T_k`` with ``T_k = M_1 @ ... @ M_k``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TextIO

import numpy as np

from .graph import GraphSpec, augmented_space
from .simulator import DropMask, Trace, all_reliable

CONSTRUCTION_TOL = 1e-12
PRODUCT_TOL = 1e-10


@dataclass(frozen=True)
class TransitionMatrix:
    values: np.ndarray
    mask: DropMask

    @property
    def n(self) -> int:
        return self.values.shape[0]


@lru_cache(maxsize=64)
def _link_index(g: GraphSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = np.array([e.source for e in g.buffer_edges], dtype=np.intp)
    dst = np.array([e.target for e in g.buffer_edges], dtype=np.intp)
    return src, dst, g.m + np.arange(len(src), dtype=np.intp)


def build_matrix(g: GraphSpec, mask: DropMask) -> TransitionMatrix:
    """Transition matrix of one round given which links delivered.

    Node row ``i``: ``1/D_i`` on itself, and for each link ``(i, j)``
    ``1/D_i`` on ``j`` if it delivered, else on buffer ``(i, j)``.
    Buffer row ``(i, j)``: ``1`` on ``j`` if the link delivered, else on
    itself.
    """
    mask.check(g)
    src, dst, buf = _link_index(g)
    x = mask.reliable
    inv_deg = 1.0 / g.degrees
    M = np.zeros((g.n, g.n))
    M[np.arange(g.m), np.arange(g.m)] = inv_deg
    M[src[x], dst[x]] = inv_deg[src[x]]
    M[buf[x], dst[x]] = 1.0
    M[src[~x], buf[~x]] = inv_deg[src[~x]]
    M[buf[~x], buf[~x]] = 1.0
    return TransitionMatrix(M, mask)


def ideal_matrix(g: GraphSpec) -> np.ndarray:
    """``m x m`` matrix of the lossless iteration: ``M[i, j] = 1/D_i`` for ``j`` in ``O_i``."""
    M = np.zeros((g.m, g.m))
    for e in g.edges:
        M[e.source, e.target] = 1.0 / g.degrees[e.source]
    return M


def reliable_matrix(g: GraphSpec) -> np.ndarray:
    return build_matrix(g, all_reliable(g, 1)).values


def check_row_stochastic(A: np.ndarray, tol: float = CONSTRUCTION_TOL) -> None:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if np.any(A < -tol):
        raise ValueError("matrix has negative entries")
    dev = np.max(np.abs(A.sum(axis=1) - 1.0))
    if dev > tol:
        raise ValueError(f"row sums deviate from 1 by {dev:.3g} (tolerance {tol:g})")


@dataclass(frozen=True)
class ProductState:
    """Forward product ``T_k`` plus the partial ``W`` block of length ``block_length``.

    ``completed`` holds the block finished by the latest accumulate, if any.
    """

    T: np.ndarray
    block_length: int = 1
    k: int = 0
    W: np.ndarray | None = None
    completed: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def identity(cls, n: int, block_length: int = 1) -> ProductState:
        if block_length < 1:
            raise ValueError("block_length must be >= 1")
        return cls(np.eye(n), block_length, 0, np.eye(n))


def accumulate(p: ProductState, M: TransitionMatrix | np.ndarray) -> ProductState:
    """Absorb one more round: ``T <- T @ M``."""
    M = M.values if isinstance(M, TransitionMatrix) else np.asarray(M)
    if M.shape != p.T.shape:
        raise ValueError(f"dimension mismatch: product is {p.T.shape}, factor is {M.shape}")
    T = p.T @ M
    check_row_stochastic(T, PRODUCT_TOL)
    W = p.W @ M
    k = p.k + 1
    if k % p.block_length == 0:
        return replace(p, T=T, k=k, W=np.eye(M.shape[0]), completed=W)
    return replace(p, T=T, k=k, W=W, completed=None)


def products(g: GraphSpec, masks, block_length: int = 1):
    """Yield the :class:`ProductState` after each mask."""
    p = ProductState.identity(g.n, block_length)
    for mask in masks:
        p = accumulate(p, build_matrix(g, mask))
        yield p


@dataclass
class OracleReport:
    tol: float
    deviation: np.ndarray  # per round, max over y and z and all indices
    first_failure: tuple[int, int] | None  # (round, augmented index)

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max()) if self.deviation.size else 0.0

    @property
    def passed(self) -> bool:
        return self.first_failure is None


def oracle_check(trace: Trace, g: GraphSpec, tol: float = PRODUCT_TOL) -> OracleReport:
    """Compare a protocol trace with ``y_0 T_k`` computed from its recorded masks.

    The augmented initial vector carries the node values followed by zeros
    for every buffer; the recorded state is node masses then ``sigma - rho``.
    """
    y0 = trace.augmented("y")[0]
    z0 = trace.augmented("z")[0]
    ys = trace.augmented("y")
    zs = trace.augmented("z")
    dev = np.zeros(trace.steps)
    first = None
    for p in products(g, trace.masks):
        k = p.k
        err = np.maximum(np.abs(y0 @ p.T - ys[k]), np.abs(z0 @ p.T - zs[k]))
        dev[k - 1] = err.max()
        if first is None and not err.max() <= tol:
            first = (k, int(np.argmax(err)))
    return OracleReport(tol=tol, deviation=dev, first_failure=first)


def write_matrix_csv(g: GraphSpec, M: np.ndarray, fh: TextIO) -> None:
    labels = augmented_space(g).labels()
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["row"] + labels)
    for label, row in zip(labels, M):
        w.writerow([label] + [format(float(v), ".17g") for v in row])
