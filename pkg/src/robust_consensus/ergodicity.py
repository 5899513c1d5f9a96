"""Coefficients of ergodicity and the constants behind the convergence bounds.

``delta`` measures the largest column spread of a row-stochastic matrix,
``lambda_`` one minus the smallest overlap between two rows. A matrix is
scrambling when ``lambda_ < 1``. For any row-stochastic factors

    delta(A_1 ... A_p) <= lambda_(A_1) ... lambda_(A_{p-1}) delta(A_p)

so products containing many scrambling blocks have nearly equal rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .graph import GraphSpec
from .markov import (
    PRODUCT_TOL,
    build_matrix,
    check_row_stochastic,
    ideal_matrix,
    products,
    reliable_matrix,
)
from .protocol import mu_for_node
from .simulator import DropMask, draw_mask, make_rng

EXACT_ENUMERATION_LIMIT = 16
# fewer scrambling blocks than this and the binomial error bar on w is
# too wide to build bounds on
MIN_SCRAMBLING_HITS = 10


def _checked(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    check_row_stochastic(A, PRODUCT_TOL)
    return A


def delta(A) -> float:
    """``max_j max_{i1,i2} |A[i1, j] - A[i2, j]|``."""
    A = _checked(A)
    return float(np.max(np.ptp(A, axis=0)))


def lambda_(A) -> float:
    """``1 - min_{i1,i2} sum_j min(A[i1, j], A[i2, j])``."""
    A = _checked(A)
    overlap = np.minimum(A[:, None, :], A[None, :, :]).sum(axis=2)
    # for rows summing to one this equals half the L1 distance, which is
    # exactly zero for identical rows; disjoint rows are pinned at one
    tv = 0.5 * np.abs(A[:, None, :] - A[None, :, :]).sum(axis=2)
    lam = np.where(overlap > 0, np.minimum(tv, np.nextafter(1.0, 0.0)), 1.0)
    return float(max(0.0, lam.max()))


def scrambling_by_support(A) -> bool:
    """Every pair of rows shares a column where both are positive."""
    P = (np.asarray(A) > 0).astype(np.int64)
    return bool(np.all(P @ P.T > 0))


def is_scrambling(A) -> bool:
    """True iff ``lambda_(A) < 1``; the support test must agree."""
    by_support = scrambling_by_support(A)
    by_lambda = lambda_(A) < 1.0
    if by_support != by_lambda:
        raise ArithmeticError(
            "support and lambda scrambling tests disagree; row overlap is below float resolution"
        )
    return by_support


class HajnalCheck(NamedTuple):
    lhs: float     # delta of the product
    middle: float  # lambdas of all but the last factor, times delta of the last
    rhs: float     # product of all lambdas

    def holds(self, slack: float = 1e-12) -> bool:
        return self.lhs <= self.middle + slack and self.middle <= self.rhs + slack


def hajnal_bound_check(factors: Sequence[np.ndarray]) -> HajnalCheck:
    if not factors:
        raise ValueError("need at least one factor")
    shape = np.asarray(factors[0]).shape
    for A in factors:
        if np.asarray(A).shape != shape:
            raise ValueError("factors must all have the same square shape")
    prod = np.eye(shape[0])
    for A in factors:
        prod = prod @ np.asarray(A, dtype=float)
    lams = [lambda_(A) for A in factors]
    return HajnalCheck(
        lhs=delta(prod),
        middle=math.prod(lams[:-1]) * delta(factors[-1]),
        rhs=math.prod(lams),
    )


def derive_c(g: GraphSpec) -> float:
    """Smallest positive entry any transition matrix of ``g`` can have.

    Positive entries are ``1/D_i`` in node rows and ``1`` in buffer rows.
    """
    return float(1.0 / g.degrees.max())


def _saturation_power(P: np.ndarray, done, limit: int) -> int:
    P = P > 0
    power = P.copy()
    for p in range(1, limit + 1):
        if done(power):
            return p
        power = (power.astype(np.int64) @ P.astype(np.int64)) > 0
    raise ArithmeticError(f"no saturation within {limit} steps")


def derive_l(g: GraphSpec) -> int:
    """Index of primitivity of the lossless ``m x m`` matrix.

    Smallest ``p`` with every entry of ``M**p`` positive.
    """
    M = ideal_matrix(g)
    return _saturation_power(M, lambda B: bool(B.all()), (g.m - 1) ** 2 + 1)


def derive_block_length(g: GraphSpec) -> int:
    """Smallest ``p`` for which the lossless augmented matrix to the ``p``
    has strictly positive node columns in every row, buffers included.

    Buffer rows of the lossless matrix are unit rows pointing at a node, so
    this is ``derive_l(g) + 1`` whenever the graph has links.
    """
    M = reliable_matrix(g)
    m = g.m
    return _saturation_power(M, lambda B: bool(B[:, :m].all()), (m - 1) ** 2 + 2)


@dataclass
class WDEstimate:
    """Probability ``w`` that an ``l``-block is scrambling and the largest
    ``lambda_`` ``d`` among scrambling blocks.

    ``gamma[i]`` is the probability (or observed fraction) that the block
    has a strictly positive column ``i``.
    """

    w: float
    d: float
    l: int
    samples: int | None  # None for exact enumeration
    scrambling: int | None
    gamma: np.ndarray = field(repr=False)

    @property
    def exact(self) -> bool:
        return self.samples is None

    @property
    def insufficient(self) -> bool:
        if self.exact:
            return self.w <= 0
        return self.scrambling < MIN_SCRAMBLING_HITS

    @property
    def stderr(self) -> float:
        if self.exact:
            return 0.0
        return math.sqrt(self.w * (1 - self.w) / self.samples)


def _block(g: GraphSpec, masks: Iterable[DropMask]) -> np.ndarray:
    W = np.eye(g.n)
    for mask in masks:
        W = W @ build_matrix(g, mask).values
    return W


def exact_w_d(g: GraphSpec, l: int, limit: int = EXACT_ENUMERATION_LIMIT) -> WDEstimate:
    """Enumerate every ``l``-round mask sequence and weight by its probability."""
    nb = len(g.buffer_edges)
    if l * nb > limit:
        raise ValueError(f"{l} x {nb} link outcomes exceed the enumeration limit of {limit} bits")
    q = g.q_buffers
    singles = []
    for bits in itertools.product((False, True), repeat=nb):
        x = np.array(bits, dtype=bool)
        prob = float(np.prod(np.where(x, q, 1 - q)))
        singles.append((prob, build_matrix(g, DropMask(1, x)).values))
    w = 0.0
    d = -math.inf
    gamma = np.zeros(g.m)
    for combo in itertools.product(singles, repeat=l):
        prob = math.prod(p for p, _ in combo)
        if prob == 0.0:
            continue
        W = combo[0][1]
        for _, M in combo[1:]:
            W = W @ M
        gamma += prob * (W[:, : g.m] > 0).all(axis=0)
        if scrambling_by_support(W):
            w += prob
            d = max(d, lambda_(W))
    return WDEstimate(w=w, d=d if w > 0 else math.nan, l=l, samples=None, scrambling=None, gamma=gamma)


def estimate_w_d(g: GraphSpec, l: int, samples: int, seed: int = 0) -> WDEstimate:
    """Monte Carlo estimate of ``w`` and ``d`` from ``samples`` independent blocks."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = make_rng(seed)
    hits = 0
    d = -math.inf
    gamma = np.zeros(g.m)
    for _ in range(samples):
        W = _block(g, (draw_mask(g, rng, k) for k in range(1, l + 1)))
        gamma += (W[:, : g.m] > 0).all(axis=0)
        if scrambling_by_support(W):
            hits += 1
            d = max(d, lambda_(W))
    return WDEstimate(
        w=hits / samples,
        d=d if hits else math.nan,
        l=l,
        samples=samples,
        scrambling=hits,
        gamma=gamma / samples,
    )


class CertifiedRound(NamedTuple):
    k: int
    delta: float
    beta_pow_k: float
    certified: bool


@dataclass
class ErgodicityReport:
    """Constants of the convergence argument plus traces for one realization.

    ``l`` is the primitivity index of the lossless node matrix;
    ``block_length`` is the ``W``-block length the bounds are stated in.
    """

    c: float
    l: int
    block_length: int
    estimate: WDEstimate
    delta_trace: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    lambda_trace: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    scrambling_trace: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool), repr=False)
    mu: tuple[float, ...] | None = None

    @property
    def w(self) -> float:
        return self.estimate.w

    @property
    def d(self) -> float:
        return self.estimate.d

    @property
    def defined(self) -> bool:
        return not self.estimate.insufficient and not math.isnan(self.d)

    @property
    def alpha(self) -> float:
        return math.exp(-self.w / (16 * self.block_length)) if self.defined else math.nan

    @property
    def beta(self) -> float:
        return self.d ** (self.w / (8 * self.block_length)) if self.defined else math.nan

    @property
    def k_threshold(self) -> int | None:
        return math.ceil(8 * self.block_length / self.w) if self.defined else None

    def constants(self) -> dict:
        est = self.estimate
        return {
            "c": self.c,
            "l": self.l,
            "block_length": self.block_length,
            "w": self.w,
            "w_stderr": est.stderr,
            "d": None if math.isnan(self.d) else self.d,
            "alpha": self.alpha if self.defined else None,
            "beta": self.beta if self.defined else None,
            "k_threshold": self.k_threshold,
            "w_d_method": "exact" if est.exact else "monte_carlo",
            "samples": est.samples,
            "insufficient_samples": est.insufficient,
            "gamma": [float(v) for v in est.gamma],
            "mu": list(self.mu) if self.mu is not None else None,
        }


def delta_trace(g: GraphSpec, masks: Sequence[DropMask], block_length: int = 1):
    """``delta(T_k)`` for every round, and ``lambda_(W_j)`` with scrambling
    flags for every completed block."""
    deltas = []
    lams = []
    flags = []
    for p in products(g, masks, block_length):
        deltas.append(delta(p.T))
        if p.completed is not None:
            lams.append(lambda_(p.completed))
            flags.append(scrambling_by_support(p.completed))
    return np.array(deltas), np.array(lams), np.array(flags, dtype=bool)


def analyze(
    g: GraphSpec,
    masks: Sequence[DropMask] = (),
    samples: int = 10_000,
    seed: int = 0,
    exact: bool = False,
    block_length: int | None = None,
    z0: Sequence[float] | None = None,
) -> ErgodicityReport:
    """Derive ``c``, ``l``, ``w``, ``d`` and trace ``delta``/``lambda`` over ``masks``."""
    L = derive_block_length(g) if block_length is None else block_length
    est = exact_w_d(g, L) if exact else estimate_w_d(g, L, samples, seed)
    c = derive_c(g)
    mu = None
    if z0 is not None and all(v > 0 for v in z0):
        mu = tuple(mu_for_node(g, z0, i, c, L) for i in range(g.m))
    deltas, lams, flags = delta_trace(g, masks, L)
    return ErgodicityReport(
        c=c,
        l=derive_l(g),
        block_length=L,
        estimate=est,
        delta_trace=deltas,
        lambda_trace=lams,
        scrambling_trace=flags,
        mu=mu,
    )


def certify_convergence(deltas: Sequence[float], report: ErgodicityReport) -> list[CertifiedRound]:
    """Check ``delta(T_k) <= beta**k`` for every ``k >= ceil(8 l / w)``.

    ``deltas[k-1]`` is ``delta(T_k)``. Rounds below the threshold are left out.
    """
    if not report.defined:
        raise ValueError("w estimate is zero or unreliable; the bound is undefined")
    beta = report.beta
    out = []
    for k in range(report.k_threshold, len(deltas) + 1):
        bk = beta**k
        out.append(CertifiedRound(k, float(deltas[k - 1]), bk, bool(deltas[k - 1] <= bk)))
    return out
