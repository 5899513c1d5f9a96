"""scikit-learn style front ends.

``RatioConsensus`` treats one network run as the fit: ``fit(y0, z0)``
simulates the protocol and ``predict()`` returns each node's consensus
estimate. ``ErgodicityAnalyzer.fit(graph)`` computes the constants of the
convergence argument.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ergodicity import analyze, certify_convergence
from .graph import GraphSpec
from .markov import oracle_check
from .protocol import GatingPolicy, InitialConditions
from .simulator import Mode, RunConfig, draw_masks, run


def check_initial_values(y0, z0=None, m: int | None = None) -> InitialConditions:
    """Validate initial masses; ``z0`` defaults to all ones."""
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim != 1:
        raise ValueError(f"y0 must be one-dimensional, got shape {y0.shape}")
    z0 = np.ones_like(y0) if z0 is None else np.asarray(z0, dtype=float)
    if m is not None and y0.size != m:
        raise ValueError(f"expected {m} initial values, got {y0.size}")
    return InitialConditions(y0, z0)


def check_random_state_seed(random_state) -> int:
    """Integer seeds only: runs must be reproducible from their parameters."""
    if random_state is None:
        return 0
    if isinstance(random_state, (bool, np.bool_)) or not isinstance(random_state, (int, np.integer)):
        raise ValueError(f"random_state must be a non-negative int, got {random_state!r}")
    if random_state < 0:
        raise ValueError(f"random_state must be non-negative, got {random_state}")
    return int(random_state)


class RatioConsensus(BaseEstimator):
    """Ratio consensus over a lossy broadcast network.

    Parameters
    ----------
    graph : GraphSpec
        Communication topology with link reliabilities.
    steps : int
        Number of synchronous rounds.
    mode : {"robust", "ideal"}
        ``"ideal"`` ignores drops (every link delivers).
    gating : {"positive", "threshold"}
        When a node refreshes its estimate.
    mu : float or None
        Threshold for ``gating="threshold"``; derived per node when None.
    random_state : int or None
        Seed of the link-drop stream.

    Attributes
    ----------
    trace_ : Trace
    estimates_ : ndarray of shape (m,)
    consensus_value_ : float
        ``sum(y0) / sum(z0)``.
    """

    def __init__(self, graph: GraphSpec, steps: int = 100, mode: str = "robust",
                 gating: str = "positive", mu=None, random_state=None):
        self.graph = graph
        self.steps = steps
        self.mode = mode
        self.gating = gating
        self.mu = mu
        self.random_state = random_state

    def _config(self, init: InitialConditions) -> RunConfig:
        if self.gating == "threshold":
            policy = GatingPolicy.threshold(self.mu)
        elif self.gating == "positive":
            policy = GatingPolicy.positive()
        else:
            raise ValueError(f"unknown gating {self.gating!r}")
        return RunConfig(
            graph=self.graph,
            init=init,
            steps=self.steps,
            seed=check_random_state_seed(self.random_state),
            gating=policy,
            mode=Mode(self.mode),
        )

    def fit(self, y0, z0=None):
        init = check_initial_values(y0, z0, self.graph.m)
        self.trace_ = run(self._config(init))
        self.estimates_ = self.trace_.final_estimates()
        self.consensus_value_ = init.target
        self.update_times_ = self.trace_.update_times
        return self

    def predict(self, X=None) -> np.ndarray:
        """Final estimate at every node (NaN if a node never updated)."""
        check_is_fitted(self, "trace_")
        return self.estimates_.copy()

    def transform(self, y0, z0=None) -> np.ndarray:
        """Node masses ``y`` after ``steps`` rounds, drops drawn from ``random_state``."""
        check_is_fitted(self, "trace_")
        init = check_initial_values(y0, z0, self.graph.m)
        return run(self._config(init)).y[-1]

    def fit_predict(self, y0, z0=None) -> np.ndarray:
        return self.fit(y0, z0).predict()

    def score(self, X=None, y=None) -> float:
        """Negative worst-node error against the consensus value."""
        check_is_fitted(self, "trace_")
        return -float(np.max(np.abs(self.estimates_ - self.consensus_value_)))

    def oracle(self, tol: float = 1e-10):
        check_is_fitted(self, "trace_")
        return oracle_check(self.trace_, self.graph, tol)


class ErgodicityAnalyzer(BaseEstimator):
    """Ergodicity constants and the ``delta(T_k)`` trace of one drop realization.

    Attributes
    ----------
    report_ : ErgodicityReport
    c_, l_, block_length_, w_, d_, alpha_, beta_, k_threshold_
    """

    def __init__(self, steps: int = 200, samples: int = 10_000, exact: bool = False,
                 block_length=None, random_state=None):
        self.steps = steps
        self.samples = samples
        self.exact = exact
        self.block_length = block_length
        self.random_state = random_state

    def fit(self, graph: GraphSpec, z0=None):
        seed = check_random_state_seed(self.random_state)
        dummy = InitialConditions(np.ones(graph.m), np.ones(graph.m))
        masks = draw_masks(RunConfig(graph, dummy, self.steps, seed))
        z0 = np.ones(graph.m) if z0 is None else np.asarray(z0, dtype=float)
        self.report_ = analyze(graph, masks, samples=self.samples, seed=seed, exact=self.exact,
                               block_length=self.block_length, z0=z0)
        r = self.report_
        self.c_, self.l_, self.block_length_ = r.c, r.l, r.block_length
        self.w_, self.d_ = r.w, r.d
        self.alpha_, self.beta_, self.k_threshold_ = r.alpha, r.beta, r.k_threshold
        return self

    def certify(self):
        """Rounds past the threshold with whether ``delta(T_k) <= beta**k``."""
        check_is_fitted(self, "report_")
        return certify_convergence(self.report_.delta_trace, self.report_)
