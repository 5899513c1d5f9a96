"""Robust ratio consensus over packet-dropping directed networks."""

from .ergodicity import (
    ErgodicityReport,
    analyze,
    certify_convergence,
    delta,
    derive_block_length,
    derive_c,
    derive_l,
    estimate_w_d,
    exact_w_d,
    hajnal_bound_check,
    is_scrambling,
    lambda_,
)
from .estimators import ErgodicityAnalyzer, RatioConsensus
from .graph import (
    GraphSpec,
    augmented_space,
    complete,
    load_graph,
    make_graph,
    out_degree,
    random_graph,
    ring,
    star,
)
from .markov import ProductState, accumulate, build_matrix, oracle_check
from .protocol import GatingPolicy, InitialConditions, NodeState, mu_for_node
from .simulator import DropMask, Mode, RunConfig, Trace, draw_mask, replay, run

__version__ = "0.1.0"
