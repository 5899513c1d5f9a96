"""Command line entry point: ``robust-consensus {simulate,analyze,montecarlo,oracle}``.

Exit codes: 0 success, 1 invalid input, 2 I/O failure, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .ergodicity import analyze, certify_convergence
from .graph import GraphError, GraphSpec, load_graph
from .markov import oracle_check
from .montecarlo import monte_carlo
from .protocol import GatingPolicy, InitialConditions
from .simulator import Mode, RunConfig, draw_masks, run, write_masks_csv, write_trace_csv

log = logging.getLogger("robust_consensus")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, needs_values: bool = True) -> None:
    p.add_argument("--graph", required=True, help="graph document (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=100, help="rounds K >= 1")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--q", type=float, default=None, help="override every link's reliability")
    p.add_argument("--y0", required=needs_values, help="comma list or one-column file")
    p.add_argument("--z0", default=None, help="comma list or file; defaults to all ones")
    p.add_argument("--mode", choices=["robust", "ideal"], default="robust")
    p.add_argument("--gating", choices=["positive", "threshold"], default="positive")
    p.add_argument("--mu", type=float, default=None, help="explicit threshold for --gating threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robust-consensus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _common(sub.add_parser("simulate", help="run one seeded simulation"))

    p = sub.add_parser("analyze", help="ergodicity constants and delta/lambda traces")
    _common(p, needs_values=False)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--exact", action="store_true", help="enumerate blocks instead of sampling")

    p = sub.add_parser("montecarlo", help="many seeded runs and the delta tail bound")
    _common(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--exact", action="store_true")

    p = sub.add_parser("oracle", help="check the protocol against the matrix iteration")
    _common(p)
    p.add_argument("--tol", type=float, default=1e-10)
    return parser


def _vector(text: str, what: str) -> np.ndarray:
    path = Path(text)
    if path.is_file():
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        items = [ln for ln in lines if ln and not ln.startswith("#")]
    else:
        items = [s for s in text.split(",") if s.strip()]
    try:
        return np.array([float(s) for s in items])
    except ValueError as exc:
        raise UsageError(f"--{what}: cannot parse {text!r} as numbers") from exc


def _setup(args) -> tuple[GraphSpec, InitialConditions | None, GatingPolicy]:
    if args.steps < 1:
        raise UsageError(f"--steps must be >= 1, got {args.steps}")
    if args.seed < 0:
        raise UsageError(f"--seed must be non-negative, got {args.seed}")
    if args.q is not None and not 0 < args.q <= 1:
        raise UsageError(f"--q must lie in (0, 1], got {args.q}")
    g = load_graph(Path(args.graph))
    if args.q is not None:
        g = g.with_reliability(args.q)
    init = None
    if args.y0 is not None:
        y0 = _vector(args.y0, "y0")
        z0 = _vector(args.z0, "z0") if args.z0 is not None else np.ones_like(y0)
        if y0.size != g.m or z0.size != g.m:
            raise UsageError(f"--y0/--z0 need {g.m} values, got {y0.size} and {z0.size}")
        try:
            init = InitialConditions(y0, z0)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.gating == "threshold":
        gating = GatingPolicy.threshold(args.mu)
    else:
        gating = GatingPolicy.positive()
    return g, init, gating


def _provenance(args, g: GraphSpec) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "command")}
    return {"command": args.command, "graph_sha256": g.digest(), "flags": flags}


def _csv_text(header: dict, rows: list[list], columns: list[str]) -> str:
    buf = io.StringIO()
    _write_header(buf, header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _write_header(fh, header: dict) -> None:
    fh.write(f"# {json.dumps(header, sort_keys=True)}\n")


def _g17(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    """NaN/inf to None so documents stay strict JSON."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _emit(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        log.info("wrote %s", out / name)


def _config(args, g, init, gating) -> RunConfig:
    return RunConfig(graph=g, init=init, steps=args.steps, seed=args.seed, gating=gating, mode=Mode(args.mode))


def cmd_simulate(args) -> int:
    g, init, gating = _setup(args)
    trace = run(_config(args, g, init, gating))
    prov = _provenance(args, g)

    trace_buf, mask_buf = io.StringIO(), io.StringIO()
    _write_header(trace_buf, prov)
    write_trace_csv(trace, trace_buf)
    _write_header(mask_buf, prov)
    write_masks_csv(g, trace.masks, mask_buf)

    final = trace.final_estimates()
    summary = {
        "provenance": prov,
        "target": init.target,
        "final_estimates": list(final),
        "max_abs_error": float(np.max(np.abs(final - init.target))),
        "update_counts": [len(u) for u in trace.update_times],
        "estimate_convention": "last gated value is held while the gate is closed",
    }
    _emit(Path(args.out), {
        "trace.csv": trace_buf.getvalue(),
        "masks.csv": mask_buf.getvalue(),
        "summary.json": _json_text(_clean(summary)),
    })
    print(f"max |estimate - target| = {summary['max_abs_error']:.3e}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    g, init, _ = _setup(args)
    cfg_mode = Mode(args.mode)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    dummy = InitialConditions(np.ones(g.m), np.ones(g.m))
    masks = draw_masks(RunConfig(g, dummy, args.steps, args.seed, mode=cfg_mode))
    z0 = init.z0 if init is not None else np.ones(g.m)
    report = analyze(g, masks, samples=args.samples, seed=args.seed, exact=args.exact, z0=z0)
    prov = _provenance(args, g)

    certified = {}
    if report.defined:
        certified = {row.k: row.certified for row in certify_convergence(report.delta_trace, report)}
    else:
        log.warning("no scrambling block observed in %s samples; alpha, beta undefined", args.samples)
    beta = report.beta if report.defined else None
    delta_rows = [
        [k, _g17(dk), _g17(beta**k if beta is not None else None),
         "" if k not in certified else int(certified[k])]
        for k, dk in enumerate(report.delta_trace, start=1)
    ]
    lambda_rows = [
        [j, _g17(lam), int(flag)]
        for j, (lam, flag) in enumerate(zip(report.lambda_trace, report.scrambling_trace), start=1)
    ]
    doc = {"provenance": prov, "constants": report.constants(), "rounds": args.steps}
    _emit(Path(args.out), {
        "report.json": _json_text(_clean(doc)),
        "delta.csv": _csv_text(prov, delta_rows, ["k", "delta_Tk", "beta_pow_k", "certified"]),
        "lambda.csv": _csv_text(prov, lambda_rows, ["block", "lambda_W", "scrambling"]),
    })
    c = report.constants()
    print(f"c={c['c']:.6g} l={c['l']} block_length={c['block_length']} w={c['w']:.6g} d={c['d']}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    g, init, gating = _setup(args)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    report = analyze(g, (), samples=args.samples, seed=args.seed, exact=args.exact, z0=init.z0)
    summary = monte_carlo(_config(args, g, init, gating), args.runs, report)
    prov = _provenance(args, g)
    doc = {"provenance": prov, **summary.to_document()}
    rows = [[r["k"], _g17(r["exceed_fraction"]), _g17(r["alpha_pow_k"]), _g17(r["allowed"]),
             int(r["within_bound"])] for r in summary.tail_rows]
    _emit(Path(args.out), {
        "montecarlo.json": _json_text(_clean(doc)),
        "tail.csv": _csv_text(prov, rows, ["k", "exceed_fraction", "alpha_pow_k", "allowed", "within_bound"]),
    })
    print(f"{doc['runs_below_1e-6']}/{args.runs} runs reached max error < 1e-6")
    return EXIT_OK


def cmd_oracle(args) -> int:
    g, init, gating = _setup(args)
    trace = run(_config(args, g, init, gating))
    rep = oracle_check(trace, g, args.tol)
    prov = _provenance(args, g)
    rows = [[k, _g17(dev)] for k, dev in enumerate(rep.deviation, start=1)]
    _emit(Path(args.out), {"oracle.csv": _csv_text(prov, rows, ["k", "max_deviation"])})
    print(f"max deviation = {rep.max_deviation:.3e}")
    if not rep.passed:
        k, idx = rep.first_failure
        print(f"oracle check failed at round {k}, augmented index {idx}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "montecarlo": cmd_montecarlo,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
