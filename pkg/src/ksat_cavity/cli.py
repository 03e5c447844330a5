"""Command-line front end.

Every output embeds the RunConfig that produced it, so any number can be
regenerated from the output file alone.  Exit codes: 0 success, 1 usage
error, 2 numerical failure (serialized to the output).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__

__all__ = ["RunConfig", "dispatch", "emit_plot_data", "main"]

COMMANDS = ("gen", "sp", "popdyn", "scan", "alpha-d", "alpha-c", "stability", "alpha-s", "series", "asympt", "table")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


@dataclass
class RunConfig:
    subcommand: str
    K: int | None = None
    alpha: float | None = None
    alpha_lo: float | None = None
    alpha_hi: float | None = None
    points: int | None = None
    N: int | None = None
    T: int | None = None
    transient: int | None = None
    seed: int = 0
    runs: int | None = None
    d_max: int | None = None
    samples: int | None = None
    output: str | None = None
    format: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_argv(self):
        """Command line that reproduces this run (output destinations omitted)."""
        argv = [self.subcommand]
        items = {k: v for k, v in self.to_dict().items() if k not in ("subcommand", "extra")}
        items.update(self.extra)
        for k, v in sorted(items.items()):
            if v is None or k in ("output", "plot_data"):
                continue
            argv += ["--" + k.replace("_", "-"), str(v)]
        return argv

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def header_lines(self):
        return [f"ksat_cavity {__version__}", "config: " + json.dumps(self.to_dict(), sort_keys=True)]


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serializable: {type(o)}")


def _clean(obj):
    # NaN / inf are not valid JSON
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dump_json(payload, cfg: RunConfig):
    body = dict(payload)
    body["config"] = cfg.to_dict()
    return json.dumps(_clean(json.loads(json.dumps(body, default=_json_default))), indent=2, sort_keys=True) + "\n"


def _comment_block(cfg: RunConfig, marker="#"):
    return "".join(f"{marker} {line}\n" for line in cfg.header_lines())


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def emit_plot_data(result, path, config: RunConfig | None = None):
    """Whitespace-separated numeric columns for external plotting tools."""
    from .stability import StabilityReport
    from .thresholds import ThresholdScan

    if isinstance(result, ThresholdScan):
        cols = ["alpha", "sigma", "sigma_err"]
        rows = [(a, s, e) for a, s, e, c in result.grid if not c]
    elif isinstance(result, StabilityReport):
        cols = ["d", "ln_mu", "stderr"]
        rows = list(result.mu_points)
    elif isinstance(result, list) and result and isinstance(result[0], dict):
        cols = [k for k in result[0] if k != "K"]
        cols = ["K"] + cols
        rows = [tuple(r[c] if r[c] is not None else float("nan") for c in cols) for r in result]
    else:
        raise TypeError(f"no plot layout for {type(result).__name__}")
    lines = []
    if config is not None:
        lines.append(_comment_block(config).rstrip("\n"))
    lines.append("# " + " ".join(cols))
    for r in rows:
        lines.append(" ".join(f"{float(v):.10g}" for v in r))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _need(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise UsageError("missing required parameter(s): " + ", ".join("--" + m for m in missing))


def _popdyn_cfg(args):
    from .thresholds import PopdynConfig

    return PopdynConfig(N=args.N, T=args.T, transient=args.transient, seed=args.seed, workers=args.workers)


def cmd_gen(args, cfg):
    from .instance import generate_random_ksat, write_dimacs
    from .numerics import RngStream

    _need(args, "K", "N", "alpha")
    try:
        g = generate_random_ksat(args.K, args.N, args.alpha, RngStream(args.seed, args.stream))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return write_dimacs(g, comments=cfg.header_lines()), "text"


def _load_graph(args):
    from .instance import DimacsError, generate_random_ksat, read_dimacs
    from .numerics import RngStream

    if args.input:
        try:
            with open(args.input) as fh:
                return read_dimacs(fh.read())
        except (OSError, DimacsError) as exc:
            raise UsageError(str(exc)) from None
    _need(args, "K", "N", "alpha")
    return generate_random_ksat(args.K, args.N, args.alpha, RngStream(args.seed, args.stream))


def cmd_sp(args, cfg):
    from .numerics import RngStream
    from .sp import SPContradiction, instance_complexity, sp_run

    graph = _load_graph(args)
    stream = RngStream(args.seed, args.stream + 1)
    try:
        state, converged, sweeps = sp_run(graph, init=args.init, tol=args.tol, max_sweeps=args.max_sweeps, stream=stream)
    except SPContradiction as exc:
        raise NumericalFailure(str(exc), {"clause": exc.clause, "position": exc.position}) from None
    comp = instance_complexity(graph, state)
    out = {
        "N": graph.N, "M": graph.M, "K": graph.K,
        "converged": converged, "sweeps": sweeps,
        "max_eta": float(state.eta.max()) if state.eta.size else 0.0,
        "sigma": comp.sigma, "contradiction_flag": comp.contradiction_flag,
    }
    if not converged:
        raise NumericalFailure("SP did not converge", out)
    return out, "json"


def cmd_popdyn(args, cfg):
    from .numerics import RngStream
    from .popdyn import popdyn_run, run_record

    _need(args, "K", "alpha")
    run = popdyn_run(args.K, args.alpha, args.N, args.T, args.transient, RngStream(args.seed, args.stream))
    return run_record(run), "json"


def cmd_scan(args, cfg):
    from .thresholds import WindowRejected, sigma_scan

    _need(args, "K", "alpha-lo", "alpha-hi")
    try:
        scan = sigma_scan(args.K, args.alpha_lo, args.alpha_hi, args.points, _popdyn_cfg(args))
    except WindowRejected as exc:
        raise NumericalFailure(f"window rejected: {exc}") from None
    return scan, "csv"


def cmd_alpha_d(args, cfg):
    from .thresholds import BracketError, alpha_d_delta, detect_alpha_d

    _need(args, "K")
    if args.method == "delta":
        try:
            a, info = alpha_d_delta(args.K, return_info=True)
        except RuntimeError as exc:
            raise NumericalFailure(str(exc)) from None
        return {"K": args.K, "alpha_d_delta": a, **info}, "json"
    ad0 = alpha_d_delta(args.K)
    lo = args.alpha_lo if args.alpha_lo is not None else 0.97 * ad0
    hi = args.alpha_hi if args.alpha_hi is not None else 1.03 * ad0
    try:
        mean, spread, per = detect_alpha_d(args.K, _popdyn_cfg(args), (lo, hi), args.resolution,
                                           seeds=tuple(range(args.runs or 3)))
    except BracketError as exc:
        raise NumericalFailure(f"bracket failure: {exc}") from None
    return {"K": args.K, "alpha_d": mean, "spread": spread, "per_seed": per, "bracket": [lo, hi]}, "json"


def cmd_alpha_c(args, cfg):
    from .thresholds import WindowRejected, locate_alpha_c

    _need(args, "K")
    window = None
    if args.alpha_lo is not None and args.alpha_hi is not None:
        window = (args.alpha_lo, args.alpha_hi)
    try:
        ac, err, scans = locate_alpha_c(args.K, _popdyn_cfg(args), args.runs or 5, window, args.points)
    except WindowRejected as exc:
        raise NumericalFailure(f"window rejected: {exc}") from None
    return {
        "K": args.K, "alpha_c": ac, "two_sigma": err,
        "roots": [s.alpha_c_estimate for s in scans],
        "scans": [s.to_dict() for s in scans],
    }, "json"


def cmd_stability(args, cfg):
    from .stability import DegeneratePopulation, stability_report

    _need(args, "K", "alpha")
    try:
        rep = stability_report(args.K, args.alpha, args.d_max, args.samples, args.N, args.transient, args.seed)
    except DegeneratePopulation as exc:
        raise NumericalFailure(str(exc)) from None
    return rep, "json"


def cmd_alpha_s(args, cfg):
    from .stability import DegeneratePopulation, locate_alpha_s

    _need(args, "K", "alpha-lo", "alpha-hi")
    grid = np.linspace(args.alpha_lo, args.alpha_hi, args.points)
    try:
        a, err, slopes = locate_alpha_s(args.K, grid, args.d_max, args.samples, args.N, args.transient, args.seed,
                                        workers=args.workers)
    except (ValueError, DegeneratePopulation) as exc:
        raise NumericalFailure(str(exc)) from None
    return {"K": args.K, "alpha_s": a, "stderr": err, "slopes": slopes}, "json"


def cmd_series(args, cfg):
    from .largek import alpha_c_series

    _need(args, "K")
    try:
        v = alpha_c_series(args.K, args.order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return {"K": args.K, "order": args.order, "alpha_c": v, "_text": f"{v:.3f}"}, "text"


def cmd_asympt(args, cfg):
    from .largek import alpha_d_asymptotic, alpha_s_asymptotic

    _need(args, "K")
    out = {"K": args.K}
    try:
        out["d_star"], out["alpha_d_asym"] = alpha_d_asymptotic(args.K)
    except ValueError as exc:
        out["d_star"] = out["alpha_d_asym"] = None
        out["note"] = str(exc)
    out["d_s"], out["alpha_s_asym"] = alpha_s_asymptotic(args.K)
    text = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in out.items() if k != "note")
    out["_text"] = text
    return out, "text"


def cmd_table(args, cfg):
    from .largek import largek_table
    from .thresholds import alpha_d_delta

    rows = largek_table(range(args.K_min, args.K_max + 1), alpha_d_delta=alpha_d_delta)
    return rows, "json"


HANDLERS = {
    "gen": cmd_gen, "sp": cmd_sp, "popdyn": cmd_popdyn, "scan": cmd_scan,
    "alpha-d": cmd_alpha_d, "alpha-c": cmd_alpha_c, "stability": cmd_stability,
    "alpha-s": cmd_alpha_s, "series": cmd_series, "asympt": cmd_asympt, "table": cmd_table,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="ksat-cavity", description="Cavity analysis of random K-SAT.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, N=10_000, T=100):
        sp.add_argument("--K", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--stream", type=int, default=0)
        sp.add_argument("--output", "-o")
        sp.add_argument("--format", choices=("text", "csv", "json"))
        sp.add_argument("--plot-data")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--N", type=int, default=N)
        sp.add_argument("--T", type=int, default=T)
        sp.add_argument("--transient", type=int, default=100)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--alpha-lo", type=float)
        sp.add_argument("--alpha-hi", type=float)
        sp.add_argument("--points", type=int, default=50)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--d-max", type=int, default=20)
        sp.add_argument("--samples", type=int, default=100_000)
        return sp

    common(sub.add_parser("gen", help="random instance as DIMACS"), N=None)
    s = common(sub.add_parser("sp", help="survey propagation on an instance"), N=None)
    s.add_argument("--input")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--max-sweeps", type=int, default=1000)
    s.add_argument("--init", choices=("random", "zero"), default="random")
    common(sub.add_parser("popdyn", help="one population-dynamics run"))
    common(sub.add_parser("scan", help="Sigma over an alpha window"))
    s = common(sub.add_parser("alpha-d", help="clustering threshold"))
    s.add_argument("--method", choices=("popdyn", "delta"), default="popdyn")
    s.add_argument("--resolution", type=float, default=0.005)
    common(sub.add_parser("alpha-c", help="satisfiability threshold from repeated scans"))
    common(sub.add_parser("stability", help="iteration and bug-proliferation diagnostics"))
    s = common(sub.add_parser("alpha-s", help="stability threshold"))
    s.set_defaults(points=7)
    s = common(sub.add_parser("series", help="large-K series for alpha_c"))
    s.add_argument("--order", type=int, default=1)
    common(sub.add_parser("asympt", help="large-K asymptotics of alpha_d and alpha_s"))
    s = common(sub.add_parser("table", help="large-K table over a K range"))
    s.add_argument("--K-min", type=int, default=3)
    s.add_argument("--K-max", type=int, default=10)
    return p


def _config_from(args) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    vals = {k: v for k, v in vars(args).items() if k in known and k != "subcommand"}
    extra = {k: v for k, v in vars(args).items() if k not in known and k not in ("command",)}
    return RunConfig(subcommand=args.command, extra=extra, **vals)


def _render(result, kind, fmt, cfg):
    from .stability import StabilityReport
    from .thresholds import ThresholdScan

    fmt = fmt or kind
    if isinstance(result, str):
        return result
    if isinstance(result, ThresholdScan):
        if fmt == "json":
            return _dump_json(result.to_dict(), cfg)
        return result.to_csv(cfg.header_lines())
    if isinstance(result, StabilityReport):
        if fmt == "csv":
            return _comment_block(cfg) + result.mu_csv()
        return _dump_json(result.to_dict(), cfg)
    if isinstance(result, list):
        if fmt == "csv":
            cols = list(result[0])
            lines = [",".join(cols)] + [",".join("" if r[c] is None else f"{r[c]:.10g}" for c in cols) for r in result]
            return _comment_block(cfg) + "\n".join(lines) + "\n"
        return _dump_json({"rows": result}, cfg)
    payload = {k: v for k, v in result.items() if k != "_text"}
    if fmt == "text" and "_text" in result:
        return result["_text"] + "\n"
    if fmt == "csv":
        cols = [k for k, v in payload.items() if not isinstance(v, (list, dict))]
        return _comment_block(cfg) + ",".join(cols) + "\n" + ",".join(str(payload[c]) for c in cols) + "\n"
    return _dump_json(payload, cfg)


def _write(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    cfg = _config_from(args)
    try:
        result, kind = HANDLERS[args.command](args, cfg)
        text = _render(result, kind, args.format, cfg)
        _write(text, args.output)
        if args.plot_data:
            emit_plot_data(result["rows"] if isinstance(result, dict) and "rows" in result else result,
                           args.plot_data, cfg)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except (TypeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (NumericalFailure, RuntimeError, FloatingPointError) as exc:
        payload = {"error": str(exc), "failure": type(exc).__name__}
        payload.update(getattr(exc, "payload", {}) or {})
        try:
            _write(_dump_json(payload, cfg), args.output)
        except OSError:
            sys.stdout.write(_dump_json(payload, cfg))
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
