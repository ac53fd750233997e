"""Command-line front-end.

    conjdp solve       --instance lqr:d=1,T=3 --epsilon 0.01 --oracle
    conjdp solve-stoch --instance 'hard:n=3,a=1;2;3,lam=0.5'
    conjdp simulate    --instance lqr:d=1,T=2
    conjdp bench       --min-exp 6 --max-exp 12
    conjdp oracle newsvendor --a 1,2 --lambda 0.5

Exit status: 0 on success, 1 when a bound or feasibility check is violated,
2 on usage or model errors, 3 on I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import ConjDPError

CSV_VERSION = 1
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    model_path: Optional[str] = None
    instance: Optional[str] = None
    epsilon: Optional[float] = None
    horizon: Optional[int] = None
    out: Optional[str] = None
    format: str = "csv"
    oracle: bool = False
    seed: int = 0
    threads: Optional[int] = None
    extra: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.command not in ("solve", "solve-stoch", "simulate", "bench", "oracle"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")


@dataclass
class Result:
    rows: List[dict]
    meta: dict
    violated: bool = False
    text: Optional[str] = None


# ---------------------------------------------------------------- loading


def load_problem(cfg: RunConfig):
    """(model, noise, meta) from a JSON file or a builtin instance spec."""
    from .instances import build_instance, parse_instance_spec
    from .model import DpModel, noise_from_dict

    if cfg.model_path:
        with open(cfg.model_path) as fh:
            doc = json.load(fh)
        body = doc.get("model", doc)
        model = DpModel.from_dict(body)
        noise = noise_from_dict(doc["noise"]) if doc.get("noise") else None
        meta = {"source": cfg.model_path, "family": doc.get("family", "file")}
        if cfg.horizon is not None:
            model = dataclasses.replace(model, T=cfg.horizon)
        return model, noise, meta
    if not cfg.instance:
        raise ValueError("one of --model or --instance is required")
    name, kw = parse_instance_spec(cfg.instance)
    if cfg.horizon is not None:
        kw["T"] = cfg.horizon
    inst = build_instance((name, kw), cfg.seed)
    meta = {"source": cfg.instance, "seed": cfg.seed, **inst.meta}
    if cfg.horizon is not None and inst.model.T != cfg.horizon:
        inst.model = dataclasses.replace(inst.model, T=cfg.horizon)
    return inst.model, inst.noise, meta


def epsilon_grid(model, epsilon: Optional[float]):
    """State grid and dual count for a target accuracy (integer axes unchanged)."""
    from .dp_det import epsilon_grid_sizes
    from .grid import RegularGrid

    g = model.state_grid
    if epsilon is None:
        return g, max(g.points_per_axis)
    N, K = epsilon_grid_sizes(model.T, epsilon, model.d_r, model.dim)
    pts = [N] * model.d_r + list(g.points_per_axis[model.d_r:])
    return RegularGrid(g.lower, g.upper, pts), K


# ---------------------------------------------------------------- commands


def _report_rows(reports) -> List[dict]:
    rows, cum = [], 0.0
    for r in sorted(reports, key=lambda r: -r.stage):
        cum += r.bound
        k = r.curvature.condition_number
        rows.append({
            "stage": r.stage,
            "E1": r.E1,
            "E2": r.E2,
            "stage_bound": r.bound,
            "bound": cum,
            "L_J": r.L_J,
            "kappa": k,
        })
    return sorted(rows, key=lambda r: r["stage"])


def cmd_solve(cfg: RunConfig) -> Result:
    from .dp_det import bellman_solve, solve
    from .instances import lqr_value

    model, _, meta = load_problem(cfg)
    grid, K = epsilon_grid(model, cfg.epsilon)
    reports = solve(model, grid, K=K)
    rows = _report_rows(reports)
    meta.update({"N": list(grid.points_per_axis), "K": K, "T": model.T})
    violated = False
    if cfg.oracle:
        X = grid.points()
        if meta.get("family") == "lqr":
            oracle = {t: (lqr_value(X, t, model.T, meta["curvature"]), 0.0, False) for t in range(model.T)}
            meta["oracle"] = "analytic"
        else:
            res = bellman_solve(model, grid, T=model.T)
            oracle = {t: (r.value.values, r.slack, r.violated) for t, r in enumerate(res)}
            meta["oracle"] = "bellman"
        by_stage = {r.stage: r for r in reports}
        for row in rows:
            ref, slack, viol = oracle[row["stage"]]
            err = float(np.max(np.abs(by_stage[row["stage"]].value.values - ref)))
            row["measured_max_error"] = err
            row["oracle_slack"] = slack
            row["within_bound"] = bool(err <= row["bound"] + slack) and not viol
            violated |= not row["within_bound"]
    return Result(rows, meta, violated)


def cmd_solve_stoch(cfg: RunConfig) -> Result:
    from .dp_stoch import stoch_bellman_solve, stoch_solve
    from .model import NoiseModel

    model, noise, meta = load_problem(cfg)
    noise = NoiseModel.zero(model.dim) if noise is None else noise
    grid, K = epsilon_grid(model, cfg.epsilon)
    params = meta.pop("params", None)
    if meta.get("family") == "hard":
        from .instances import hard_instance_duals, newsvendor_oracle

        sol = stoch_solve(model, noise, grid, hard_instance_duals(params))
        _, u, _ = sol.first_stage(np.zeros(model.dim))
        u0 = float(np.ravel(u)[0])
        meta.update({"n": params.n, "a": list(params.a), "lam": params.lam, "beta": params.beta,
                     "u0": u0, "u0_rounded": math.floor(u0 + 0.5)})
        if cfg.oracle:
            star = newsvendor_oracle(params.a, params.lam)
            meta["u0_oracle"] = star
            meta["rounded_matches_oracle"] = meta["u0_rounded"] == star
    else:
        sol = stoch_solve(model, noise, grid, K=K)
    rows = _report_rows(sol.reports)
    meta.update({"N": list(grid.points_per_axis), "T": model.T, "max_outside": sol.extra["max_outside"],
                 "first_stage_bound": sol.extra["first_stage_bound"], "error_bound": sol.error_bound})
    violated = False
    if cfg.oracle and meta.get("family") != "hard":
        res = stoch_bellman_solve(model, noise, T=model.T)
        J0 = sol.first_stage_grid(grid).values if grid == model.state_grid else None
        if J0 is not None:
            err = float(np.max(np.abs(J0 - res[0].value.values)))
            allowed = sol.error_bound + sum(r.slack for r in res)
            meta.update({"measured_J0_error": err, "allowed_J0_error": allowed})
            violated = err > allowed or any(r.violated for r in res)
    if cfg.oracle and meta.get("family") == "hard":
        violated = not meta["rounded_matches_oracle"]
    return Result(rows, meta, violated)


def cmd_simulate(cfg: RunConfig) -> Result:
    from .qlft_sim import simulate_qdp

    model, noise, meta = load_problem(cfg)
    meta.pop("params", None)
    grid, K = epsilon_grid(model, cfg.epsilon)
    _, trace = simulate_qdp(model, grid, noise=noise, K=K, w_rule=cfg.extra.get("w_rule", "count"))
    rows = [
        {"stage": s.stage, "step": s.step, "good": s.good_count, "total": s.total_count,
         "prob": s.postselect_prob, "kappa_bound": s.kappa_bound, "mismatches": len(s.mismatches),
         "near_ties": s.near_ties}
        for s in trace.stages
    ]
    meta.update({k: v for k, v in trace.to_dict().items() if k != "stages"})
    return Result(rows, meta, trace.mismatch_count > 0, trace.table())


def bench_rows(exponents, T: int = 1, repeats: int = 1) -> List[dict]:
    """Wall time of exhaustive-action Bellman (N*M) against the conjugate solver.

    1-D LQR on [-1, 1] with N = 2^e + 1 states, K = N duals and M = N actions.
    """
    from .dp_det import bellman_solve, solve
    from .instances import make_lqr

    warm = make_lqr(1, T, points=17, action_points=17)
    solve(warm)
    bellman_solve(warm, refine=False)
    rows = []
    for e in exponents:
        N = (1 << e) + 1
        model = make_lqr(1, T, points=N, action_points=N)
        tb, tc = math.inf, math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            bellman_solve(model, refine=False)
            tb = min(tb, time.perf_counter() - t0)
            t0 = time.perf_counter()
            solve(model, K=N)
            tc = min(tc, time.perf_counter() - t0)
        rows.append({"N": N, "K": N, "M": N, "T": T, "t_bellman": tb, "t_conj": tc, "speedup": tb / tc})
    return rows


def cmd_bench(cfg: RunConfig) -> Result:
    lo, hi = cfg.extra.get("min_exp", 6), cfg.extra.get("max_exp", 12)
    T = cfg.horizon or 1
    rows = bench_rows(range(lo, hi + 1), T, cfg.extra.get("repeats", 1))
    cross = next((r["N"] for r in rows if r["t_conj"] < r["t_bellman"]), None)
    return Result(rows, {"family": "lqr", "T": T, "crossover_N": cross})


def cmd_oracle(cfg: RunConfig) -> Result:
    from .instances import cdf_convolution_oracle, newsvendor_oracle

    which = cfg.extra["which"]
    a = [int(v) for v in cfg.extra["a"].split(",") if v]
    if which == "newsvendor":
        lam = Fraction(cfg.extra["lam"])
        u = newsvendor_oracle(a, lam)
        return Result([{"a": ",".join(map(str, a)), "lambda": str(lam), "u0": u}], {}, text=str(u))
    Lam = Fraction(cfg.extra["threshold"])
    p = cdf_convolution_oracle(a, Lam)
    return Result([{"a": ",".join(map(str, a)), "threshold": str(Lam), "cdf": str(p)}], {}, text=str(p))


COMMANDS = {
    "solve": cmd_solve,
    "solve-stoch": cmd_solve_stoch,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------- output


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (str, int, bool)) or v is None:
        return v
    return str(v)


def render(res: Result, cfg: RunConfig) -> str:
    if cfg.format == "json":
        doc = {"version": CSV_VERSION, "command": cfg.command, "meta": res.meta, "rows": res.rows,
               "violated": res.violated}
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if cfg.command == "oracle" and res.text is not None:
        return res.text + "\n"
    buf = io.StringIO()
    if res.rows:
        cols = list(res.rows[0].keys())
        for r in res.rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in res.rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--model", dest="model_path", help="model JSON file")
    src.add_argument("--instance", help="builtin instance, e.g. lqr:d=1,T=3")
    common.add_argument("--epsilon", type=float, help="target accuracy; sets grid sizes")
    common.add_argument("--horizon", type=int, help="override the horizon T")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--oracle", action="store_true", help="compare against a reference solution")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, help="cap on worker threads")

    p = argparse.ArgumentParser(prog="conjdp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="deterministic conjugate DP")
    sub.add_parser("solve-stoch", parents=[common], help="stochastic conjugate DP")
    sp = sub.add_parser("simulate", parents=[common], help="simulated quantum DP trace")
    sp.add_argument("--w-rule", choices=("count", "floor"), default="count")
    bp = sub.add_parser("bench", parents=[common], help="Bellman vs conjugate timing sweep")
    bp.add_argument("--min-exp", type=int, default=6)
    bp.add_argument("--max-exp", type=int, default=12)
    bp.add_argument("--repeats", type=int, default=1)
    op = sub.add_parser("oracle", parents=[common], help="exact newsvendor / CDF oracles")
    op.add_argument("which", choices=("newsvendor", "cdf"))
    op.add_argument("--a", required=True, help="comma separated demand sizes")
    op.add_argument("--lambda", dest="lam", default="0.5", help="critical ratio")
    op.add_argument("--threshold", default="0", help="CDF threshold")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    extra = {}
    for k in ("which", "a", "lam", "threshold", "min_exp", "max_exp", "repeats", "w_rule"):
        if hasattr(ns, k):
            extra[k] = getattr(ns, k)
    return RunConfig(ns.command, ns.model_path, ns.instance, ns.epsilon, ns.horizon, ns.out, ns.format,
                     ns.oracle, ns.seed, ns.threads, extra)


def _set_threads(n: Optional[int]) -> None:
    if not n:
        return
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def run(cfg: RunConfig) -> int:
    _set_threads(cfg.threads)
    res = COMMANDS[cfg.command](cfg)
    text = render(res, cfg)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_VIOLATION if res.violated else EXIT_OK


def _fail(kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return run(cfg)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except (ConjDPError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        return _fail("model", exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
