"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 a ``verify`` check failed.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from typing import List, Optional

import numpy as np

from . import __version__
from . import closed_form as cf
from . import exact_oracle as eo
from . import mc_harness as mc
from .closed_form import DomainError, ModelParams
from .rng import TREE, WalkStream, derive_key
from .tree_sampler import TrapDescriptor, build_window
from .walk_engine import simulate_trap_exits

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
SEED_ENV = "LADDERWALK_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _model_flags(p: argparse.ArgumentParser, beta: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--c", type=float, help="rung weight c > 0")
    g.add_argument("--alpha", type=float, help="tree parameter alpha in (0, 1)")
    if beta:
        p.add_argument("--beta", type=float, default=None, help="bias beta >= 1")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help=f"64-bit seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--output", "-o", default="-", help="output path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes for replicas (results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ladderwalk", description="Biased random walk on random spanning trees of the ladder.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("speed-curve", help="speed against beta: formula and simulation")
    _model_flags(p, beta=False)
    p.add_argument("--beta-min", type=float, required=True)
    p.add_argument("--beta-max", type=float, required=True)
    p.add_argument("--beta-count", type=int, default=50)
    p.add_argument("--steps", type=_positive_int, default=10**5)
    p.add_argument("--replicas", type=_positive_int, default=500)
    _common_flags(p)

    p = sub.add_parser("speed-vs-alpha", help="closed-form speed against alpha for fixed betas")
    p.add_argument("--beta", type=float, nargs="+", required=True)
    p.add_argument("--alpha-min", type=float, default=0.001)
    p.add_argument("--alpha-max", type=float, default=0.999)
    p.add_argument("--alpha-count", type=int, default=200)
    _common_flags(p)

    p = sub.add_parser("verify", help="reduced invariant suite with a PASS/FAIL table")
    _model_flags(p)
    p.add_argument("--quick", action="store_true", help="smaller Monte Carlo budgets")
    _common_flags(p)

    p = sub.add_parser("clt-hist", help="endpoints of n-step walks, raw and standardised")
    _model_flags(p)
    p.add_argument("--steps", type=_positive_int, default=10**5)
    p.add_argument("--replicas", type=_positive_int, default=10**4)
    p.add_argument("--mode", choices=("annealed", "quenched"), default=None,
                   help="default: quenched at beta = 1, annealed otherwise")
    _common_flags(p)

    p = sub.add_parser("trap-times", help="trap durations: formula, exact solve, simulation")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--kind", choices=("a", "b", "c"), nargs="+", default=["a", "b", "c"])
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--l-max", type=int, default=5)
    p.add_argument("--samples", type=_positive_int, default=10**4)
    _common_flags(p)

    p = sub.add_parser("sample-tree", help="dump a sampled window, one block per line")
    _model_flags(p, beta=False)
    p.add_argument("--blocks", type=int, default=20, help="interior blocks, split between both sides")
    _common_flags(p)
    return parser


def parse_config(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse and validate ``argv``; raises :class:`UsageError` naming the bad flag."""
    cfg = build_parser().parse_args(argv)
    if cfg.seed is None:
        cfg.seed = _default_seed()
    if not 0 <= cfg.seed < 2**64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    if getattr(cfg, "c", None) is not None:
        if not cfg.c > 0:
            raise UsageError("--c must be positive")
        cfg.alpha_value = cf.alpha_from_c(cfg.c)
    elif getattr(cfg, "alpha", None) is not None:
        if not 0 < cfg.alpha < 1:
            raise UsageError("--alpha must lie in (0, 1)")
        cfg.alpha_value = cfg.alpha
    beta = getattr(cfg, "beta", None)
    if isinstance(beta, float) and beta < 1:
        raise UsageError("--beta must be >= 1")
    if isinstance(beta, list) and any(b < 1 for b in beta):
        raise UsageError("--beta values must be >= 1")
    cmd = cfg.command
    if cmd == "speed-curve":
        if cfg.beta_count < 2:
            raise UsageError("--beta-count must be >= 2")
        if not 1 <= cfg.beta_min < cfg.beta_max:
            raise UsageError("--beta-min/--beta-max must satisfy 1 <= min < max")
        if cfg.steps < 10**4 or cfg.replicas < 10:
            raise UsageError("--steps must be >= 10000 and --replicas >= 10")
    elif cmd == "speed-vs-alpha":
        if cfg.alpha_count < 2:
            raise UsageError("--alpha-count must be >= 2")
        if not 0 < cfg.alpha_min < cfg.alpha_max < 1:
            raise UsageError("--alpha-min/--alpha-max must satisfy 0 < min < max < 1")
    elif cmd in ("verify", "clt-hist"):
        if cfg.beta is None:
            raise UsageError("--beta is required")
        if cmd == "clt-hist":
            if cfg.mode is None:
                cfg.mode = "quenched" if cfg.beta == 1.0 else "annealed"
            if cfg.mode == "quenched" and cfg.beta != 1.0:
                raise UsageError("--mode quenched needs --beta 1")
            if cfg.mode == "annealed" and not 1 < cfg.beta < cf.critical_values(cfg.alpha_value).beta_c2:
                raise UsageError("--mode annealed needs 1 < --beta < 1/sqrt(alpha)")
    elif cmd == "trap-times":
        if cfg.k_max < 0 or cfg.l_max < 0:
            raise UsageError("--k-max and --l-max must be >= 0")
    elif cmd == "sample-tree":
        if cfg.blocks < 2:
            raise UsageError("--blocks must be >= 2")
    return cfg


# -- output ------------------------------------------------------------------

def _header(cfg: argparse.Namespace) -> str:
    conf = {k: v for k, v in sorted(vars(cfg).items()) if k not in ("output", "jobs")}
    return f"# ladderwalk {__version__} seed={cfg.seed} config={json.dumps(conf, sort_keys=True)}\n"


def _write(cfg: argparse.Namespace, text: str) -> None:
    if cfg.output == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = os.path.abspath(cfg.output)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(target), prefix=".ladderwalk-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table(cfg, columns: List[str], rows: List[list]) -> str:
    if cfg.format == "json":
        meta = json.loads(_header(cfg).split("config=", 1)[1])
        doc = {"version": __version__, "seed": cfg.seed, "config": meta,
               "rows": [dict(zip(columns, [_json_value(v) for v in r])) for r in rows]}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    buf.write(_header(cfg))
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return float(fmt(v)) if math.isfinite(v) else fmt(v)


# -- commands ------------------------------------------------------------------

def _params(cfg, beta: float = 1.0) -> ModelParams:
    if cfg.c is not None:
        return ModelParams.from_c(cfg.c, beta=beta, seed=cfg.seed)
    return ModelParams.from_alpha(cfg.alpha, beta=beta, seed=cfg.seed)


def cmd_speed_curve(cfg) -> int:
    a = cfg.alpha_value
    rows = []
    for b in np.linspace(cfg.beta_min, cfg.beta_max, cfg.beta_count).tolist():
        est = mc.estimate_speed(_params(cfg, b), cfg.steps, cfg.replicas, jobs=cfg.jobs)
        rows.append([a, b, cf.speed(a, b).v, est.point, est.std_error, est.replicas,
                     est.steps_per_replica, est.capped_fraction])
    cols = ["alpha", "beta", "v_formula", "v_mc", "std_err", "replicas", "steps", "capped_fraction"]
    _write(cfg, _table(cfg, cols, rows))
    return EXIT_OK


def cmd_speed_vs_alpha(cfg) -> int:
    rows = []
    for b in cfg.beta:
        for a in np.linspace(cfg.alpha_min, cfg.alpha_max, cfg.alpha_count).tolist():
            rows.append([b, a, cf.speed(a, b).v])
    _write(cfg, _table(cfg, ["beta", "alpha", "v_formula"], rows))
    return EXIT_OK


def cmd_clt_hist(cfg) -> int:
    rep = mc.clt_experiment(_params(cfg, cfg.beta), cfg.steps, cfg.replicas, cfg.mode, jobs=cfg.jobs)
    rows = [[i, int(e), z] for i, (e, z) in enumerate(zip(rep.endpoints.tolist(), rep.samples.tolist()))]
    _write(cfg, _table(cfg, ["replica", "endpoint", "standardized"], rows))
    print(f"KS statistic {fmt(rep.ks_statistic)}, p-value {fmt(rep.ks_p_value)}, "
          f"variance {fmt(rep.sample_variance)} ({rep.mode})", file=sys.stderr)
    return EXIT_OK


def _trap_shapes(kinds, k_max: int, l_max: int):
    for kind in kinds:
        if kind == "a":
            yield from (("a", k, 0) for k in range(1, k_max + 1))
        elif kind == "b":
            yield from (("b", 0, l) for l in range(1, l_max + 1))
        else:
            yield from (("c", k, l) for k in range(k_max + 1) for l in range(l_max + 1))


def cmd_trap_times(cfg) -> int:
    b = cfg.beta
    rng = WalkStream(cfg.seed, 0)
    rows = []
    for kind, k, l in _trap_shapes(cfg.kind, cfg.k_max, cfg.l_max):
        t = simulate_trap_exits(TrapDescriptor(kind, (0, 0), k, l), b, rng, cfg.samples)
        se = float(t.std(ddof=1) / math.sqrt(len(t))) if len(t) > 1 else math.inf
        rows.append([kind, k, l, b, cf.trap_mean_time(kind, b, k, l), eo.trap_time(kind, k, l, b),
                     float(t.mean()), se])
    cols = ["kind", "k", "l", "beta", "mean_formula", "mean_oracle", "mean_mc", "std_err"]
    _write(cfg, _table(cfg, cols, rows))
    return EXIT_OK


def cmd_sample_tree(cfg) -> int:
    n_left = cfg.blocks // 2
    window = build_window(derive_key(cfg.seed, TREE, 0), cfg.alpha_value, n_left=n_left,
                          n_right=cfg.blocks - n_left)
    _write(cfg, _header(cfg) + window.dump())
    return EXIT_OK


def _check(name, expected, observed, tolerance, passed) -> dict:
    return {"name": name, "expected": _json_value(expected), "observed": _json_value(observed),
            "tolerance": _json_value(tolerance), "pass": bool(passed)}


def verify_checks(alpha: float, beta: float, seed: int, quick: bool) -> List[dict]:
    """The reduced invariant suite behind ``verify``."""
    out = []
    crit = cf.critical_values(alpha)
    ballistic = 1.0 < beta < crit.beta_c1
    if ballistic:
        inv = cf.inverse_speed_formula(alpha, beta)
        route = cf.expected_tau1(alpha, beta)
        out.append(_check("dual speed formula", inv, route, 1e-10, abs(inv - route) <= 1e-10 * inv))
    for kind, k, l in (("a", 3, 0), ("b", 0, 3), ("c", 2, 2)):
        exact = eo.trap_time(kind, k, l, beta)
        formula = cf.trap_mean_time(kind, beta, k, l)
        out.append(_check(f"trap time ({kind}, k={k}, l={l})", formula, exact, 1e-9,
                          abs(exact - formula) <= 1e-9 * max(1.0, formula)))
    s2 = cf.einstein_sigma2(alpha)
    slope = 2.0 * cf.central_difference(lambda bb: cf.speed_value(alpha, bb), 1.0)
    out.append(_check("einstein relation", s2, slope, 1e-6, abs(s2 - slope) <= 1e-6))
    if alpha <= 0.7:
        # each (a, b) pair carries a+b+1 values of k and two of sigma
        cut = 61 if alpha <= 0.5 else 121
        mass = sum(2 * (a + b + 1) * cf.block_probability(alpha, a, b, 0, 0) for a in range(cut) for b in range(cut))
        out.append(_check("origin event mass", 1.0, mass, 1e-10, abs(mass - 1.0) <= 1e-10))
    ratio, holding = cf.ray_statistics(alpha)
    emp = mc.ergodic_ray_statistics(alpha, 10**4 if quick else 10**5, seed)
    tol = 0.03 if quick else 0.01
    out.append(_check("ray column ratio", ratio, emp["ray_ratio"], tol,
                      abs(emp["ray_ratio"] - ratio) <= tol * ratio))
    out.append(_check("ray holding mean", holding, emp["holding_mean"], tol,
                      abs(emp["holding_mean"] - holding) <= tol * holding))
    if beta > 1.0:
        rep = mc.escape_bound_check(ModelParams.from_alpha(alpha, beta, seed), 5 if quick else 20,
                                    2000 if quick else 10**4)
        lo, hi = rep.bounds
        out.append(_check("escape probability bounds", f"[{fmt(lo)}, {fmt(hi)}]",
                          f"[{fmt(min(rep.oracle))}, {fmt(max(rep.oracle))}]", 0.0, rep.oracle_in_bounds))
        out.append(_check("escape frequency vs exact (max |z|)", 0.0, rep.max_abs_z(), 4.0, rep.max_abs_z() <= 4.0))
    steps, reps = (2 * 10**4, 20) if quick else (10**5, 200)
    est = mc.estimate_speed(ModelParams.from_alpha(alpha, beta, seed), steps, reps)
    v = cf.speed(alpha, beta).v
    if ballistic or beta == 1.0:
        out.append(_check("speed within 3 s.e.", v, est.point, 3 * est.std_error, est.within(v)))
    return out


def cmd_verify(cfg) -> int:
    checks = verify_checks(cfg.alpha_value, cfg.beta, cfg.seed, cfg.quick)
    width = max(len(c["name"]) for c in checks)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']:<{width}}  expected={c['expected']} "
              f"observed={c['observed']} tol={c['tolerance']}")
    if cfg.output != "-":
        doc = {"version": __version__, "seed": cfg.seed, "checks": checks}
        _write(cfg, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if all(c["pass"] for c in checks) else EXIT_VERIFY


COMMANDS = {
    "speed-curve": cmd_speed_curve,
    "speed-vs-alpha": cmd_speed_vs_alpha,
    "verify": cmd_verify,
    "clt-hist": cmd_clt_hist,
    "trap-times": cmd_trap_times,
    "sample-tree": cmd_sample_tree,
}


def run(cfg: argparse.Namespace) -> int:
    try:
        return COMMANDS[cfg.command](cfg)
    except (OSError, DomainError, RuntimeError, ValueError) as exc:
        print(f"ladderwalk: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"ladderwalk: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
