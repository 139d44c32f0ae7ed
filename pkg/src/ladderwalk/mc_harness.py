"""Monte Carlo experiments checked against the closed forms.

Replica ``r`` of any experiment run with seed ``s`` uses tree key
``derive_key(s, TREE, r)`` and walk stream ``WalkStream(s, r)``.  Results
are folded in replica order, so a report is a pure function of its arguments.
Experiments at different ``beta`` with the same seed share trees and walk
streams (matched seeds).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from . import closed_form as cf
from .closed_form import DomainError, ModelParams
from .exact_oracle import escape_bounds, escape_probability
from .rng import AUX, TREE, WalkStream, derive_key
from .tree_sampler import (
    KeyedBlockSource,
    OriginBlock,
    TreeWindow,
    build_window,
    geometric_from_uniform,
)
from .walk_engine import (
    DEFAULT_STEP_CAP,
    advance,
    ray_escape_count,
    run_passage,
    simulate_trap_exits_mixed,
    start_state,
)

KS_THRESHOLD = 0.01


class InsufficientTailData(RuntimeError):
    """Too few tail points, or no heavy tail to estimate."""


@dataclass
class EstimateCI:
    point: float
    std_error: float
    replicas: int
    steps_per_replica: int
    seed: int
    capped_fraction: float = 0.0

    def z_score(self, reference: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.point == reference else math.inf
        return (self.point - reference) / self.std_error

    def within(self, reference: float, n_se: float = 3.0) -> bool:
        return abs(self.point - reference) <= n_se * self.std_error


@dataclass
class CltReport:
    samples: np.ndarray
    ks_statistic: float
    ks_p_value: float
    sample_variance: float
    mode: str
    endpoints: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return self.ks_p_value > KS_THRESHOLD


def _mean_se(values) -> tuple:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), math.inf
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _mean_gap(alpha: float) -> float:
    return (1.0 + alpha) / (1.0 - alpha)


def _fresh_window(seed: int, replica: int, alpha: float, reach: float, source_for=None) -> TreeWindow:
    """Window expected to cover ``reach`` columns to the right of the origin."""
    n_right = int(1.1 * reach / _mean_gap(alpha)) + 64
    if source_for is not None:
        return TreeWindow(source_for(replica), 64, n_right)
    return build_window(derive_key(seed, TREE, replica), alpha, n_left=64, n_right=n_right)


class UniformRaySource:
    """Keyed tree with every ``W_n`` forced to 0: the ray is row 1 and all traps are of kind (c)."""

    def __init__(self, key: int, alpha: float):
        self.base = KeyedBlockSource(key, alpha)
        self.alpha = alpha

    def interior(self, ns):
        f, fp, w = self.base.interior(ns)
        return f, fp, np.zeros_like(w)

    def origin(self) -> OriginBlock:
        o = self.base.origin()
        return OriginBlock(o.g0, o.h0, o.f0_prime, 0)


def _reach(alpha: float, beta: float, steps: int) -> float:
    v = cf.speed(alpha, beta).v
    return max(v * steps, 3.0 * math.sqrt(steps))


# -- speed -------------------------------------------------------------------

def displacements(params: ModelParams, steps: int, replicas: int, burn_in: int = 0,
                  first_replica: int = 0, jobs: int = 1, source_for=None) -> np.ndarray:
    """Column gained between step ``burn_in`` and step ``steps``, one per replica (fresh tree each).

    With ``jobs > 1`` contiguous replica ranges run in worker processes and are
    concatenated in replica order, so the result does not depend on ``jobs``.
    ``source_for(replica)`` replaces the default keyed tree source.
    """
    if jobs > 1 and replicas > 1:
        bounds = np.linspace(0, replicas, min(jobs, replicas) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=len(bounds) - 1) as pool:
            parts = pool.map(_displacement_chunk,
                             [(params, steps, int(hi - lo), burn_in, first_replica + int(lo), 1, source_for)
                              for lo, hi in zip(bounds[:-1], bounds[1:])])
            return np.concatenate(list(parts))
    a, b, seed = params.alpha, params.beta, params.seed
    reach = _reach(a, b, steps)
    out = np.empty(replicas, dtype=np.int64)
    for j in range(replicas):
        r = first_replica + j
        window = _fresh_window(seed, r, a, reach, source_for)
        rng = WalkStream(seed, r)
        state = start_state(window)
        start = state.col
        if burn_in:
            advance(state, window, b, rng, burn_in)
            start = state.col
        advance(state, window, b, rng, steps - burn_in)
        out[j] = state.col - start
    return out


def _displacement_chunk(args):
    return displacements(*args)


def estimate_speed(params: ModelParams, steps: int, replicas: int, burn_in_fraction: float = 0.1,
                   jobs: int = 1, source_for=None) -> EstimateCI:
    """Annealed speed: mean over fresh trees of the post-burn-in displacement rate."""
    if steps < 10**4:
        raise DomainError("steps must be >= 1e4")
    if replicas < 10:
        raise DomainError("replicas must be >= 10")
    burn = int(steps * burn_in_fraction)
    d = displacements(params, steps, replicas, burn_in=burn, jobs=jobs, source_for=source_for)
    point, se = _mean_se(d / (steps - burn))
    return EstimateCI(point, se, replicas, steps, params.seed, 0.0)


# -- conditioned passage times -------------------------------------------------

class _OriginConditioned:
    """Base stream with block 0 replaced and ``W_1`` forced."""

    def __init__(self, base: KeyedBlockSource, origin: OriginBlock, w1: int):
        self.base, self._origin, self.w1 = base, origin, w1
        self.alpha = base.alpha

    def interior(self, ns):
        ns = np.asarray(ns, dtype=np.int64)
        f, fp, w = (x.copy() for x in self.base.interior(ns))
        w[ns == 1] = self.w1
        return f, fp, w

    def origin(self) -> OriginBlock:
        return self._origin


def conditioned_source(params: ModelParams, replica: int, a: int, b: int, k: int, sigma: int):
    """Tree stream conditioned on ``F'_0=a, F_0=b, V_0=-k, |W_1-W_0|=sigma``."""
    if a < 0 or b < 0 or not -a <= k <= b or sigma not in (0, 1):
        raise DomainError(f"impossible origin event (a={a}, b={b}, k={k}, sigma={sigma})")
    base = KeyedBlockSource(derive_key(params.seed, TREE, replica), params.alpha)
    w0 = base.origin().w0
    origin = OriginBlock(a + b + 1, -k - a, a, w0)
    return _OriginConditioned(base, origin, w0 ^ sigma)


def _passage_times(params: ModelParams, sources, step_cap: int):
    taus, capped = [], 0
    for r, source in sources:
        window = TreeWindow(source, 64, 64)
        rng = WalkStream(params.seed, r)
        res = run_passage(start_state(window), window, params.beta, rng, 1, step_cap=step_cap,
                          record_traps=False)
        if res.capped:
            capped += 1
        else:
            taus.append(res.tau)
    return taus, capped


def estimate_tau1_conditional(params: ModelParams, a: int, b: int, k: int, sigma: int, replicas: int,
                              step_cap: int = DEFAULT_STEP_CAP) -> EstimateCI:
    """Mean time to reach column 1 given the origin-block event."""
    sources = ((r, conditioned_source(params, r, a, b, k, sigma)) for r in range(replicas))
    taus, capped = _passage_times(params, sources, step_cap)
    point, se = _mean_se(taus)
    return EstimateCI(point, se, replicas, step_cap, params.seed, capped / replicas)


def estimate_tau1(params: ModelParams, replicas: int, step_cap: int = DEFAULT_STEP_CAP) -> EstimateCI:
    """Unconditional mean time to reach column 1 (origin block sampled)."""
    sources = ((r, KeyedBlockSource(derive_key(params.seed, TREE, r), params.alpha)) for r in range(replicas))
    taus, capped = _passage_times(params, sources, step_cap)
    point, se = _mean_se(taus)
    return EstimateCI(point, se, replicas, step_cap, params.seed, capped / replicas)


def tau1_reference(alpha: float, beta: float, a: int, b: int, k: int, sigma: int) -> float:
    return cf.tau1_conditional(alpha, beta, a, b, k, sigma)


# -- trap times ------------------------------------------------------------------

def sample_trap_shapes(kind: str, alpha: float, n: int, seed: int):
    """Arm lengths of ``n`` traps of ``kind`` as they occur in the tree.

    Kinds (a) and (b) exist only with a nonempty arm, so that arm is
    ``1 + geometric``; kind (c) arms are plain geometrics.
    """
    rng = WalkStream(seed, 0, domain=AUX)
    k = geometric_from_uniform(rng.uniforms(n), alpha)
    l = geometric_from_uniform(rng.uniforms(n), alpha)
    zeros = np.zeros(n, dtype=np.int64)
    if kind == "a":
        return k + 1, zeros
    if kind == "b":
        return zeros, l + 1
    if kind == "c":
        return k, l
    raise DomainError(f"unknown trap kind {kind!r}")


def sample_trap_times(params: ModelParams, n_samples: int, kind: str = "a") -> np.ndarray:
    ks, ls = sample_trap_shapes(kind, params.alpha, n_samples, params.seed)
    return simulate_trap_exits_mixed(kind, ks, ls, params.beta, WalkStream(params.seed, 1, domain=AUX))


def hill_estimate(x: np.ndarray, fraction: float = 0.05) -> float:
    """Hill tail-index estimate from the top ``fraction`` order statistics."""
    x = np.sort(np.asarray(x, dtype=float))[::-1]
    m = int(len(x) * fraction)
    thresh = x[m]
    if m < 100 or thresh <= 0:
        raise InsufficientTailData(f"only {m} tail points above a positive threshold")
    logs = np.log(x[:m]) - math.log(thresh)
    mean = logs.mean()
    if mean <= 0:
        raise InsufficientTailData("tail is degenerate")
    return 1.0 / mean


def trap_tail_exponent(params: ModelParams, n_samples: int, kind: str = "a", fraction: float = 0.05,
                       n_boot: int = 200) -> EstimateCI:
    """Hill estimate of the trap-time tail index with a bootstrap standard error."""
    if params.beta <= 1.0:
        raise InsufficientTailData("no power-law tail at beta = 1")
    if params.beta >= 1.0 / params.alpha:
        raise DomainError("beta must lie below 1/alpha")
    t = sample_trap_times(params, n_samples, kind)
    point = hill_estimate(t, fraction)
    gen = np.random.Generator(np.random.PCG64(derive_key(params.seed, AUX, 2)))
    boots = [hill_estimate(t[gen.integers(0, len(t), len(t))], fraction) for _ in range(n_boot)]
    return EstimateCI(point, float(np.std(boots, ddof=1)), n_samples, 0, params.seed, 0.0)


def second_moment_growth(params: ModelParams, sizes, kind: str = "a") -> List[float]:
    """Sample second moment of trap times over nested prefixes of one sample."""
    t = sample_trap_times(params, max(sizes), kind).astype(float)
    return [float(np.mean(t[:n] ** 2)) for n in sizes]


# -- central limit theorems ----------------------------------------------------

def quenched_endpoints(params: ModelParams, n: int, replicas: int, tree_index: int = 0) -> np.ndarray:
    """``X_n`` columns of ``replicas`` walks on one fixed tree."""
    window = build_window(derive_key(params.seed, TREE, tree_index), params.alpha, n_left=64, n_right=64)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        state = start_state(window)
        advance(state, window, params.beta, WalkStream(params.seed, r), n)
        out[r] = state.col
    return out


def clt_experiment(params: ModelParams, n: int, replicas: int, mode: str, jobs: int = 1) -> CltReport:
    a, b = params.alpha, params.beta
    if mode == "annealed":
        if not 1.0 < b < cf.critical_values(a).beta_c2:
            raise DomainError("annealed mode needs 1 < beta < 1/sqrt(alpha)")
        x = displacements(params, n, replicas, jobs=jobs).astype(float)
        centred = (x - cf.speed(a, b).v * n) / math.sqrt(n)
        var = float(np.var(centred, ddof=1))
        z = centred / math.sqrt(var)
    elif mode == "quenched":
        if b != 1.0:
            raise DomainError("quenched mode needs beta = 1")
        x = quenched_endpoints(params, n, replicas).astype(float)
        z = x / math.sqrt(cf.einstein_sigma2(a) * n)
        var = float(np.var(z, ddof=1))
    else:
        raise DomainError(f"mode must be 'annealed' or 'quenched', got {mode!r}")
    ks = stats.kstest(z, "norm")
    return CltReport(z, float(ks.statistic), float(ks.pvalue), var, mode, endpoints=x)


@dataclass
class EinsteinReport:
    sigma2_mc: EstimateCI
    sigma2_formula: float
    slope_mc: EstimateCI
    slope_formula: float
    epsilon: float


def einstein_check(alpha: float, n: int, replicas: int, seed: int = 0, epsilon: float = 0.05) -> EinsteinReport:
    """Diffusivity at zero bias next to the response of the speed to a small bias."""
    if n < 10**5:
        raise DomainError("n must be >= 1e5")
    p1 = ModelParams.from_alpha(alpha, beta=1.0, seed=seed)
    x = quenched_endpoints(p1, n, replicas) / math.sqrt(n)
    s2 = float(np.var(x, ddof=1))
    s2_ci = EstimateCI(s2, s2 * math.sqrt(2.0 / (replicas - 1)), replicas, n, seed)
    biased = displacements(p1.with_beta(1.0 + epsilon), n, replicas)
    unbiased = displacements(p1, n, replicas)
    point, se = _mean_se((biased - unbiased) / (n * epsilon))
    slope = EstimateCI(point, se, replicas, n, seed)
    deriv = cf.central_difference(lambda bb: cf.speed_value(alpha, bb), 1.0)
    return EinsteinReport(s2_ci, cf.einstein_sigma2(alpha), slope, deriv, epsilon)


# -- escape probabilities --------------------------------------------------------

RETURN_TOL = 1e-7


def _ray_chain(window: TreeWindow, j: int, beta: float):
    """Ray conductances from the edge into ray position ``j`` onward, relative to
    that edge, plus the horizon past which a return has probability < RETURN_TOL."""
    need = math.log(1.0 / RETURN_TOL) / math.log(beta) + 8
    while True:
        ex = window.ray().edge_exponents()
        if j - 1 >= 0 and j < len(ex) and ex[-1] - ex[j - 1] > need:
            break
        window.grow("right")
    rel = (ex[j - 1:] - ex[j - 1]).astype(float)
    cond = beta ** rel
    res = 1.0 / cond
    tail = np.cumsum(res[::-1])[::-1]  # tail[x]: resistance from local x to the window end
    horizon = int(np.nonzero(tail < RETURN_TOL * tail[1])[0][0])
    return cond, horizon


@dataclass
class EscapeReport:
    beta: float
    bounds: tuple
    oracle: List[float] = field(default_factory=list)
    empirical: List[float] = field(default_factory=list)
    std_errors: List[float] = field(default_factory=list)
    regen_exact: List[float] = field(default_factory=list)
    regen_empirical: List[float] = field(default_factory=list)
    regen_std_errors: List[float] = field(default_factory=list)
    regen_bound: float = 0.0

    @property
    def oracle_in_bounds(self) -> bool:
        lo, hi = self.bounds
        return all(lo - 1e-12 <= p <= hi + 1e-12 for p in self.oracle)

    def max_abs_z(self) -> float:
        z = [abs(e - o) / s if s > 0 else (0.0 if e == o else math.inf)
             for o, e, s in zip(self.oracle, self.empirical, self.std_errors)]
        return max(z) if z else 0.0

    def regen_ok(self, n_se: float = 4.0) -> bool:
        return all(e >= self.regen_bound - n_se * s for e, s in zip(self.regen_empirical, self.regen_std_errors))


def _next_block(window: TreeWindow, col: int) -> int:
    """Index of the first block starting right of ``col``."""
    while window.H(window.n_right) <= col:
        window.grow("right")
    return int(np.searchsorted(window.block_arrays()[4], col + 1)) - window.n_left


def escape_bound_check(params: ModelParams, n_points: int, replicas: int, max_index: int = 20) -> EscapeReport:
    """Never-return frequencies of the walk restricted to the ray, at random ray
    positions of independently sampled trees, next to the exact values."""
    b = params.beta
    if b <= 1:
        raise DomainError("beta must be > 1")
    rep = EscapeReport(b, escape_bounds(b), regen_bound=(b - 1.0) / (2.0 * b))
    pick = WalkStream(params.seed, 0, domain=AUX)
    for p in range(n_points):
        window = build_window(derive_key(params.seed, TREE, p), params.alpha, n_left=8, n_right=64)
        rng = WalkStream(params.seed, p)
        # a uniformly chosen ray position
        n = int(pick.uniform() * max_index)
        j = n + window.ray().origin_pos
        rep.oracle.append(escape_probability(window, n, b))
        cond, horizon = _ray_chain(window, j, b)
        hits = ray_escape_count(cond, 1, 1, horizon, replicas, rng)
        freq = hits / replicas
        rep.empirical.append(freq)
        rep.std_errors.append(math.sqrt(max(freq * (1 - freq), 1.0 / replicas) / replicas))
        # the ray entry vertex at the first missing edge right of phi(n)
        m = _next_block(window, int(window.ray().cols[j]))
        jh = window.ray().index_of((1 - window.block(m).w, window.H(m))) + window.ray().origin_pos
        cond, horizon = _ray_chain(window, jh, b)
        rep.regen_exact.append(float(1.0 / cond[0] / np.sum(1.0 / cond[:horizon + 1])))
        hits = ray_escape_count(cond, 1, 0, horizon, replicas, rng)
        freq = hits / replicas
        rep.regen_empirical.append(freq)
        rep.regen_std_errors.append(math.sqrt(max(freq * (1 - freq), 1.0 / replicas) / replicas))
    return rep


# -- ergodic ray statistics ---------------------------------------------------------

def ergodic_ray_statistics(alpha: float, n_blocks: int, seed: int = 0) -> Dict[str, float]:
    """Column advance per ray index and mean holding ``1 + trap edges`` per ray vertex."""
    window = build_window(derive_key(seed, TREE, 0), alpha, n_left=1, n_right=n_blocks)
    ray = window.ray()
    lo = ray.origin_pos
    hi = len(ray) - 1
    n = hi - lo
    ratio = (int(ray.cols[hi]) - int(ray.cols[lo])) / n
    c_lo, c_hi = int(ray.cols[lo]), int(ray.cols[hi])
    trap_edges = sum(t.n_edges for t in window.traps() if c_lo <= t.anchor[1] < c_hi)
    holding = (n + trap_edges) / n
    return {"ray_ratio": ratio, "holding_mean": holding, "ray_steps": n}
