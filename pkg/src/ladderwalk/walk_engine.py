"""Conductance-weighted random walk on a lazily extended :class:`TreeWindow`.

Conductances grow like ``beta**column``.  Only exponent differences ever enter
the kernel: seen from a vertex in column ``c`` the left edge weighs 1, the right
edge ``beta`` and the rung 1 (a rung carries the weight of the horizontal edge
ending in its column), so nothing overflows however far the walk travels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numba import njit

from .closed_form import DomainError
from .rng import WalkStream, next_uniform
from .tree_sampler import BIT_RUNG, TrapDescriptor, TreeWindow

DEFAULT_STEP_CAP = 10**8
GUARD = 2  # columns kept between the walker and either window edge

DONE = 0
NEED_LEFT = 1
NEED_RIGHT = 2
CAPPED = 3
BUFFER_FULL = 4


@njit(cache=True, inline="always")
def _choose(bits, i, row, u, beta):
    """Next ``(row, dcol)`` from vertex ``(row, left_col + i)``."""
    here = bits[i]
    wl = 1.0 if (bits[i - 1] >> row) & 1 else 0.0
    wr = beta if (here >> row) & 1 else 0.0
    wz = 1.0 if here & BIT_RUNG else 0.0
    t = u * (wl + wr + wz)
    if t < wl:
        return row, -1
    if t < wl + wr:
        return row, 1
    return 1 - row, 0


@njit(cache=True, nogil=True)
def _walk_kernel(bits, left_col, pos, n_steps, state, beta, local, track):
    """Advance until ``pos[2] == n_steps`` or the guard band is reached."""
    row = pos[0]
    i = pos[1] - left_col
    steps = pos[2]
    hi = bits.shape[0] - 1 - GUARD
    status = DONE
    while steps < n_steps:
        if i < GUARD:
            status = NEED_LEFT
            break
        if i > hi:
            status = NEED_RIGHT
            break
        row, d = _choose(bits, i, row, next_uniform(state), beta)
        i += d
        steps += 1
        if track:
            local[i, row] += 1
    pos[0] = row
    pos[1] = i + left_col
    pos[2] = steps
    return status


@njit(cache=True, nogil=True)
def _passage_kernel(bits, left_col, pos, target_row, target_col, cap, state, beta,
                    rec, counters, local, track):
    """Walk until ``(target_row, target_col)`` is hit.

    ``rec[j] = (row, col, duration)`` records each stay at a trap anchor;
    ``counters = [n_records, current_duration, ray_steps]``.
    """
    row = pos[0]
    i = pos[1] - left_col
    steps = pos[2]
    hi = bits.shape[0] - 1 - GUARD
    ti = target_col - left_col
    status = DONE
    while True:
        if row == target_row and i == ti:
            status = DONE
            break
        if steps >= cap:
            status = CAPPED
            break
        if i < GUARD:
            status = NEED_LEFT
            break
        if i > hi:
            status = NEED_RIGHT
            break
        if counters[0] >= rec.shape[0]:
            status = BUFFER_FULL
            break
        here = bits[i]
        nrow, d = _choose(bits, i, row, next_uniform(state), beta)
        there = bits[i + d]
        steps += 1
        # bits 3/4 flag ray vertices, bits 5/6 trap anchors
        if (here >> (3 + row)) & 1 and (there >> (3 + nrow)) & 1:
            counters[2] += 1
            if (here >> (5 + row)) & 1:
                n = counters[0]
                rec[n, 0] = row
                rec[n, 1] = i + left_col
                rec[n, 2] = counters[1]
                counters[0] = n + 1
            counters[1] = 0
        else:
            counters[1] += 1
        row = nrow
        i += d
        if track:
            local[i, row] += 1
    pos[0] = row
    pos[1] = i + left_col
    pos[2] = steps
    return status


@dataclass
class WalkerState:
    """Current vertex, step count and optional local-time counters.

    ``local_time`` is a dense ``(ncols, 2)`` array aligned with
    ``local_offset`` (the column of its first row); use :meth:`visits`.
    """

    row: int
    col: int
    step_count: int = 0
    local_time: Optional[np.ndarray] = None
    local_offset: int = 0

    @property
    def vertex(self) -> Tuple[int, int]:
        return self.row, self.col

    def visits(self, vertex) -> int:
        if self.local_time is None:
            raise ValueError("local time was not tracked for this walker")
        r, c = vertex
        j = c - self.local_offset
        if 0 <= j < self.local_time.shape[0]:
            return int(self.local_time[j, r])
        return 0

    def local_time_map(self) -> dict:
        if self.local_time is None:
            return {}
        js, rs = np.nonzero(self.local_time)
        return {(int(r), int(j) + self.local_offset): int(self.local_time[j, r]) for j, r in zip(js, rs)}


@dataclass
class PassageStats:
    tau: int
    trap_times: List[Tuple[TrapDescriptor, int]] = field(default_factory=list)
    ray_steps: int = 0
    capped: bool = False


def start_state(window: TreeWindow, vertex=None, track_local_time: bool = False) -> WalkerState:
    """Walker at ``vertex`` (default: the origin of the ray enumeration)."""
    if vertex is None:
        vertex = window.ray()(0)
    row, col = int(vertex[0]), int(vertex[1])
    state = WalkerState(row, col)
    if track_local_time:
        state.local_time = np.zeros((len(window.bits), 2), dtype=np.int64)
        state.local_offset = window.left_col
        state.local_time[col - window.left_col, row] = 1
    return state


def _sync_local(state: WalkerState, window: TreeWindow):
    lt = state.local_time
    if lt is None:
        return np.zeros((1, 2), dtype=np.int64), False
    if state.local_offset != window.left_col or lt.shape[0] != len(window.bits):
        fresh = np.zeros((len(window.bits), 2), dtype=np.int64)
        shift = state.local_offset - window.left_col
        fresh[shift:shift + lt.shape[0]] = lt
        state.local_time = fresh
        state.local_offset = window.left_col
    return state.local_time, True


def transition_distribution(window: TreeWindow, vertex, beta: float):
    """``[(neighbour, probability), ...]`` for one step from ``vertex``.

    Weights are ``beta ** (e - e_min)`` over the exponents ``e`` of the
    adjacent edges, so the result does not depend on the column.
    """
    row, col = vertex
    i = col - window.left_col
    if not (1 <= i <= len(window.bits) - 2):
        raise RuntimeError(f"neighbours of {vertex} are not materialised; extend the window first")
    here = int(window.bits[i])
    left = int(window.bits[i - 1])
    nbrs = []
    if (left >> row) & 1:
        nbrs.append(((row, col - 1), col))
    if (here >> row) & 1:
        nbrs.append(((row, col + 1), col + 1))
    if here & BIT_RUNG:
        nbrs.append(((1 - row, col), col))
    lo = min(e for _, e in nbrs)
    weights = [float(beta) ** (e - lo) for _, e in nbrs]
    total = sum(weights)
    return [(v, w / total) for (v, _), w in zip(nbrs, weights)]


def advance(state: WalkerState, window: TreeWindow, beta: float, rng: WalkStream, n_steps: int) -> WalkerState:
    """Take ``n_steps`` more steps, growing the window whenever the walker nears an edge."""
    if beta < 1.0:
        raise DomainError("beta must be >= 1")
    goal = state.step_count + int(n_steps)
    pos = np.array([state.row, state.col, state.step_count], dtype=np.int64)
    while True:
        local, track = _sync_local(state, window)
        status = _walk_kernel(window.bits, window.left_col, pos, goal, rng.state, float(beta), local, track)
        state.row, state.col, state.step_count = int(pos[0]), int(pos[1]), int(pos[2])
        if status == DONE:
            return state
        window.grow("left" if status == NEED_LEFT else "right")


def step(state: WalkerState, window: TreeWindow, beta: float, rng: WalkStream) -> WalkerState:
    return advance(state, window, beta, rng, 1)


def run_passage(state: WalkerState, window: TreeWindow, beta: float, rng: WalkStream,
                target_column: int, step_cap: int = DEFAULT_STEP_CAP,
                record_traps: bool = True) -> PassageStats:
    """Run until the walk reaches the ray vertex through which column
    ``target_column`` is first entered, or until ``step_cap`` steps."""
    if target_column <= state.col:
        raise DomainError("target column must lie right of the walker")
    while window.right_col - GUARD <= target_column:
        window.grow("right")
    t_row, t_col = window.first_ray_vertex(target_column)
    pos = np.array([state.row, state.col, state.step_count], dtype=np.int64)
    start = state.step_count
    cap = start + int(step_cap)
    rec = np.zeros((4096 if record_traps else 1, 3), dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    records = []
    while True:
        local, track = _sync_local(state, window)
        status = _passage_kernel(window.bits, window.left_col, pos, t_row, t_col, cap, rng.state,
                                 float(beta), rec, counters, local, track)
        state.row, state.col, state.step_count = int(pos[0]), int(pos[1]), int(pos[2])
        if status in (BUFFER_FULL, DONE, CAPPED) and counters[0]:
            if record_traps:
                records.append(rec[:counters[0]].copy())
            counters[0] = 0
        if status == DONE or status == CAPPED:
            break
        if status in (NEED_LEFT, NEED_RIGHT):
            window.grow("left" if status == NEED_LEFT else "right")
    trap_times = []
    if record_traps and records:
        lookup = {t.anchor: t for t in window.traps()}
        for r, c, dur in np.concatenate(records).tolist():
            trap_times.append((lookup[(r, c)], dur))
    return PassageStats(tau=state.step_count - start, trap_times=trap_times,
                        ray_steps=int(counters[2]), capped=status == CAPPED)


# -- isolated traps --------------------------------------------------------

_KIND = {"a": 0, "b": 1, "c": 2}


@njit(cache=True, inline="always")
def _arm_step(depth, length, p_deeper, u):
    if depth == length or u >= p_deeper:
        return depth - 1
    return depth + 1


@njit(cache=True, nogil=True)
def _one_trap_exit(kind, k, l, beta, state):
    """Steps spent in one trap before the next ray step (that step excluded).

    Location codes: 0 anchor, 1 rung top (kind c), 2 right arm, 3 left arm.
    """
    p_right = beta / (1.0 + beta)  # move deeper into a right arm
    p_left = 1.0 / (1.0 + beta)  # move deeper into a left arm
    if kind == 0:
        w_exit, w_in = 2.0, (beta if k > 0 else 0.0)
    elif kind == 1:
        w_exit, w_in = 1.0 + beta, (1.0 if l > 0 else 0.0)
    else:
        w_exit, w_in = 1.0 + beta, 1.0
    loc = 0
    depth = 0
    t = 0
    while True:
        u = next_uniform(state)
        if loc == 0:
            if u * (w_exit + w_in) < w_exit:
                return t
            if kind == 0:
                loc, depth = 2, 1
            elif kind == 1:
                loc, depth = 3, 1
            else:
                loc = 1
        elif loc == 1:
            wr = beta if k > 0 else 0.0
            wl = 1.0 if l > 0 else 0.0
            x = u * (1.0 + wr + wl)
            if x < 1.0:
                loc = 0
            elif x < 1.0 + wr:
                loc, depth = 2, 1
            else:
                loc, depth = 3, 1
        elif loc == 2:
            depth = _arm_step(depth, k, p_right, u)
        else:
            depth = _arm_step(depth, l, p_left, u)
        if depth == 0 and loc >= 2:
            loc = 0 if kind != 2 else 1
        t += 1


@njit(cache=True, nogil=True)
def _trap_exit_batch(kind, ks, ls, beta, state, out):
    for i in range(out.shape[0]):
        out[i] = _one_trap_exit(kind, ks[i], ls[i], beta, state)


def simulate_trap_exits(trap: TrapDescriptor, beta: float, rng: WalkStream, n: int) -> np.ndarray:
    """``n`` independent trap durations for one trap shape."""
    ks = np.full(int(n), trap.k, dtype=np.int64)
    ls = np.full(int(n), trap.l, dtype=np.int64)
    return simulate_trap_exits_mixed(trap.kind, ks, ls, beta, rng)


def simulate_trap_exits_mixed(kind: str, ks, ls, beta: float, rng: WalkStream) -> np.ndarray:
    """One duration per ``(ks[i], ls[i])`` pair for traps of the given kind."""
    if kind not in _KIND:
        raise DomainError(f"unknown trap kind {kind!r}")
    ks = np.ascontiguousarray(ks, dtype=np.int64)
    ls = np.ascontiguousarray(ls, dtype=np.int64)
    out = np.empty(len(ks), dtype=np.int64)
    _trap_exit_batch(_KIND[kind], ks, ls, float(beta), rng.state, out)
    return out


def simulate_trap_exit(trap: TrapDescriptor, beta: float, rng: WalkStream) -> int:
    return int(simulate_trap_exits(trap, beta, rng, 1)[0])


# -- walk restricted to the ray ---------------------------------------------

@njit(cache=True, nogil=True)
def _ray_escapes(cond, start, forbidden, horizon, n_rep, state):
    """Count walks from ``start`` on the ray chain that reach ``horizon`` before
    visiting ``forbidden`` or anything left of it (at time >= 1).
    ``cond[i]`` weighs edge (i, i+1)."""
    escaped = 0
    for _ in range(n_rep):
        x = start
        while True:
            if next_uniform(state) * (cond[x - 1] + cond[x]) < cond[x]:
                x += 1
            else:
                x -= 1
            if x <= forbidden:
                break
            if x >= horizon:
                escaped += 1
                break
    return escaped


def ray_escape_count(cond: np.ndarray, start: int, forbidden: int, horizon: int, n_rep: int,
                     rng: WalkStream) -> int:
    """Number of ``n_rep`` ray walks from ``start`` reaching ``horizon`` first."""
    if not (1 <= start and start - 1 <= forbidden <= start < horizon < len(cond)):
        raise DomainError("need 1 <= start, start-1 <= forbidden <= start < horizon < len(cond)")
    return int(_ray_escapes(np.ascontiguousarray(cond, dtype=np.float64), int(start), int(forbidden),
                            int(horizon), int(n_rep), rng.state))


def write_trace(state: WalkerState, window: TreeWindow, beta: float, rng: WalkStream,
                n_steps: int, every: int, out) -> WalkerState:
    """Write ``step row column`` lines to ``out`` every ``every`` steps."""
    if every < 1:
        raise DomainError("trace interval must be >= 1")
    out.write(f"{state.step_count} {state.row} {state.col}\n")
    goal = state.step_count + n_steps
    while state.step_count < goal:
        advance(state, window, beta, rng, min(every, goal - state.step_count))
        out.write(f"{state.step_count} {state.row} {state.col}\n")
    return state
