"""Random spanning trees of the ladder from their i.i.d. block decomposition.

Block ``n`` spans the columns ``H_n .. H_{n+1}-1``.  The horizontal edge
entering column ``H_n`` in row ``W_n`` is missing, the rung sits at
``V_n = H_n + F'_n`` and ``H_{n+1} - H_n = F_n + F'_n + 1``.  The block that
contains column 0 (``n = 0``) is size biased.

A :class:`TreeWindow` materialises blocks ``-n_left .. n_right`` and encodes
the induced edge set as one small integer per column (see the ``BIT_*``
constants), which is what the jitted walk kernels consume.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import rng
from .closed_form import DomainError, _check_alpha

# Per-column bit layout of TreeWindow.bits.
BIT_H0 = 1  # edge (0, c) - (0, c+1)
BIT_H1 = 2  # edge (1, c) - (1, c+1)
BIT_RUNG = 4  # edge (0, c) - (1, c)
BIT_RAY0 = 8  # vertex (0, c) lies on the ray
BIT_RAY1 = 16
BIT_ANCHOR0 = 32  # a trap hangs off (0, c)
BIT_ANCHOR1 = 64

GROWTH_QUANTUM = 64


@dataclass(frozen=True)
class Block:
    f: int
    f_prime: int
    w: int

    @property
    def gap(self) -> int:
        return self.f + self.f_prime + 1


@dataclass(frozen=True)
class OriginBlock:
    g0: int
    h0: int
    f0_prime: int
    w0: int

    def __post_init__(self):
        if not (self.g0 >= 1 and -self.g0 < self.h0 <= 0 and 0 <= self.f0_prime <= self.g0 - 1):
            raise DomainError(f"inconsistent origin block {self}")

    @property
    def f0(self) -> int:
        return self.g0 - 1 - self.f0_prime

    @property
    def v0(self) -> int:
        return self.h0 + self.f0_prime


@dataclass(frozen=True)
class TrapDescriptor:
    kind: str
    anchor: Tuple[int, int]
    k: int = 0
    l: int = 0

    @property
    def n_edges(self) -> int:
        return self.k + self.l + (1 if self.kind == "c" else 0)


def geometric_from_uniform(u, alpha):
    """Inversion sampling of ``P[F = k] = (1 - alpha) alpha^k`` from ``u`` in (0, 1]."""
    return np.floor(np.log(u) / math.log(alpha)).astype(np.int64)


def origin_gap_pmf(alpha, kmax):
    k = np.arange(1, kmax + 1)
    return (1 - alpha) ** 3 / (1 + alpha) * alpha ** (k - 1.0) * k * k


def _origin_gap_from_uniform(u, alpha):
    # cumulative inversion; the pmf ratio k^2 alpha^(k-1) decays geometrically
    k = 1
    p = (1 - alpha) ** 3 / (1 + alpha)
    cdf = p
    while cdf < u and p > 0.0:
        p *= alpha * ((k + 1) / k) ** 2
        k += 1
        cdf += p
    return k


class KeyedBlockSource:
    """Blocks drawn from the counter-based stream ``key``.

    ``interior(ns)`` returns the ``(F, F', W)`` arrays for block indices
    ``ns`` (any nonzero integers) and ``origin()`` the size-biased block 0.
    """

    def __init__(self, key: int, alpha: float):
        _check_alpha(alpha)
        self.key = np.uint64(key)
        self.alpha = float(alpha)

    def interior(self, ns):
        ns = np.asarray(ns, dtype=np.int64)
        f = geometric_from_uniform(rng.keyed_uniforms(self.key, ns, rng.FIELD_F), self.alpha)
        fp = geometric_from_uniform(rng.keyed_uniforms(self.key, ns, rng.FIELD_FP), self.alpha)
        w = (rng.keyed_uniforms(self.key, ns, rng.FIELD_W) > 0.5).astype(np.int64)
        return f, fp, w

    def origin(self) -> OriginBlock:
        zero = np.zeros(1, dtype=np.int64)
        u = [float(rng.keyed_uniforms(self.key, zero, fld)[0])
             for fld in (rng.FIELD_G0, rng.FIELD_H0, rng.FIELD_FP0, rng.FIELD_W0)]
        g0 = _origin_gap_from_uniform(u[0], self.alpha)
        h0 = -min(int(math.ceil(u[1] * g0)) - 1, g0 - 1)
        fp0 = min(int(math.ceil(u[2] * g0)) - 1, g0 - 1)
        return OriginBlock(g0, h0, fp0, int(u[3] > 0.5))


class FixedBlockSource:
    """Deterministic source for tests and for conditioning on the origin block.

    ``interior`` falls back to ``base`` (or to constant ``default``) for
    indices not listed in ``overrides``.
    """

    def __init__(self, origin: OriginBlock, overrides=None, base=None, default=Block(0, 0, 0)):
        self._origin = origin
        self.overrides = dict(overrides or {})
        self.base = base
        self.default = default
        self.alpha = getattr(base, "alpha", None)

    def interior(self, ns):
        ns = np.asarray(ns, dtype=np.int64)
        if self.base is not None:
            f, fp, w = (a.copy() for a in self.base.interior(ns))
        else:
            f = np.full(ns.shape, self.default.f, dtype=np.int64)
            fp = np.full(ns.shape, self.default.f_prime, dtype=np.int64)
            w = np.full(ns.shape, self.default.w, dtype=np.int64)
        for i, n in enumerate(ns.tolist()):
            blk = self.overrides.get(n)
            if blk is not None:
                f[i], fp[i], w[i] = blk.f, blk.f_prime, blk.w
        return f, fp, w

    def origin(self) -> OriginBlock:
        return self._origin


def sample_interior_block(key: int, alpha: float, n: int = 1) -> Block:
    """Block ``n`` (nonzero) of the tree with stream key ``key``."""
    if n == 0:
        raise DomainError("block 0 is the size-biased origin block")
    f, fp, w = KeyedBlockSource(key, alpha).interior([n])
    return Block(int(f[0]), int(fp[0]), int(w[0]))


def sample_origin_block(key: int, alpha: float) -> OriginBlock:
    return KeyedBlockSource(key, alpha).origin()


@dataclass(frozen=True)
class RayEnumeration:
    """Ray vertices in left-to-right order; ``index 0`` is the first ray vertex in column 0."""

    rows: np.ndarray
    cols: np.ndarray
    origin_pos: int

    @property
    def min_index(self) -> int:
        return -self.origin_pos

    @property
    def max_index(self) -> int:
        return len(self.rows) - 1 - self.origin_pos

    def __len__(self):
        return len(self.rows)

    def __call__(self, i: int) -> Tuple[int, int]:
        j = i + self.origin_pos
        if not 0 <= j < len(self.rows):
            raise IndexError(f"ray index {i} outside the materialised window")
        return int(self.rows[j]), int(self.cols[j])

    def index_of(self, vertex) -> int:
        row, col = vertex
        j = int(np.searchsorted(self.cols, col, side="left"))
        while j < len(self.cols) and self.cols[j] == col:
            if self.rows[j] == row:
                return j - self.origin_pos
            j += 1
        raise KeyError(f"{vertex} is not a ray vertex of the window")

    def edge_exponents(self) -> np.ndarray:
        """Conductance exponent of each ray edge ``(i, i+1)``; a rung at column
        ``c`` carries the same weight as the horizontal edge ending at ``c``."""
        step = np.diff(self.cols)
        return np.where(step == 1, self.cols[1:], self.cols[:-1]).astype(np.int64)


class TreeWindow:
    """Finite, lazily growable piece of one infinite random spanning tree."""

    def __init__(self, source, n_left: int = 1, n_right: int = 1):
        if n_left < 1 or n_right < 1:
            raise DomainError("a window needs at least one block on each side")
        self.source = source
        self.origin = source.origin()
        self._right = tuple(np.empty(0, dtype=np.int64) for _ in range(3))
        self._left = tuple(np.empty(0, dtype=np.int64) for _ in range(3))
        self._w_beyond = None
        self._append("right", n_right)
        self._append("left", n_left)
        self._rebuild()

    # -- block bookkeeping -------------------------------------------------

    @property
    def n_right(self) -> int:
        return len(self._right[0])

    @property
    def n_left(self) -> int:
        return len(self._left[0])

    def _append(self, side, count):
        if side == "right":
            ns = np.arange(self.n_right + 1, self.n_right + count + 2, dtype=np.int64)
            f, fp, w = self.source.interior(ns)
            self._right = tuple(np.concatenate([old, new[:-1]]) for old, new in zip(self._right, (f, fp, w)))
            self._w_beyond = int(w[-1])
        else:
            ns = -np.arange(self.n_left + 1, self.n_left + count + 1, dtype=np.int64)
            f, fp, w = self.source.interior(ns)
            self._left = tuple(np.concatenate([old, new]) for old, new in zip(self._left, (f, fp, w)))

    def block_arrays(self):
        """``(n, F, F', W, H, V)`` arrays for all materialised blocks, left to right."""
        o = self.origin
        lf, lfp, lw = (a[::-1] for a in self._left)
        rf, rfp, rw = self._right
        n = np.arange(-self.n_left, self.n_right + 1, dtype=np.int64)
        f = np.concatenate([lf, [o.f0], rf])
        fp = np.concatenate([lfp, [o.f0_prime], rfp])
        w = np.concatenate([lw, [o.w0], rw])
        gaps = f + fp + 1
        h = np.empty_like(gaps)
        zero = self.n_left
        h[zero] = o.h0
        h[zero + 1:] = o.h0 + np.cumsum(gaps[zero:-1])
        h[:zero] = o.h0 - np.cumsum(gaps[:zero][::-1])[::-1]
        return n, f, fp, w, h, h + fp

    def _rebuild(self):
        n, f, fp, w, h, v = self.block_arrays()
        w_next = np.append(w[1:], self._w_beyond)
        end = h + f + fp + 1
        self.left_col = int(h[0])
        self.right_col = int(end[-1] - 1)
        ncols = self.right_col - self.left_col + 1
        bits = np.full(ncols, BIT_H0 | BIT_H1, dtype=np.int64)
        bits[-1] = 0
        inner = h[1:] - 1 - self.left_col
        bits[inner] &= ~(1 << w[1:])
        bits[v - self.left_col] |= BIT_RUNG

        r_in = 1 - w
        r_out = 1 - w_next
        blk = np.repeat(np.arange(len(n)), f + fp + 1)
        cols = np.arange(self.left_col, self.right_col + 1)
        before = cols <= v[blk]
        after = cols >= v[blk]
        bits[before] |= BIT_RAY0 << r_in[blk][before]
        bits[after] |= BIT_RAY0 << r_out[blk][after]
        switch = w != w_next
        vi = v - self.left_col
        # type (a): right of the turning point, type (b): left of it; type (c): the rung itself
        bits[vi[switch & (f > 0)]] |= BIT_ANCHOR0 << r_in[switch & (f > 0)]
        bits[vi[switch & (fp > 0)]] |= BIT_ANCHOR0 << r_out[switch & (fp > 0)]
        bits[vi[~switch]] |= BIT_ANCHOR0 << r_in[~switch]
        self.bits = bits
        self._blocks = (n, f, fp, w, h, v, w_next)
        self._ray = None

    def extend(self, side: str, n_blocks: int) -> "TreeWindow":
        if side not in ("left", "right"):
            raise DomainError(f"side must be 'left' or 'right', got {side!r}")
        if n_blocks < 0:
            raise DomainError("n_blocks must be non-negative")
        if n_blocks:
            self._append(side, n_blocks)
            self._rebuild()
        return self

    def grow(self, side: str):
        """Extend ``side`` by a multiple of the growth quantum, roughly doubling it."""
        have = self.n_left if side == "left" else self.n_right
        step = GROWTH_QUANTUM * max(1, -(-have // GROWTH_QUANTUM))
        return self.extend(side, step)

    # -- derived views -------------------------------------------------------

    def H(self, n: int) -> int:
        return int(self._blocks[4][n + self.n_left])

    def V(self, n: int) -> int:
        return int(self._blocks[5][n + self.n_left])

    def block(self, n: int) -> Block:
        _, f, fp, w, *_ = self._blocks
        i = n + self.n_left
        return Block(int(f[i]), int(fp[i]), int(w[i]))

    def has_edge(self, u, v) -> bool:
        (r1, c1), (r2, c2) = sorted([tuple(u), tuple(v)], key=lambda x: (x[1], x[0]))
        if not (self.left_col <= c1 and c2 <= self.right_col):
            return False
        b = int(self.bits[c1 - self.left_col])
        if c1 == c2 and r1 != r2:
            return bool(b & BIT_RUNG)
        if r1 == r2 and c2 == c1 + 1:
            return bool(b & (BIT_H0 << r1))
        return False

    def edges(self) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
        out = []
        for i, b in enumerate(self.bits.tolist()):
            c = self.left_col + i
            if b & BIT_RUNG:
                out.append(((0, c), (1, c)))
            for r in (0, 1):
                if b & (BIT_H0 << r):
                    out.append(((r, c), (r, c + 1)))
        return out

    def ray(self) -> RayEnumeration:
        if self._ray is None:
            n, f, fp, w, h, v, w_next = self._blocks
            switch = (w != w_next).astype(np.int64)
            sizes = f + fp + 1 + switch
            blk = np.repeat(np.arange(len(n)), sizes)
            starts = np.cumsum(sizes) - sizes
            pos = np.arange(blk.size) - starts[blk]
            # within a block: columns H..V on r_in, then (if switching) V..end on r_out
            on_first = pos <= (v - h)[blk]
            cols = h[blk] + np.where(on_first, pos, pos - switch[blk])
            rows = np.where(on_first, 1 - w[blk], 1 - w_next[blk])
            origin_pos = int(np.searchsorted(cols, 0, side="left"))
            self._ray = RayEnumeration(rows.astype(np.int64), cols.astype(np.int64), origin_pos)
        return self._ray

    def first_ray_vertex(self, col: int) -> Tuple[int, int]:
        """The ray vertex through which the walk first reaches column ``col``."""
        ray = self.ray()
        j = int(np.searchsorted(ray.cols, col, side="left"))
        if j >= len(ray.cols) or ray.cols[j] != col:
            raise IndexError(f"column {col} outside the materialised window")
        return int(ray.rows[j]), col

    def traps(self) -> List[TrapDescriptor]:
        n, f, fp, w, h, v, w_next = self._blocks
        out = []
        for fi, fpi, wi, wn, vi in zip(f.tolist(), fp.tolist(), w.tolist(), w_next.tolist(), v.tolist()):
            if wi != wn:
                if fi > 0:
                    out.append(TrapDescriptor("a", (1 - wi, vi), k=fi))
                if fpi > 0:
                    out.append(TrapDescriptor("b", (1 - wn, vi), l=fpi))
            else:
                out.append(TrapDescriptor("c", (1 - wi, vi), k=fi, l=fpi))
        return out

    def dump(self) -> str:
        """Line format: ``O G0 H0 F0' W0`` then ``n H_n V_n F_n F'_n W_n`` per block."""
        o = self.origin
        buf = io.StringIO()
        buf.write(f"O {o.g0} {o.h0} {o.f0_prime} {o.w0}\n")
        n, f, fp, w, h, v, _ = self._blocks
        for row in zip(n.tolist(), h.tolist(), v.tolist(), f.tolist(), fp.tolist(), w.tolist()):
            buf.write(" ".join(map(str, row)) + "\n")
        return buf.getvalue()


def build_window(key_or_source, alpha: Optional[float] = None, n_left: int = 1, n_right: int = 1) -> TreeWindow:
    """Window with ``n_left`` / ``n_right`` interior blocks around the origin block.

    ``key_or_source`` is either a stream key (with ``alpha``) or a block source.
    """
    if isinstance(key_or_source, (int, np.integer)):
        if alpha is None:
            raise DomainError("alpha is required when building from a stream key")
        source = KeyedBlockSource(int(key_or_source), alpha)
    else:
        source = key_or_source
    return TreeWindow(source, n_left, n_right)


def extend_window(window: TreeWindow, side: str, n_blocks: int) -> TreeWindow:
    return window.extend(side, n_blocks)


def ray_of(window: TreeWindow) -> RayEnumeration:
    return window.ray()


def traps_of(window: TreeWindow) -> List[TrapDescriptor]:
    return window.traps()


def validate_window(window: TreeWindow) -> None:
    """Raise ``AssertionError`` unless the window satisfies the structural invariants."""
    n, f, fp, w, h, v, _ = window._blocks
    assert np.all(np.diff(h) > 0), "H_n must increase"
    assert h[window.n_left] <= 0 < h[window.n_left + 1], "origin block must contain column 0"
    assert np.all((h <= v) & (v < np.append(h[1:], window.right_col + 1))), "H_n <= V_n < H_{n+1}"
    assert np.array_equal(np.diff(h), (f + fp + 1)[:-1]), "gap identity"
    bits = window.bits
    ncols = len(bits)
    n_edges = int(np.sum(bits & BIT_H0 > 0) + np.sum(bits & BIT_H1 > 0) + np.sum(bits & BIT_RUNG > 0))
    assert n_edges == 2 * ncols - 1, "a spanning tree on 2m vertices has 2m-1 edges"
    # connectivity by union-find (acyclic follows from the edge count)
    parent = list(range(2 * ncols))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (r1, c1), (r2, c2) in window.edges():
        a = find(2 * (c1 - window.left_col) + r1)
        b = find(2 * (c2 - window.left_col) + r2)
        assert a != b, "cycle detected"
        parent[a] = b
    roots = {find(x) for x in range(2 * ncols)}
    assert len(roots) == 1, "window is not connected"
    rungs = np.flatnonzero(bits & BIT_RUNG) + window.left_col
    assert np.array_equal(rungs, v), "exactly one rung per block"
