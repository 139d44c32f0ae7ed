"""Exact computations on finite weighted graphs.

Everything here is a dense linear solve or a closed sum; no sampling.  These
routines are the reference values the Monte Carlo code is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, List, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .closed_form import DomainError
from .tree_sampler import TreeWindow

MAX_DENSE = 1000
RESIDUAL_TOL = 1e-12


class WeightedGraph:
    """Finite undirected graph with strictly positive edge weights."""

    def __init__(self, edges: Iterable[Tuple[Hashable, Hashable, float]] = ()):
        self.index: Dict[Hashable, int] = {}
        self.vertices: List[Hashable] = []
        self._edges: Dict[Tuple[int, int], float] = {}
        for u, v, w in edges:
            self.add_edge(u, v, w)

    def _id(self, v) -> int:
        if v not in self.index:
            self.index[v] = len(self.vertices)
            self.vertices.append(v)
        return self.index[v]

    def add_edge(self, u, v, weight: float) -> None:
        if not weight > 0 or not np.isfinite(weight):
            raise DomainError(f"edge weight must be positive and finite, got {weight}")
        if u == v:
            raise DomainError("self-loops are not allowed")
        i, j = self._id(u), self._id(v)
        key = (min(i, j), max(i, j))
        self._edges[key] = self._edges.get(key, 0.0) + float(weight)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def edges(self):
        return [(self.vertices[i], self.vertices[j], w) for (i, j), w in self._edges.items()]

    def total_weight(self) -> float:
        return float(sum(self._edges.values()))

    def conductance_matrix(self) -> np.ndarray:
        n = len(self)
        if n > MAX_DENSE:
            raise DomainError(f"graph has {n} vertices; dense solves are limited to {MAX_DENSE}")
        a = np.zeros((n, n))
        for (i, j), w in self._edges.items():
            a[i, j] = a[j, i] = w
        return a

    def vertex_weights(self) -> np.ndarray:
        return self.conductance_matrix().sum(axis=1)

    def transition_matrix(self) -> np.ndarray:
        a = self.conductance_matrix()
        return a / a.sum(axis=1, keepdims=True)

    def check_connected(self) -> None:
        if len(self) == 0:
            raise DomainError("empty graph")
        n_comp, _ = connected_components(csr_matrix(self.conductance_matrix() > 0), directed=False)
        if n_comp != 1:
            raise DomainError(f"graph is disconnected ({n_comp} components)")


def stationary_distribution(graph: WeightedGraph) -> Dict[Hashable, float]:
    """Reversible stationary law ``C(x) / C(V)``."""
    graph.check_connected()
    cx = graph.vertex_weights()
    pi = cx / cx.sum()
    return dict(zip(graph.vertices, pi.tolist()))


def _solve_hitting(p: np.ndarray, interior: np.ndarray) -> np.ndarray:
    m = np.eye(len(interior)) - p[np.ix_(interior, interior)]
    rhs = np.ones(len(interior))
    try:
        h = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise DomainError("boundary is not reachable from every interior vertex") from exc
    if not np.all(np.isfinite(h)) or np.max(np.abs(m @ h - rhs)) > RESIDUAL_TOL * max(1.0, np.max(np.abs(h))):
        raise DomainError("hitting-time system is singular or ill-conditioned")
    return h


def hitting_times(graph: WeightedGraph, boundary) -> Dict[Hashable, float]:
    """Mean hitting time of ``boundary`` from every vertex (0 on the boundary)."""
    graph.check_connected()
    bset = {graph.index[b] for b in boundary}
    if not bset:
        raise DomainError("boundary must be nonempty")
    interior = np.array([i for i in range(len(graph)) if i not in bset], dtype=np.int64)
    out = {graph.vertices[i]: 0.0 for i in bset}
    if len(interior):
        h = _solve_hitting(graph.transition_matrix(), interior)
        out.update({graph.vertices[i]: float(t) for i, t in zip(interior, h)})
    return out


def expected_exit_time(graph: WeightedGraph, start, boundary) -> float:
    """Mean number of steps from ``start`` until the walk first hits ``boundary``."""
    boundary = set(boundary)
    if start in boundary:
        raise DomainError("start must not lie in the boundary")
    for b in boundary:
        if b not in graph.index:
            raise DomainError(f"boundary vertex {b!r} not in graph")
    return hitting_times(graph, boundary)[start]


def return_time_by_solve(graph: WeightedGraph, x) -> float:
    """``1 + sum_y P(x, y) E_y[hit x]`` from the hitting-time system."""
    h = hitting_times(graph, {x})
    p = graph.transition_matrix()
    i = graph.index[x]
    return 1.0 + sum(p[i, j] * h[graph.vertices[j]] for j in np.nonzero(p[i])[0])


def expected_return_time(graph: WeightedGraph, x) -> float:
    """Mean first-return time to ``x``; the ``C(V)/C(x)`` value, cross-checked
    against the linear-solve route."""
    graph.check_connected()
    cx = graph.vertex_weights()
    value = float(cx.sum() / cx[graph.index[x]])
    check = return_time_by_solve(graph, x)
    if abs(check - value) > 1e-10 * value:
        raise AssertionError(f"return time mismatch: {value} vs {check}")
    return value


@dataclass(frozen=True)
class TrapGadget:
    """A single trap together with its anchor ``y`` and the two ray neighbours.

    Weights are relative to the anchor column: the ray edges at ``y`` weigh
    1 and ``beta`` (or 1 and 1 when the ray turns through a rung at ``y``).
    """

    kind: str
    k: int
    l: int
    beta: float

    def graph(self) -> WeightedGraph:
        return gadget_graph(self.kind, self.k, self.l, self.beta)


def _arm(g: WeightedGraph, root, tag: str, length: int, first: float, ratio: float) -> None:
    prev, w = root, first
    for j in range(1, length + 1):
        g.add_edge(prev, (tag, j), w)
        prev, w = (tag, j), w * ratio


def gadget_graph(kind: str, k: int, l: int, beta: float) -> WeightedGraph:
    """Vertices ``"y"`` (anchor), ``"x1"``, ``"x2"`` (its ray neighbours) and the trap."""
    if k < 0 or l < 0:
        raise DomainError("arm lengths must be nonnegative")
    if beta < 1:
        raise DomainError("beta must be >= 1")
    b = float(beta)
    g = WeightedGraph()
    if kind == "a":
        # ray arrives from the left and leaves through the rung; arm runs right
        g.add_edge("x1", "y", 1.0)
        g.add_edge("x2", "y", 1.0)
        _arm(g, "y", "r", k, b, b)
    elif kind == "b":
        # ray arrives through the rung and leaves right; arm runs left
        g.add_edge("x1", "y", 1.0)
        g.add_edge("x2", "y", b)
        _arm(g, "y", "l", l, 1.0, 1.0 / b)
    elif kind == "c":
        g.add_edge("x1", "y", 1.0)
        g.add_edge("x2", "y", b)
        g.add_edge("y", "u", 1.0)
        _arm(g, "u", "r", k, b, b)
        _arm(g, "u", "l", l, 1.0, 1.0 / b)
    else:
        raise DomainError(f"unknown trap kind {kind!r}")
    return g


def trap_exit_time(kind: str, k: int, l: int, beta: float) -> float:
    """Mean hitting time of the ray neighbours from the anchor."""
    return expected_exit_time(gadget_graph(kind, k, l, beta), "y", {"x1", "x2"})


def trap_time(kind: str, k: int, l: int, beta: float) -> float:
    """Mean steps spent in the trap, the final step back onto the ray excluded."""
    return trap_exit_time(kind, k, l, beta) - 1.0


def ray_resistance(window: TreeWindow, n: int, beta: float, rel_tol: float = 1e-12,
                   max_grow: int = 64) -> Tuple[float, float, float]:
    """``(R, c_in, c_out)`` for ray index ``n``, all relative to ``beta**e``
    where ``e`` is the exponent of the edge into ``phi(n)``.

    The sum is cut once the tail bound ``2 beta/(beta-1) beta**-h`` falls below
    ``rel_tol`` times the partial sum, ``h`` being the exponent gain so far.
    """
    if beta <= 1:
        raise DomainError("beta must be > 1 (resistance to infinity diverges)")
    b = float(beta)
    tail_const = 2.0 * b / (b - 1.0)
    for _ in range(max_grow + 1):
        ray = window.ray()
        j = n + ray.origin_pos
        if j < 1:
            raise DomainError(f"ray index {n} lies left of the window")
        ex = ray.edge_exponents()
        if j < len(ex):
            ref = int(ex[j - 1])
            rel = ex[j:] - ref
            terms = b ** (-rel.astype(float))
            partial = np.cumsum(terms)
            bound = tail_const * b ** (-(rel.astype(float)))
            ok = np.nonzero(bound < rel_tol * partial)[0]
            if len(ok):
                stop = int(ok[0])
                return float(partial[stop]), 1.0, float(b ** (int(ex[j]) - ref))
        window.grow("right")
    raise DomainError("window could not be grown far enough to bound the resistance tail")


def escape_probability(window: TreeWindow, n: int, beta: float, rel_tol: float = 1e-12) -> float:
    """Probability that the ray walk started at ``phi(n)`` never returns."""
    r, c_in, c_out = ray_resistance(window, n, beta, rel_tol)
    return 1.0 / ((c_in + c_out) * r)


def escape_bounds(beta: float) -> Tuple[float, float]:
    q = (beta - 1.0) / (beta + 1.0)
    return 0.5 * q, q
