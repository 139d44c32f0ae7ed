import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ladderwalk.closed_form import DomainError
from ladderwalk.rng import TREE, derive_key
from ladderwalk.tree_sampler import (
    BIT_RAY0,
    BIT_RAY1,
    BIT_RUNG,
    Block,
    FixedBlockSource,
    KeyedBlockSource,
    OriginBlock,
    TrapDescriptor,
    build_window,
    extend_window,
    origin_gap_pmf,
    ray_of,
    sample_interior_block,
    sample_origin_block,
    traps_of,
    validate_window,
)

GOLDEN_ALPHA = 2 - math.sqrt(3)


def _chi2_pvalue(counts, probs, min_expected=5.0):
    """Pearson chi-square p-value, pooling the tail so every bin expects >= min_expected."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    expected = probs * n
    # pool from the right until each bin is big enough, the rest of the mass goes to the last bin
    cut = len(expected)
    while cut > 1 and expected[cut - 1] < min_expected:
        cut -= 1
    obs = np.append(counts[:cut - 1], counts[cut - 1:].sum())
    exp = np.append(expected[:cut - 1], n - expected[:cut - 1].sum())
    return stats.chisquare(obs, exp).pvalue


def _interior(alpha, n, seed=11):
    return KeyedBlockSource(derive_key(seed, TREE, 0), alpha).interior(np.arange(1, n + 1))


# -- interior blocks ---------------------------------------------------------------

def test_interior_geometric_moments():
    f, fp, w = _interior(0.5, 10**6)
    assert f.mean() == pytest.approx(1.0, abs=0.01)
    assert np.mean(f == 0) == pytest.approx(0.5, abs=0.005)
    assert w.mean() == pytest.approx(0.5, abs=0.005)
    g = _interior(GOLDEN_ALPHA, 10**6)
    assert np.mean(g[0] + g[1] + 1) == pytest.approx((1 + GOLDEN_ALPHA) / (1 - GOLDEN_ALPHA), abs=0.01)


def test_interior_components_independent():
    f, fp, w = _interior(0.5, 10**5, seed=3)
    assert abs(np.corrcoef(f, fp)[0, 1]) < 0.02
    assert abs(np.corrcoef(f, w)[0, 1]) < 0.02


def test_geometric_law_chi2():
    alpha = 0.5
    f, _, _ = _interior(alpha, 10**6, seed=5)
    k = np.arange(40)
    counts = np.bincount(f, minlength=40)[:40]
    probs = (1 - alpha) * alpha**k
    assert _chi2_pvalue(counts, probs) > 0.01


def test_gap_law_chi2():
    # G = F + F' + 1 has P[G = g] = g (1-a)^2 a^(g-1)
    alpha = GOLDEN_ALPHA
    f, fp, _ = _interior(alpha, 10**6, seed=6)
    g = f + fp + 1
    support = np.arange(1, 40)
    counts = np.bincount(g, minlength=40)[1:40]
    probs = support * (1 - alpha) ** 2 * alpha ** (support - 1.0)
    assert _chi2_pvalue(counts, probs) > 0.01


def test_sample_interior_block_matches_window():
    key = derive_key(9, TREE, 0)
    w = build_window(key, 0.4, n_left=3, n_right=3)
    for n in (-3, -1, 1, 3):
        assert sample_interior_block(key, 0.4, n) == w.block(n)
    with pytest.raises(DomainError):
        sample_interior_block(key, 0.4, 0)


# -- the size-biased origin block ---------------------------------------------------

def _origins(alpha, n, seed=21):
    return [sample_origin_block(derive_key(seed, TREE, i), alpha) for i in range(n)]


def test_origin_gap_pmf_normalised():
    for alpha in (0.1, 0.5, 0.8):
        assert origin_gap_pmf(alpha, 800).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.fixture(scope="module")
def origins_half():
    return _origins(0.5, 40_000)


def test_origin_gap_law_chi2(origins_half):
    g0 = np.array([o.g0 for o in origins_half])
    assert np.mean(g0 == 1) == pytest.approx(1 / 12, abs=0.003)
    counts = np.bincount(g0, minlength=40)[1:40]
    assert _chi2_pvalue(counts, origin_gap_pmf(0.5, 39)) > 0.01


def test_origin_size_bias(origins_half):
    g0 = np.array([o.g0 for o in origins_half])
    f, fp, _ = _interior(0.5, len(g0))
    assert g0.mean() > (f + fp + 1).mean()
    # size-biased mean E[G^2]/E[G]
    alpha = 0.5
    mean_g = (1 + alpha) / (1 - alpha)
    # E[G^2] with G = F + F' + 1, F, F' iid geometric: Var(F) = a/(1-a)^2
    var_g = 2 * alpha / (1 - alpha) ** 2
    second = var_g + mean_g**2
    assert g0.mean() == pytest.approx(second / mean_g, rel=0.02)


def test_origin_conditional_uniform(origins_half):
    pairs = [(-o.h0, o.f0_prime) for o in origins_half if o.g0 == 3]
    assert len(pairs) > 1000
    counts = np.zeros((3, 3))
    for a, b in pairs:
        counts[a, b] += 1
    assert stats.chisquare(counts.ravel()).pvalue > 0.01


def test_origin_block_invariants(origins_half):
    for o in origins_half[:2000]:
        assert -o.g0 < o.h0 <= 0
        assert 0 <= o.f0_prime <= o.g0 - 1
        assert o.f0 == o.g0 - 1 - o.f0_prime
        assert o.v0 == o.h0 + o.f0_prime


def test_origin_block_rejects_inconsistent():
    with pytest.raises(DomainError):
        OriginBlock(2, 1, 0, 0)
    with pytest.raises(DomainError):
        OriginBlock(2, 0, 2, 0)


# -- windows --------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**63), alpha=st.floats(0.05, 0.95), n_left=st.integers(1, 30), n_right=st.integers(1, 30))
def test_random_windows_valid(seed, alpha, n_left, n_right):
    w = build_window(derive_key(seed, TREE, 0), alpha, n_left=n_left, n_right=n_right)
    validate_window(w)
    n, f, fp, _, h, v = w.block_arrays()
    assert np.array_equal(np.diff(h), (f + fp + 1)[:-1])
    assert np.array_equal(v, h + fp)


def test_build_window_requires_blocks():
    with pytest.raises(DomainError):
        build_window(1, 0.5, n_left=0, n_right=1)
    with pytest.raises(DomainError):
        build_window(1, None)


def test_missing_edges_at_block_starts():
    w = build_window(derive_key(4, TREE, 0), 0.5, n_left=20, n_right=20)
    n, f, fp, wn, h, v = w.block_arrays()
    starts = set(h[1:].tolist())
    for c in range(w.left_col + 1, w.right_col):
        present = [w.has_edge((r, c - 1), (r, c)) for r in (0, 1)]
        if c in starts:
            i = int(np.searchsorted(h, c))
            assert present[wn[i]] is False and present[1 - wn[i]] is True
        else:
            assert all(present)


def test_determinism():
    a = build_window(derive_key(77, TREE, 2), 0.3, n_left=50, n_right=50)
    b = build_window(derive_key(77, TREE, 2), 0.3, n_left=50, n_right=50)
    assert np.array_equal(a.bits, b.bits)
    assert a.dump() == b.dump()
    c = build_window(derive_key(78, TREE, 2), 0.3, n_left=50, n_right=50)
    assert a.dump() != c.dump()


def test_extension_is_stream_consistent():
    key = derive_key(5, TREE, 0)
    once = build_window(key, 0.5, n_left=3, n_right=3)
    twice = build_window(key, 0.5, n_left=3, n_right=3)
    extend_window(once, "right", 10)
    extend_window(extend_window(twice, "right", 5), "right", 5)
    assert once.dump() == twice.dump()
    before = once.dump()
    assert extend_window(once, "left", 0).dump() == before
    direct = build_window(key, 0.5, n_left=3, n_right=13)
    assert direct.dump() == once.dump()


def test_extension_keeps_existing_content():
    w = build_window(derive_key(6, TREE, 0), 0.5, n_left=5, n_right=5)
    bits, left = w.bits.copy(), w.left_col
    ray = ray_of(w)
    right_part = [ray(i) for i in range(0, ray.max_index)]
    extend_window(w, "left", 40)
    # the old right edge column loses its "no edge" status only on the right side
    shift = left - w.left_col
    assert np.array_equal(w.bits[shift:shift + len(bits) - 1], bits[:-1])
    ray = ray_of(w)
    assert [ray(i) for i in range(0, len(right_part))] == right_part


def test_extend_rejects_bad_side():
    w = build_window(1, 0.5)
    with pytest.raises(DomainError):
        extend_window(w, "up", 1)
    with pytest.raises(DomainError):
        extend_window(w, "left", -1)


def test_grow_quantum():
    w = build_window(2, 0.5, n_left=1, n_right=1)
    w.grow("right")
    assert w.n_right == 65
    w.grow("right")
    assert w.n_right == 65 + 128


# -- stub trees ---------------------------------------------------------------------------

def _stub(default, origin=OriginBlock(1, 0, 0, 0), overrides=None, n=10):
    return build_window(FixedBlockSource(origin, overrides, default=default), n_left=n, n_right=n)


def test_all_zero_gaps():
    w = _stub(Block(0, 0, 0))
    validate_window(w)
    n, f, fp, _, h, v = w.block_arrays()
    assert np.all(np.diff(h) == 1)
    assert np.array_equal(h, n)
    assert np.all(w.bits & BIT_RUNG)


def test_constant_w_straight_ray():
    w = _stub(Block(2, 1, 1), origin=OriginBlock(4, -1, 1, 1))
    validate_window(w)
    ray = ray_of(w)
    assert np.all(np.diff(ray.cols) == 1)
    assert np.all(ray.rows == 0)
    kinds = {t.kind for t in traps_of(w)}
    assert kinds == {"c"}
    assert all((t.k, t.l) == (2, 1) for t in traps_of(w))


def test_alternating_w_ray_crosses_every_rung():
    overrides = {n: Block(1, 1, n % 2) for n in range(-12, 13) if n}
    w = _stub(Block(1, 1, 0), origin=OriginBlock(3, 0, 1, 0), overrides=overrides)
    validate_window(w)
    ray = ray_of(w)
    steps = np.diff(ray.cols)
    assert set(steps.tolist()) <= {0, 1}
    zero_cols = ray.cols[1:][steps == 0]
    n, *_, v = w.block_arrays()
    # the block beyond the window alternates too, so every rung is crossed
    assert set(zero_cols.tolist()) == set(v.tolist())
    assert "c" not in {t.kind for t in traps_of(w)}


def test_origin_index_convention():
    # rung at column 0 on the ray: index 0 is the row the ray arrives on
    overrides = {1: Block(0, 0, 1)}
    w = _stub(Block(0, 0, 0), origin=OriginBlock(1, 0, 0, 0), overrides=overrides, n=3)
    ray = ray_of(w)
    assert ray(0) == (1, 0)
    assert ray(1) == (0, 0)
    assert ray.index_of((0, 0)) == 1
    with pytest.raises(KeyError):
        ray.index_of((5, 10**6))
    with pytest.raises(IndexError):
        ray(10**6)


# -- ray statistics ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def big_window():
    return build_window(derive_key(8, TREE, 0), 0.5, n_left=1, n_right=10**5)


def test_ray_rung_density(big_window):
    w = big_window
    n, f, fp, wn, h, v = w.block_arrays()
    # rungs per column: p = (1-a)/(1+a) = 1/3
    assert len(v) / len(w.bits) == pytest.approx(1 / 3, abs=0.01)
    ray = ray_of(w)
    rung_steps = int(np.sum(np.diff(ray.cols) == 0))
    # rungs on the ray per column: p/2
    assert rung_steps / len(w.bits) == pytest.approx(1 / 6, abs=0.01)


def test_ray_column_ratio(big_window):
    ray = ray_of(big_window)
    lo, hi = ray.origin_pos, len(ray) - 1
    ratio = (ray.cols[hi] - ray.cols[lo]) / (hi - lo)
    assert ratio == pytest.approx(2 * 1.5 / 3.5, abs=0.01)


def test_ray_structure(big_window):
    w = big_window
    ray = ray_of(w)
    steps = np.diff(ray.cols)
    assert set(np.unique(steps).tolist()) == {0, 1}
    for j in range(0, 5000):
        u = (int(ray.rows[j]), int(ray.cols[j]))
        x = (int(ray.rows[j + 1]), int(ray.cols[j + 1]))
        assert w.has_edge(u, x)
    for r, c in zip(ray.rows[:5000].tolist(), ray.cols[:5000].tolist()):
        assert w.bits[c - w.left_col] & (BIT_RAY0 << r)
    # each column has one or two ray vertices, two exactly at ray rungs
    on_ray = ((w.bits & BIT_RAY0) > 0).astype(int) + ((w.bits & BIT_RAY1) > 0).astype(int)
    assert np.all(on_ray >= 1)
    assert int(np.sum(on_ray == 2)) == int(np.sum(steps == 0))


def test_first_ray_vertex(big_window):
    w = big_window
    ray = ray_of(w)
    for c in range(0, 300):
        r, col = w.first_ray_vertex(c)
        j = ray.index_of((r, col))
        assert col == c
        assert j == 0 or ray(j - 1)[1] == c - 1
    with pytest.raises(IndexError):
        w.first_ray_vertex(w.right_col + 10)


# -- traps ------------------------------------------------------------------------------------

def test_edge_partition():
    for seed in range(10):
        w = build_window(derive_key(seed, TREE, 0), 0.6, n_left=30, n_right=30)
        ray = ray_of(w)
        lo, hi = 0, len(ray) - 1
        traps = traps_of(w)
        ray_edges = hi - lo
        assert ray_edges + sum(t.n_edges for t in traps) == len(w.edges())


def test_trap_arms_match_edges():
    w = build_window(derive_key(12, TREE, 0), 0.5, n_left=30, n_right=30)
    ray = ray_of(w)
    on_ray = set(zip(ray.rows.tolist(), ray.cols.tolist()))
    for t in traps_of(w):
        r, c = t.anchor
        assert (r, c) in on_ray
        if t.kind == "a":
            # the ray turns onto the rung here, the arm continues along the anchor row
            assert (1 - r, c) in on_ray and w.has_edge((r, c), (1 - r, c))
            assert all(w.has_edge((r, c + i), (r, c + i + 1)) for i in range(t.k))
            assert not w.has_edge((r, c + t.k), (r, c + t.k + 1))
        elif t.kind == "b":
            assert (1 - r, c) in on_ray
            assert all(w.has_edge((r, c - i), (r, c - i - 1)) for i in range(t.l))
            assert not w.has_edge((r, c - t.l), (r, c - t.l - 1))
        else:
            u = (1 - r, c)
            assert u not in on_ray and w.has_edge((r, c), u)
            assert all(w.has_edge((1 - r, c + i), (1 - r, c + i + 1)) for i in range(t.k))
            assert all(w.has_edge((1 - r, c - i), (1 - r, c - i - 1)) for i in range(t.l))


def test_trap_descriptor_edges():
    assert TrapDescriptor("a", (0, 0), k=3).n_edges == 3
    assert TrapDescriptor("b", (0, 0), l=2).n_edges == 2
    assert TrapDescriptor("c", (0, 0), k=1, l=1).n_edges == 3


def test_kind_c_arm_law_chi2():
    alpha = 0.5
    w = build_window(derive_key(13, TREE, 0), alpha, n_left=1, n_right=2 * 10**5)
    pairs = [(t.k, t.l) for t in traps_of(w) if t.kind == "c"]
    assert len(pairs) > 9 * 10**4
    m = 8
    counts = np.zeros((m, m))
    tail = 0
    for k, l in pairs:
        if k < m and l < m:
            counts[k, l] += 1
        else:
            tail += 1
    kk, ll = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    probs = (1 - alpha) ** 2 * alpha ** (kk + ll)
    obs = np.append(counts.ravel(), tail)
    exp = np.append(probs.ravel(), 1 - probs.sum()) * len(pairs)
    assert stats.chisquare(obs, exp).pvalue > 0.01


# -- dump ------------------------------------------------------------------------------------

def test_dump_format():
    w = _stub(Block(1, 0, 1), origin=OriginBlock(2, -1, 1, 0), n=2)
    lines = w.dump().splitlines()
    assert lines[0] == "O 2 -1 1 0"
    assert len(lines) == 1 + 5
    rows = [tuple(map(int, s.split())) for s in lines[1:]]
    assert [r[0] for r in rows] == [-2, -1, 0, 1, 2]
    n, h, v, f, fp, wn = rows[2]
    assert (h, v, f, fp, wn) == (-1, 0, 0, 1, 0)
    assert rows[3][1] == h + f + fp + 1
