import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kalpha import (
    INTERVAL,
    NOMINAL,
    DataMatrix,
    PreconditionError,
    build_distance_table,
    classical_sums,
    n_star,
    nonparametric_sums,
    summarize,
    unit_sums,
)
from kalpha.anova import categorical_unit_sums, leave_one_out, mean_squares, numeric_unit_sums


def brute(units, d, pooling="pairable"):
    """Textbook double loops over observed scores."""
    units = [u for u in units if len(u)]
    flat = [x for u in units for x in u]
    N, a = len(flat), len(units)
    sst = sum(d(x, y) for x in flat for y in flat) / (2 * N)
    within = [sum(d(x, y) for x in u for y in u) / (2 * len(u)) for u in units]
    sse = sum(within)
    if pooling == "classical":
        mse = sse / (N - a)
    else:
        pair = [(len(u), w / (len(u) - 1)) for u, w in zip(units, within) if len(u) >= 2]
        mse = sum(n * v for n, v in pair) / sum(n for n, _ in pair)
    mst = sst / (N - 1)
    msa = ((N - 1) * mst - (N - a) * mse) / (a - 1)
    return dict(sse=sse, ssa=sst - sse, sst=sst, mse=mse, msa=msa, mst=mst, N=N, a=a)


def sq(x, y):
    return (x - y) ** 2


def test_hand_example():
    m = DataMatrix.from_rows([[1, 2], [3, 4]])
    s = classical_sums(m)
    assert (s.sse, s.ssa, s.sst) == (1.0, 4.0, 5.0)
    assert (s.mse, s.msa) == (0.5, 4.0)
    assert s.mst == pytest.approx(5 / 3)
    assert s.n_eff == 2.0
    t = nonparametric_sums(m, build_distance_table(m, INTERVAL))
    assert (t.sse, t.ssa, t.sst) == pytest.approx((1.0, 4.0, 5.0), rel=1e-14)


def test_n_star():
    assert n_star([2, 2, 2]) == 2.0
    assert n_star([2, 3]) == pytest.approx((5 - 13 / 5) / 1)
    assert n_star([3, 4, 4, 4, 4, 4, 4, 4, 4, 3, 2, 1]) == pytest.approx((41 - 151 / 41) / 11)


def test_fixture_against_double_loop(kripp):
    s = summarize(unit_sums(kripp, NOMINAL))
    o = brute(kripp.units, lambda x, y: float(x != y))
    for k in ("sse", "ssa", "sst", "mse", "msa", "mst"):
        assert getattr(s, k) == pytest.approx(o[k], rel=1e-12), k
    assert 1 - s.mse / s.mst == pytest.approx(0.742947, abs=1e-6)


def test_degenerate_designs():
    with pytest.raises(PreconditionError):
        summarize(unit_sums(DataMatrix.from_rows([[1, 2]]), INTERVAL))
    with pytest.raises(PreconditionError, match="N = a"):
        summarize(unit_sums(DataMatrix.from_rows([[1, None], [2, None]]), INTERVAL))


def test_streaming_path_matches_table():
    rng = np.random.default_rng(3)
    m = DataMatrix.from_rows(rng.normal(size=(30, 4)).round(3).tolist())
    small = unit_sums(m, INTERVAL, cap=10)
    big = unit_sums(m, INTERVAL)
    assert np.array_equal(small.n, big.n)
    assert np.allclose(small.cross, big.cross, rtol=1e-12)


def test_batched_forms_match_generic():
    rng = np.random.default_rng(5)
    y = rng.normal(size=(3, 6, 4))
    mask = rng.random((3, 6, 4)) > 0.2
    mask[..., :2] = True
    us = numeric_unit_sums(y, mask)
    for b in range(3):
        m = DataMatrix.from_rows([[v if k else None for v, k in zip(r, mr)] for r, mr in zip(y[b], mask[b])])
        ref = unit_sums(m, INTERVAL)
        assert np.allclose(us.cross[b], ref.cross, rtol=1e-10, atol=1e-12)
    codes = rng.integers(0, 3, size=(2, 5, 3))
    cs = categorical_unit_sums(codes, None, 3)
    for b in range(2):
        ref = unit_sums(DataMatrix.from_rows(codes[b].tolist()), NOMINAL)
        assert np.array_equal(cs.cross[b], ref.cross)


def test_resampled_counts_equal_replicated_matrix():
    rng = np.random.default_rng(11)
    rows = [[1, 2, 4], [2, 2, None], [5, 1, 3], [0, None, None]]
    m = DataMatrix.from_rows(rows)
    us = unit_sums(m, INTERVAL)
    for _ in range(5):
        c = rng.multinomial(4, [0.25] * 4)
        ms = mean_squares(us, c)
        rep = [u for u, k in zip(m.units, c) for _ in range(k)]
        if sum(len(u) for u in rep) <= sum(1 for u in rep if u):
            continue
        o = brute(rep, sq)
        assert float(ms.mse) == pytest.approx(o["mse"], rel=1e-12)
        assert float(ms.mst) == pytest.approx(o["mst"], rel=1e-12)


def test_leave_one_out_matches_recomputation():
    rows = [[1, 2, 4], [2, 2, 3], [5, 1, 3], [0, 4, None], [3, 3, 3]]
    m = DataMatrix.from_rows(rows)
    loo = leave_one_out(unit_sums(m, INTERVAL))
    for i in range(m.a):
        o = brute([u for k, u in enumerate(m.units) if k != i], sq)
        assert loo.msa[i] == pytest.approx(o["msa"], rel=1e-12)
        assert loo.mse[i] == pytest.approx(o["mse"], rel=1e-12)


def test_pooling_agrees_when_balanced():
    m = DataMatrix.from_rows([[1, 2, 3], [2, 2, 5], [0, 1, 1]])
    us = unit_sums(m, INTERVAL)
    p, c = summarize(us, "pairable"), summarize(us, "classical")
    assert p.mse == pytest.approx(c.mse, rel=1e-14)
    assert p.msa == pytest.approx(c.msa, rel=1e-14)


values = st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 6))


@st.composite
def ragged(draw, min_units=2):
    a = draw(st.integers(min_units, 7))
    k = draw(st.integers(2, 5))
    rows = [[draw(st.one_of(values, st.none())) for _ in range(k)] for _ in range(a)]
    for r in rows:
        r[0] = draw(values)
        r[1] = draw(values)
    return rows


@settings(max_examples=150, deadline=None)
@given(ragged(), st.sampled_from(["pairable", "classical"]))
def test_partition_and_equivalence(rows, pooling):
    m = DataMatrix.from_rows(rows)
    c = classical_sums(m, pooling)
    npar = nonparametric_sums(m, build_distance_table(m, INTERVAL), pooling)
    scale = max(c.sst, 1e-300)
    assert abs(c.sst - (c.ssa + c.sse)) <= 1e-10 * scale
    for k in ("sse", "ssa", "sst"):
        assert abs(getattr(c, k) - getattr(npar, k)) <= 1e-10 * scale, k
    for k in ("mse", "msa", "mst"):
        ref = max(abs(getattr(c, k)), c.mst, 1e-300)
        assert abs(getattr(c, k) - getattr(npar, k)) <= 1e-10 * ref, k
    o = brute(m.units, sq, pooling)
    assert math.isclose(npar.mse, o["mse"], rel_tol=1e-9, abs_tol=1e-9 * scale)
    assert npar.n_eff == pytest.approx(n_star(m), rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(ragged(), st.randoms(use_true_random=False))
def test_row_order_invariance(rows, rnd):
    m = DataMatrix.from_rows(rows)
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    shuffled = [rnd.sample(r, len(r)) for r in shuffled]
    s1 = summarize(unit_sums(m, INTERVAL))
    s2 = summarize(unit_sums(DataMatrix.from_rows(shuffled), INTERVAL))
    assert s1.mse == pytest.approx(s2.mse, rel=1e-9, abs=1e-12)
    assert s1.mst == pytest.approx(s2.mst, rel=1e-9, abs=1e-12)
