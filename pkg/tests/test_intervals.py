import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kalpha import (
    INTERVAL,
    NOMINAL,
    DataMatrix,
    DegenerateDataError,
    PreconditionError,
    alpha_analytical,
    bootstrap_customary,
    bootstrap_improved,
    drop_units,
    hinkley_df,
    jackknife_interval,
    summarize,
    unit_sums,
)
from kalpha.intervals import JackknifeState, bootstrap_replicates, eta_to_alpha, percentile_interval


def test_golden_jackknife(kripp):
    ci, state = jackknife_interval(kripp, NOMINAL)
    assert ci.lower == pytest.approx(0.228, abs=5e-3)
    assert ci.upper == pytest.approx(0.951, abs=5e-3)
    assert state.nu == 11
    ci6, _ = jackknife_interval(drop_units(kripp, [5]), NOMINAL)
    assert ci6.lower == pytest.approx(0.370, abs=5e-3)
    assert ci6.upper == pytest.approx(0.981, abs=5e-3)


def test_jackknife_against_explicit_leave_outs(kripp):
    # oracle: rebuild each leave-one-out matrix from scratch
    ci, state = jackknife_interval(kripp, NOMINAL)
    a = kripp.a
    full = summarize(unit_sums(kripp, NOMINAL))
    eta = math.log(full.msa / full.mse)
    loo = []
    for i in range(a):
        s = summarize(unit_sums(drop_units(kripp, [i]), NOMINAL))
        loo.append(math.log(s.msa / s.mse))
    pseudo = [a * eta - (a - 1) * x for x in loo]
    assert state.eta_hat == pytest.approx(eta, rel=1e-12)
    assert np.allclose(state.leave_one_out, loo, rtol=1e-12)
    assert np.allclose(state.pseudovalues, pseudo, rtol=1e-12)
    mean = sum(pseudo) / a
    s2 = sum((p - mean) ** 2 for p in pseudo) / (a - 1)
    assert state.s2 == pytest.approx(s2, rel=1e-12)
    assert state.v_jack == pytest.approx(s2 / a, rel=1e-12)
    from scipy import stats

    half = stats.t.ppf(0.975, a - 1) * math.sqrt(s2 / a)
    n = full.n_eff
    lo = (math.exp(eta - half) - 1) / (math.exp(eta - half) + n - 1)
    hi = (math.exp(eta + half) - 1) / (math.exp(eta + half) + n - 1)
    assert ci.lower == pytest.approx(lo, rel=1e-12)
    assert ci.upper == pytest.approx(hi, rel=1e-12)
    assert ci.estimate.alpha == pytest.approx(alpha_analytical(full).alpha)


def state_from(pseudo, eta=1.0):
    pv = np.asarray(pseudo, dtype=float)
    a = len(pv)
    s2 = pv.var(ddof=1)
    return JackknifeState(eta, (a * eta - pv) / (a - 1), pv, s2, s2 / a, a - 1, 2.0)


def test_pseudovalue_arithmetic():
    a, eta, loo = 3, 1.0, np.array([0.9, 1.0, 1.1])
    pseudo = a * eta - (a - 1) * loo
    assert np.allclose(pseudo, [1.2, 1.0, 0.8], atol=1e-15)
    st_ = state_from(pseudo)
    assert st_.s2 == pytest.approx(0.04, abs=1e-15)
    assert st_.v_jack == pytest.approx(0.013333, abs=1e-6)


def test_hinkley_script():
    pv = [1.2, 1.0, 0.8, 1.0]
    a = 4
    mean = sum(pv) / a
    v = sum((p - mean) ** 2 for p in pv) / (a - 1) / a
    k = sum((p - mean) ** 4 for p in pv) / (a * (a - 1) * (a - 2) ** 2) - a * v * v / (a - 2) ** 2
    nu, fallback = hinkley_df(state_from(pv))
    assert not fallback
    assert nu == pytest.approx(2 * v * v / k, rel=1e-12)
    assert nu == pytest.approx(4.0, rel=1e-9)
    nu, fallback = hinkley_df(state_from([1.0] * 5))
    assert fallback and nu == 4
    with pytest.raises(PreconditionError):
        hinkley_df(state_from([1.0, 2.0, 3.0]))


def test_hinkley_mode(kripp):
    ci, state = jackknife_interval(kripp, NOMINAL, df_mode="hinkley")
    fixed, _ = jackknife_interval(kripp, NOMINAL)
    assert state.nu != 11 or "hinkley_fallback" in state.flags
    assert ci.estimate.alpha == fixed.estimate.alpha
    with pytest.raises(PreconditionError):
        jackknife_interval(kripp, NOMINAL, df_mode="satterthwaite")


def test_eta_transform():
    for n in (2, 3.4, 16):
        assert eta_to_alpha(0.0, n) == 0.0
        for x in (-30.0, -1.0, 0.5, 4.0):
            th = math.exp(x)
            assert eta_to_alpha(x, n) == pytest.approx((th - 1) / (th + n - 1), rel=1e-12)
        assert eta_to_alpha(800.0, n) == 1.0
        assert math.isfinite(eta_to_alpha(-800.0, n))


def test_jackknife_preconditions():
    with pytest.raises(PreconditionError, match="a >= 3"):
        jackknife_interval(DataMatrix.from_rows([[1, 2], [3, 5]]), INTERVAL)
    with pytest.raises(PreconditionError):
        jackknife_interval(DataMatrix.from_rows([[1, 2], [3, 5], [1, 1]]), INTERVAL, delta=1.5)


def test_jackknife_clamping():
    # removing the only discordant unit leaves SSE = 0
    m = DataMatrix.from_rows([[1, 1], [2, 2], [3, 4], [6, 6]])
    ci, state = jackknife_interval(m, INTERVAL)
    assert "clamped" in state.flags
    assert np.all(np.isfinite(state.pseudovalues))
    assert ci.lower <= ci.upper <= 1.0


def test_jackknife_deterministic(kripp):
    assert jackknife_interval(kripp, NOMINAL)[0] == jackknife_interval(kripp, NOMINAL)[0]


def test_customary_bootstrap_fixture(kripp):
    ci = bootstrap_customary(kripp, NOMINAL, b=2000, seed=0, cores=1)
    assert ci.lower == pytest.approx(0.459, abs=0.05)
    assert ci.upper == pytest.approx(1.0, abs=0.05)
    assert ci.upper <= 1.0


def test_bootstrap_perfect_agreement():
    m = DataMatrix.from_rows([[1, 1], [2, 2], [3, 3]])
    ci = bootstrap_customary(m, INTERVAL, b=200, seed=3, cores=1)
    assert (ci.lower, ci.upper) == (1.0, 1.0)
    ci = bootstrap_improved(m, INTERVAL, b=200, seed=3, cores=1)
    assert (ci.lower, ci.upper) == (1.0, 1.0)
    assert ci.diagnostics["discarded"] > 0  # resamples of one repeated unit have MST_c = 0


def test_bootstrap_preconditions(kripp):
    with pytest.raises(PreconditionError):
        bootstrap_customary(kripp, NOMINAL, b=0)
    with pytest.raises(PreconditionError):
        bootstrap_improved(kripp, NOMINAL, estimator="mle", b=10)
    with pytest.raises(DegenerateDataError, match="no variation"):
        bootstrap_customary(DataMatrix.from_rows([[2, 2], [2, 2]]), INTERVAL, b=10)


def test_retry_budget(monkeypatch):
    # a resample that misses the single distinct unit has MST_c = 0 (chance (8/9)^9 per draw)
    m = DataMatrix.from_rows([[1, 1]] * 8 + [[2, 2]])
    ci = bootstrap_improved(m, INTERVAL, b=40, seed=1, cores=1)
    assert ci.diagnostics["discarded"] > 0
    assert ci.diagnostics["discarded"] <= 400
    import kalpha.intervals as iv

    monkeypatch.setattr(iv, "RETRY_FACTOR", 0)
    with pytest.raises(DegenerateDataError, match="budget"):
        bootstrap_improved(m, INTERVAL, b=40, seed=1, cores=1)


def oracle_bootstrap(rows, b, seed, improved):
    """Stand-alone replicate loop with the same stream derivation."""
    key = np.random.SeedSequence([seed, zlib.crc32(b"bootstrap")]).generate_state(2, dtype=np.uint64)

    def draw(attempt, k):
        bitgen = np.random.Philox(key=key, counter=np.array([0, 0, attempt, k], dtype=np.uint64))
        return np.random.Generator(bitgen).integers(0, len(rows), size=len(rows))

    def ms(units):
        flat = [x for u in units for x in u]
        N, a = len(flat), len(units)
        mean = sum(flat) / N
        sst = sum((x - mean) ** 2 for x in flat)
        sse = sum(sum((x - sum(u) / len(u)) ** 2 for x in u) for u in units)
        return sse / (N - a), sst / (N - 1)

    mst0 = ms(rows)[1]
    out = []
    for k in range(b):
        attempt = 0
        while True:
            mse, mst = ms([rows[i] for i in draw(attempt, k)])
            if not improved:
                out.append(1 - mse / mst0)
                break
            if mst > 0:
                out.append(1 - mse / mst)
                break
            attempt += 1
    return np.array(out)


def test_bootstrap_matches_scripted_oracle():
    rng = np.random.default_rng(99)
    y = rng.normal(size=(16, 1)) * 1.5 + rng.normal(size=(16, 4))
    rows = y.tolist()
    us = unit_sums(DataMatrix.from_rows(rows), INTERVAL)
    got, _ = bootstrap_replicates(us, [("customary_boot", "customary"), ("improved_boot", "customary")],
                                  b=60, seed=17)
    assert np.allclose(got[("customary_boot", "customary")], oracle_bootstrap(rows, 60, 17, False), rtol=1e-10)
    assert np.allclose(got[("improved_boot", "customary")], oracle_bootstrap(rows, 60, 17, True), rtol=1e-10)


def test_seed_and_core_independence(kripp):
    a = bootstrap_improved(kripp, NOMINAL, b=600, seed=5, cores=1)
    b = bootstrap_improved(kripp, NOMINAL, b=600, seed=5, cores=2)
    c = bootstrap_improved(kripp, NOMINAL, b=600, seed=5, cores=1)
    assert (a.lower, a.upper) == (b.lower, b.upper) == (c.lower, c.upper)
    d = bootstrap_customary(kripp, NOMINAL, b=600, seed=5, cores=3)
    e = bootstrap_customary(kripp, NOMINAL, b=600, seed=5, cores=1)
    assert (d.lower, d.upper) == (e.lower, e.upper)
    f = bootstrap_customary(kripp, NOMINAL, b=600, seed=6, cores=1)
    assert (f.lower, f.upper) != (e.lower, e.upper)


def test_percentile_interpolation():
    v = np.arange(1.0, 11.0) / 10.0
    lo, hi = percentile_interval(v, 0.1)
    assert lo == pytest.approx(0.145, abs=1e-12)
    assert hi == pytest.approx(0.955, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.3), st.floats(0.01, 0.3), st.integers(0, 50))
def test_monotone_level(d1, d2, seed):
    d1, d2 = sorted((d1, d2))
    rng = np.random.default_rng(seed)
    m = DataMatrix.from_rows((rng.normal(size=(8, 1)) + rng.normal(size=(8, 3))).tolist())
    wide, _ = jackknife_interval(m, INTERVAL, delta=d1)
    narrow, _ = jackknife_interval(m, INTERVAL, delta=d2)
    assert wide.lower <= narrow.lower and narrow.upper <= wide.upper
    wide = bootstrap_improved(m, INTERVAL, b=200, delta=d1, seed=seed, cores=1)
    narrow = bootstrap_improved(m, INTERVAL, b=200, delta=d2, seed=seed, cores=1)
    assert wide.lower <= narrow.lower and narrow.upper <= wide.upper
