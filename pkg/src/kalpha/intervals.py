"""Interval estimation for alpha: two row bootstraps and the log-theta jackknife."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .anova import UnitSums, leave_one_out, mean_squares, summarize, unit_sums
from .data import DEFAULT_TABLE_CAP, DataMatrix, DistanceFunction, prune_units
from .errors import DegenerateDataError, PreconditionError
from .estimators import AlphaEstimate, alpha_analytical, alpha_customary, batch_alpha
from .rng import stream

METHODS = ("customary_boot", "improved_boot", "jackknife")
THETA_MIN, THETA_MAX = 1e-12, 1e12
RETRY_FACTOR = 10


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str
    estimate: AlphaEstimate | None = None
    diagnostics: dict = field(default_factory=dict)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def as_dict(self) -> dict:
        d = self.diagnostics
        return {
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "method": self.method,
            "df": d.get("df"),
            "discarded": d.get("discarded", 0),
            "replicates": d.get("replicates"),
            "v_jack": d.get("v_jack"),
            "flags": sorted(d.get("flags", ())),
        }


@dataclass(frozen=True)
class JackknifeState:
    eta_hat: float
    leave_one_out: np.ndarray
    pseudovalues: np.ndarray
    s2: float
    v_jack: float
    nu: float
    n_eff: float
    flags: frozenset[str] = frozenset()


def _check_level(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise PreconditionError(f"delta must lie in (0, 1), got {delta}")


def _prepared_sums(m: DataMatrix, f: DistanceFunction, cap: int) -> UnitSums:
    return unit_sums(prune_units(m, min_scores=1), f, cap=cap)


def eta_to_alpha(x, n_eff):
    """Map eta = log(theta) to alpha = (theta - 1) / (theta + n - 1) without overflow."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    with np.errstate(invalid="ignore"):
        out = np.where(x > 0, (1.0 - e) / (1.0 + (n_eff - 1.0) * e), (e - 1.0) / (e + n_eff - 1.0))
    return float(out) if out.ndim == 0 else out


def _clamped_log_theta(msa, mse):
    """log(MSA/MSE) with theta clamped to [THETA_MIN, THETA_MAX]; returns (eta, clamped)."""
    msa = np.asarray(msa, dtype=float)
    mse = np.asarray(mse, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(mse > 0, msa / mse, np.where(msa > 0, np.inf, np.nan))
    clamped = (theta < THETA_MIN) | (theta > THETA_MAX)
    theta = np.clip(theta, THETA_MIN, THETA_MAX)
    return np.log(theta), clamped


# --------------------------------------------------------------- jackknife


def jackknife_arrays(us: UnitSums, delta: float = 0.05, pooling: str = "pairable") -> dict:
    """Vectorised jackknife over leading batch dimensions of ``us``.

    Returns a dict of arrays: eta, loo, pseudo (NaN for absent units),
    v_jack, a, n_eff, lower, upper (with a - 1 degrees of freedom) and
    ``valid``. Units with no scores are excluded from the leave-one-out set.
    """
    full = mean_squares(us, pooling=pooling)
    eta, clamp_full = _clamped_log_theta(full.msa, full.mse)
    loo = leave_one_out(us, pooling=pooling)
    eta_loo, clamp_loo = _clamped_log_theta(loo.msa, loo.mse)
    present = us.n > 0
    a = present.sum(axis=-1).astype(float)
    eta_loo = np.where(present, eta_loo, np.nan)
    pseudo = a[..., None] * eta[..., None] - (a[..., None] - 1.0) * eta_loo
    mean = np.nansum(pseudo, axis=-1) / a
    dev = np.where(present, pseudo - mean[..., None], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        s2 = (dev * dev).sum(axis=-1) / (a - 1.0)
        v_jack = s2 / a
        loo_ok = np.all(np.where(present, np.isfinite(eta_loo), True), axis=-1)
        valid = (a >= 3) & np.isfinite(eta) & loo_ok & np.isfinite(full.n_eff)
        t = stats.t.ppf(1.0 - delta / 2.0, np.where(valid, a - 1.0, 1.0))
        half = t * np.sqrt(v_jack)
    lower = np.where(valid, eta_to_alpha(eta - half, full.n_eff), np.nan)
    upper = np.where(valid, eta_to_alpha(eta + half, full.n_eff), np.nan)
    return {
        "eta": eta, "loo": eta_loo, "pseudo": pseudo, "s2": s2, "v_jack": v_jack, "a": a,
        "n_eff": full.n_eff, "lower": lower, "upper": upper, "valid": valid,
        "clamped": clamp_full | np.any(np.where(present, clamp_loo, False), axis=-1),
    }


def hinkley_df(state: JackknifeState) -> tuple[float, bool]:
    """Double-jackknife degrees of freedom 2 V_jack^2 / K.

    Returns ``(nu, fallback)``; when K <= 0 the estimate is unusable and a - 1
    is returned with ``fallback=True``. The result is clamped to at least 1.
    """
    pv = np.asarray(state.pseudovalues, dtype=float)
    a = len(pv)
    if a < 4:
        raise PreconditionError("Hinkley degrees of freedom require a >= 4")
    dev = pv - pv.mean()
    v = state.v_jack
    k = math.fsum(dev**4) / (a * (a - 1) * (a - 2) ** 2) - a * v * v / (a - 2) ** 2
    if not k > 0:
        return float(a - 1), True
    return max(1.0, 2.0 * v * v / k), False


def jackknife_from_sums(us: UnitSums, delta: float = 0.05, df_mode: str = "fixed_a_minus_1",
                        pooling: str = "pairable") -> tuple[ConfidenceInterval, JackknifeState]:
    _check_level(delta)
    if df_mode not in ("fixed_a_minus_1", "hinkley"):
        raise PreconditionError(f"unknown df_mode {df_mode!r}")
    present = us.n > 0
    a = int(present.sum())
    if a < 3:
        raise PreconditionError(f"jackknife requires a >= 3 units, found {a}")
    s = summarize(us, pooling=pooling)
    est = alpha_analytical(s)
    r = jackknife_arrays(us, delta, pooling)
    loo = r["loo"][present]
    if not np.all(np.isfinite(loo)):
        bad = [i for i, ok in zip(np.flatnonzero(present), np.isfinite(loo)) if not ok]
        raise DegenerateDataError(f"leave-one-out statistic undefined when removing unit(s) {bad}")
    flags = {"clamped"} if bool(r["clamped"]) else set()
    pseudo = r["pseudo"][present]
    state = JackknifeState(
        eta_hat=float(r["eta"]), leave_one_out=loo, pseudovalues=pseudo, s2=float(r["s2"]),
        v_jack=float(r["v_jack"]), nu=float(a - 1), n_eff=float(r["n_eff"]), flags=frozenset(flags),
    )
    if df_mode == "hinkley":
        nu, fallback = hinkley_df(state)
        if fallback:
            flags.add("hinkley_fallback")
        state = JackknifeState(**{**state.__dict__, "nu": nu, "flags": frozenset(flags)})
        half = stats.t.ppf(1.0 - delta / 2.0, nu) * math.sqrt(state.v_jack)
        lower = eta_to_alpha(state.eta_hat - half, state.n_eff)
        upper = eta_to_alpha(state.eta_hat + half, state.n_eff)
    else:
        lower, upper = float(r["lower"]), float(r["upper"])
    ci = ConfidenceInterval(
        lower=float(lower), upper=float(upper), level=1.0 - delta, method="jackknife", estimate=est,
        diagnostics={"df": state.nu, "v_jack": state.v_jack, "discarded": 0, "flags": frozenset(flags)},
    )
    return ci, state


def jackknife_interval(m: DataMatrix, f: DistanceFunction, delta: float = 0.05,
                       df_mode: str = "fixed_a_minus_1", pooling: str = "pairable",
                       cap: int = DEFAULT_TABLE_CAP) -> tuple[ConfidenceInterval, JackknifeState]:
    """Jackknife t-interval for log(MSA/MSE), mapped back to the alpha scale.

    Each unit is left out in turn; the leave-one-out statistics come from the
    unit-aggregated distance table, so no distances are recomputed. The
    back-transform uses the full-sample effective number of coders.
    """
    return jackknife_from_sums(_prepared_sums(m, f, cap), delta, df_mode, pooling)


# --------------------------------------------------------------- bootstrap


def draw_counts(seed: int, a: int, ks, attempt: int = 0) -> np.ndarray:
    """Row-resampling frequencies for bootstrap replicates ``ks`` (one stream each)."""
    out = np.empty((len(ks), a), dtype=np.int64)
    for row, k in enumerate(ks):
        idx = stream(seed, "bootstrap", attempt, int(k)).integers(0, a, size=a)
        out[row] = np.bincount(idx, minlength=a)
    return out


def _draw_counts_parallel(seed: int, a: int, ks: np.ndarray, attempt: int, cores: int) -> np.ndarray:
    if cores <= 1 or len(ks) < 256:
        return draw_counts(seed, a, ks, attempt)
    chunks = np.array_split(ks, cores)
    with ProcessPoolExecutor(max_workers=cores) as pool:
        parts = list(pool.map(draw_counts, [seed] * cores, [a] * cores, chunks, [attempt] * cores))
    return np.concatenate(parts, axis=0)


def _replicate_stats(us: UnitSums, counts: np.ndarray, method: str, estimator: str,
                     mst_fixed: float, pooling: str) -> np.ndarray:
    ms = mean_squares(us, counts, pooling=pooling)
    if method == "customary_boot":
        with np.errstate(invalid="ignore", divide="ignore"):
            return 1.0 - ms.mse / mst_fixed
    valid = np.isfinite(ms.mst) & (ms.mst > 0)
    return np.where(valid, batch_alpha(ms, estimator), np.nan)


def bootstrap_replicates(us: UnitSums, methods, b: int, seed: int, pooling: str = "pairable",
                         cores: int = 1) -> tuple[dict, dict]:
    """Bootstrap statistics for several (method, estimator) pairs sharing one set of draws.

    Replicate ``k`` on attempt ``r`` always uses stream (seed, r, k), so each
    method's output equals what a separate call with the same seed gives.
    Degenerate replicates are redrawn, up to ``RETRY_FACTOR * b`` redraws per
    method. Returns (values, discarded) keyed by (method, estimator).
    """
    a = us.a
    full = mean_squares(us, pooling=pooling)
    mst_fixed = float(full.mst)
    ks = np.arange(b)
    counts = _draw_counts_parallel(seed, a, ks, 0, cores)
    values, discarded = {}, {}
    for method, estimator in methods:
        vals = _replicate_stats(us, counts, method, estimator, mst_fixed, pooling)
        bad = np.flatnonzero(~np.isfinite(vals))
        redraws, attempt = 0, 0
        while len(bad):
            attempt += 1
            redraws += len(bad)
            if redraws > RETRY_FACTOR * b:
                raise DegenerateDataError("bootstrap retry budget exhausted: resamples are degenerate")
            c2 = _draw_counts_parallel(seed, a, bad, attempt, cores)
            vals[bad] = _replicate_stats(us, c2, method, estimator, mst_fixed, pooling)
            bad = bad[~np.isfinite(vals[bad])]
        values[(method, estimator)] = vals
        discarded[(method, estimator)] = redraws
    return values, discarded


def percentile_interval(values: np.ndarray, delta: float) -> tuple[float, float]:
    """Linear-interpolation order-statistic percentiles at delta/2 and 1 - delta/2."""
    lo, hi = np.quantile(values, [delta / 2.0, 1.0 - delta / 2.0])
    return float(min(lo, 1.0)), float(min(hi, 1.0))


def bootstrap_from_sums(us: UnitSums, method: str, estimator: str = "customary", b: int = 2000,
                        delta: float = 0.05, seed: int = 0, pooling: str = "pairable",
                        cores: int = 1) -> ConfidenceInterval:
    if method not in ("customary_boot", "improved_boot"):
        raise PreconditionError(f"unknown bootstrap method {method!r}")
    if method == "customary_boot" and estimator != "customary":
        raise PreconditionError("the customary bootstrap applies to the customary estimator only")
    if estimator not in ("customary", "analytical"):
        raise PreconditionError(f"bootstrap estimator must be customary or analytical, not {estimator!r}")
    if b < 1:
        raise PreconditionError("bootstrap size b must be >= 1")
    _check_level(delta)
    s = summarize(us, pooling=pooling)
    if s.mst == 0:
        raise DegenerateDataError("agreement undefined: no variation in data")
    est = alpha_customary(s) if estimator == "customary" else alpha_analytical(s)
    values, discarded = bootstrap_replicates(us, [(method, estimator)], b, seed, pooling, cores)
    lo, hi = percentile_interval(values[(method, estimator)], delta)
    return ConfidenceInterval(
        lower=lo, upper=hi, level=1.0 - delta, method=method, estimate=est,
        diagnostics={"replicates": b, "discarded": discarded[(method, estimator)], "df": None},
    )


def bootstrap_customary(m: DataMatrix, f: DistanceFunction, b: int = 2000, delta: float = 0.05,
                        seed: int = 0, pooling: str = "pairable", cores: int | None = None,
                        cap: int = DEFAULT_TABLE_CAP) -> ConfidenceInterval:
    """Percentile interval from row resampling with MST_c held at its observed value."""
    return bootstrap_from_sums(_prepared_sums(m, f, cap), "customary_boot", "customary", b, delta,
                               seed, pooling, _cores(cores))


def bootstrap_improved(m: DataMatrix, f: DistanceFunction, estimator: str = "customary", b: int = 2000,
                       delta: float = 0.05, seed: int = 0, pooling: str = "pairable",
                       cores: int | None = None, cap: int = DEFAULT_TABLE_CAP) -> ConfidenceInterval:
    """Percentile interval from row resampling with every mean square recomputed."""
    return bootstrap_from_sums(_prepared_sums(m, f, cap), "improved_boot", estimator, b, delta,
                               seed, pooling, _cores(cores))


def _cores(cores: int | None) -> int:
    if cores is None:
        env = os.environ.get("KALPHA_CORES")
        cores = int(env) if env else 1
    if cores < 1:
        raise PreconditionError("cores must be >= 1")
    return cores
