"""Point estimators of alpha from one-way ANOVA mean squares.

Six estimators are provided: the customary Krippendorff estimator, the
balanced-design MLE, the analytical (method of moments) estimator, the
unbiased-variance-ratio variant and its two bias corrections. Negative
estimates are returned as is.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .anova import AnovaSummary, MeanSquares
from .errors import DegenerateDataError, PreconditionError

KINDS = ("customary", "mle", "analytical", "variant", "bc1", "bc2")

# bc1's dilation factor blows up as gamma -> 0; below this it is flagged.
BC1_UNSTABLE_GAMMA = 0.1


@dataclass(frozen=True)
class AlphaEstimate:
    kind: str
    alpha: float
    theta: float | None = None
    gamma: float | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "theta": _json_float(self.theta),
            "gamma": self.gamma,
            "flags": sorted(self.flags),
        }


def _json_float(x):
    if x is None or math.isfinite(x):
        return x
    return "inf" if x > 0 else "-inf"


def _require_balanced(s: AnovaSummary, what: str) -> None:
    if not s.balanced:
        raise PreconditionError(f"{what} requires a balanced design")


def alpha_customary(s: AnovaSummary) -> AlphaEstimate:
    """Krippendorff's estimator, 1 - MSE/MST_c."""
    if s.mst == 0:
        raise DegenerateDataError("agreement undefined: no variation in data")
    return AlphaEstimate("customary", 1.0 - s.mse / s.mst)


def alpha_mle(s: AnovaSummary) -> AlphaEstimate:
    """Closed-form maximum likelihood estimator (balanced designs only).

    When the implied unit-effect variance (1 - 1/a) MSA - MSE is negative the
    likelihood is maximised on the boundary and 0 is returned with the
    ``boundary_mle`` flag.
    """
    if not s.balanced:
        raise PreconditionError("MLE requires balanced design: no closed form for unbalanced designs")
    if s.mst == 0:
        raise DegenerateDataError("agreement undefined: no variation in data")
    shrunk = (1.0 - 1.0 / s.a) * s.msa
    if shrunk < s.mse:
        return AlphaEstimate("mle", 0.0, flags=frozenset({"boundary_mle"}))
    n = s.n_eff
    return AlphaEstimate("mle", (shrunk - s.mse) / (shrunk + (n - 1.0) * s.mse))


def alpha_analytical(s: AnovaSummary) -> AlphaEstimate:
    """(MSA - MSE) / (MSA + (n - 1) MSE), with n* in place of n when unbalanced."""
    if s.mse == 0:
        if s.msa > 0:
            return AlphaEstimate("analytical", 1.0, theta=math.inf, flags=frozenset({"clamped"}))
        raise DegenerateDataError("agreement undefined: no variation in data")
    theta = s.msa / s.mse
    return AlphaEstimate("analytical", (theta - 1.0) / (theta + s.n_eff - 1.0), theta=theta)


def gamma_unbiased(s: AnovaSummary) -> float:
    """Unbiased estimator of the variance ratio sigma_tau^2 / sigma_eps^2."""
    _require_balanced(s, "the unbiased variance ratio")
    dof = s.N - s.a - 2
    if dof <= 0:
        raise PreconditionError(f"small-sample pathology: N - a - 2 = {dof} <= 0")
    if s.sse <= 0:
        raise DegenerateDataError("unbiased variance ratio undefined: SSE = 0")
    n = s.n_eff
    return (dof * s.ssa / s.sse - (s.a - 1)) / (n * (s.a - 1))


def alpha_variant(s: AnovaSummary) -> AlphaEstimate:
    """gamma / (1 + gamma) with the unbiased variance ratio."""
    g = gamma_unbiased(s)
    if g == -1.0:
        raise DegenerateDataError("variant estimator undefined at gamma = -1")
    return AlphaEstimate("variant", g / (1.0 + g), theta=s.n_eff * g + 1.0, gamma=g)


def var_gamma(theta_plugin: float, a: int, n: int | float) -> float:
    """Sampling variance of the unbiased variance ratio at theta = n gamma + 1."""
    N = a * n
    if N - a - 4 <= 0:
        raise PreconditionError(f"small-sample pathology: N - a - 4 = {N - a - 4} <= 0")
    lead = (N - a - 2) / (n * n * (a - 1))
    return lead * ((a + 1) / (N - a - 4) - (a - 1) / (N - a - 2)) * theta_plugin**2


def _plugin_theta(s: AnovaSummary, g: float, plugin: str) -> float:
    if plugin == "variant":
        return s.n_eff * g + 1.0
    if plugin == "analytical":
        return s.theta
    raise PreconditionError(f"unknown plug-in {plugin!r}; use 'variant' or 'analytical'")


def alpha_bc1(s: AnovaSummary, plugin: str = "variant") -> AlphaEstimate:
    """First bias correction: variant estimate times a log-scale dilation factor."""
    g = gamma_unbiased(s)
    if g <= 0:
        raise DegenerateDataError("bc1 undefined for nonpositive gamma")
    v = var_gamma(_plugin_theta(s, g, plugin), s.a, s.n_eff)
    base = g / (1.0 + g)
    try:
        alpha = base * math.exp(0.5 * (1.0 / g**2 - 1.0 / (g + 1.0) ** 2) * v)
    except OverflowError:
        raise DegenerateDataError(f"bc1 dilation factor overflows at gamma = {g:.3g}") from None
    # the dilation can push the estimate past 1; it is reported, not clipped
    flags = frozenset({"unstable"}) if g < BC1_UNSTABLE_GAMMA or alpha > 1.0 else frozenset()
    return AlphaEstimate("bc1", alpha, theta=s.n_eff * g + 1.0, gamma=g, flags=flags)


def alpha_bc2(s: AnovaSummary, plugin: str = "variant") -> AlphaEstimate:
    """Second bias correction: contracts 1 - alpha by exp{-V / (2 (gamma + 1)^2)}."""
    g = gamma_unbiased(s)
    if g <= -1:
        raise DegenerateDataError("bc2 undefined for gamma <= -1")
    v = var_gamma(_plugin_theta(s, g, plugin), s.a, s.n_eff)
    base = g / (1.0 + g)
    alpha = 1.0 - (1.0 - base) * math.exp(-v / (2.0 * (g + 1.0) ** 2))
    return AlphaEstimate("bc2", alpha, theta=s.n_eff * g + 1.0, gamma=g)


ESTIMATORS = {
    "customary": alpha_customary,
    "mle": alpha_mle,
    "analytical": alpha_analytical,
    "variant": alpha_variant,
    "bc1": alpha_bc1,
    "bc2": alpha_bc2,
}


def estimate(s: AnovaSummary, kinds: Iterable[str] = ("customary", "analytical")) -> list[AlphaEstimate]:
    out = []
    for k in kinds:
        if k not in ESTIMATORS:
            raise PreconditionError(f"unknown estimator {k!r}; choose from {list(KINDS)}")
        out.append(ESTIMATORS[k](s))
    return out


# ------------------------------------------------------------ batch forms


def batch_alpha(ms: MeanSquares, kind: str, balanced_n: int | None = None) -> np.ndarray:
    """Vectorised estimator over many datasets; undefined cases give NaN.

    ``balanced_n`` must be supplied for the balanced-only estimators. The
    formulas mirror the scalar functions above (tests check agreement).
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == "customary":
            return np.where(ms.mst > 0, 1.0 - ms.mse / ms.mst, np.nan)
        if kind == "analytical":
            theta = ms.msa / ms.mse
            out = (theta - 1.0) / (theta + ms.n_eff - 1.0)
            out = np.where((ms.mse == 0) & (ms.msa > 0), 1.0, out)
            return np.where((ms.mse == 0) & (ms.msa <= 0), np.nan, out)
        if balanced_n is None:
            raise PreconditionError(f"{kind} requires a balanced design")
        n = float(balanced_n)
        a = ms.a
        if kind == "mle":
            shrunk = (1.0 - 1.0 / a) * ms.msa
            out = (shrunk - ms.mse) / (shrunk + (n - 1.0) * ms.mse)
            out = np.where(shrunk < ms.mse, 0.0, out)
            return np.where(ms.mst > 0, out, np.nan)
        dof = ms.N - a - 2
        g = np.where((dof > 0) & (ms.sse > 0), (dof * ms.ssa / ms.sse - (a - 1)) / (n * (a - 1)), np.nan)
        base = g / (1.0 + g)
        if kind == "variant":
            return np.where(g == -1.0, np.nan, base)
        N = ms.N
        lead = np.where(N - a - 4 > 0,
                        (N - a - 2) / (n * n * (a - 1)) * ((a + 1) / (N - a - 4) - (a - 1) / (N - a - 2)),
                        np.nan)
        v = lead * (n * g + 1.0) ** 2
        if kind == "bc1":
            out = base * np.exp(0.5 * (1.0 / g**2 - 1.0 / (g + 1.0) ** 2) * v)
            return np.where((g > 0) & np.isfinite(out), out, np.nan)
        if kind == "bc2":
            out = 1.0 - (1.0 - base) * np.exp(-v / (2.0 * (g + 1.0) ** 2))
            return np.where(g > -1, out, np.nan)
    raise PreconditionError(f"unknown estimator {kind!r}")
