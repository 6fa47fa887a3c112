"""Synthetic data generators and the Monte Carlo bias / MSE / coverage engine."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .anova import UnitSums, categorical_unit_sums, mean_squares, numeric_unit_sums
from .data import DataMatrix
from .errors import PreconditionError
from .estimators import KINDS, batch_alpha
from .intervals import bootstrap_replicates, jackknife_arrays, percentile_interval
from .rng import derive_seed, stream

ALPHA_MAX = 1.0 - 1e-9
T_DF = 4
GENERATORS = ("gaussian", "student_t_df4", "copula")
INTERVAL_METHODS = {
    "jackknife": None,
    "customary_boot": ("customary_boot", "customary"),
    "improved_boot": ("improved_boot", "customary"),
    "improved_boot_analytical": ("improved_boot", "analytical"),
}
BALANCED_ONLY = {"mle", "variant", "bc1", "bc2"}
CHUNK = 2000


@dataclass(frozen=True)
class AnovaSimConfig:
    a: int
    n: int
    alpha: float
    mu: float = 0.0
    sigma2_eps: float = 1.0
    unit_effect_family: str = "gaussian"
    missing_rate: float = 0.0

    def __post_init__(self):
        if self.a < 1 or self.n < 1:
            raise PreconditionError("a and n must be positive")
        if not 0.0 <= self.alpha <= ALPHA_MAX:
            raise PreconditionError(f"alpha must lie in [0, 1 - 1e-9], got {self.alpha}")
        if self.sigma2_eps <= 0:
            raise PreconditionError("sigma2_eps must be positive")
        if self.unit_effect_family not in ("gaussian", "student_t_df4"):
            raise PreconditionError(f"unknown unit effect family {self.unit_effect_family!r}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise PreconditionError("missing_rate must lie in [0, 1)")

    @property
    def sigma2_tau(self) -> float:
        return self.alpha / (1.0 - self.alpha) * self.sigma2_eps


@dataclass(frozen=True)
class CopulaSimConfig:
    a: int
    n: int
    alpha: float
    pi: tuple[float, ...] = (0.5, 0.2, 0.3)

    def __post_init__(self):
        if self.a < 1 or self.n < 1:
            raise PreconditionError("a and n must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise PreconditionError(f"copula correlation must lie in [0, 1), got {self.alpha}")
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or len(pi) < 2 or np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise PreconditionError("pi must be a probability vector with positive entries")


def draw_anova(c: AnovaSimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One dataset from the one-way random effects model; returns (values, observed mask)."""
    if c.unit_effect_family == "gaussian":
        tau = rng.standard_normal(c.a) * math.sqrt(c.sigma2_tau)
    else:
        tau = rng.standard_t(T_DF, c.a) * math.sqrt(c.sigma2_tau * (T_DF - 2) / T_DF)
    eps = rng.standard_normal((c.a, c.n)) * math.sqrt(c.sigma2_eps)
    y = c.mu + tau[:, None] + eps
    if c.missing_rate > 0:
        mask = rng.random((c.a, c.n)) >= c.missing_rate
    else:
        mask = np.ones((c.a, c.n), dtype=bool)
    return y, mask


def categorical_quantile(u, pi) -> np.ndarray:
    """Categorical quantile function: smallest k (1-based) with cumulative pi_k >= u."""
    cum = np.cumsum(np.asarray(pi, dtype=float))
    k = np.searchsorted(cum, np.asarray(u), side="left")
    return np.minimum(k, len(cum) - 1) + 1


def draw_copula(c: CopulaSimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One categorical dataset from the compound-symmetry Gaussian copula.

    Latent Z_ij = sqrt(alpha) W_i + sqrt(1 - alpha) e_ij has unit variance and
    within-unit correlation alpha. Returns (categories 1..p, latent Z).
    """
    w = rng.standard_normal(c.a)
    e = rng.standard_normal((c.a, c.n))
    z = math.sqrt(c.alpha) * w[:, None] + math.sqrt(1.0 - c.alpha) * e
    return categorical_quantile(ndtr(z), c.pi), z


def _to_matrix(values: np.ndarray, mask: np.ndarray) -> DataMatrix:
    return DataMatrix(
        units=tuple(tuple(float(v) for v in row[m]) for row, m in zip(values, mask)),
        columns=tuple(tuple(int(j) for j in np.flatnonzero(m)) for m in mask),
    )


def simulate_anova(c: AnovaSimConfig, seed: int, replicate: int = 0, cell: int = 0) -> DataMatrix:
    """Dataset ``replicate`` of experiment cell ``cell`` (same stream the engine uses)."""
    y, mask = draw_anova(c, stream(seed, "simulate", cell, replicate))
    return _to_matrix(y, mask)


def simulate_copula_categorical(c: CopulaSimConfig, seed: int, replicate: int = 0, cell: int = 0) -> DataMatrix:
    codes, _ = draw_copula(c, stream(seed, "simulate", cell, replicate))
    return _to_matrix(codes.astype(float), np.ones(codes.shape, dtype=bool))


# ------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentSpec:
    designs: tuple[tuple[int, int], ...]
    alphas: tuple[float, ...]
    replicates: int
    estimators: tuple[str, ...] = ("customary", "analytical")
    intervals: tuple[str, ...] = ()
    level: float = 0.95
    seed: int = 0
    generator: str = "gaussian"
    missing_rate: float = 0.0
    pi: tuple[float, ...] = (0.5, 0.2, 0.3)
    bootstrap_b: int = 2000

    def __post_init__(self):
        if self.replicates < 1:
            raise PreconditionError("replicates must be >= 1")
        if not self.designs:
            raise PreconditionError("at least one design is required")
        for d in self.designs:
            if len(d) != 2 or min(d) < 2:
                raise PreconditionError(f"design {d} must be (a, n) with a, n >= 2")
        if not self.alphas:
            raise PreconditionError("at least one alpha is required")
        for k in self.estimators:
            if k not in KINDS:
                raise PreconditionError(f"unknown estimator {k!r}")
        for m in self.intervals:
            if m not in INTERVAL_METHODS:
                raise PreconditionError(f"unknown interval method {m!r}; choose from {sorted(INTERVAL_METHODS)}")
        if not 0.0 < self.level < 1.0:
            raise PreconditionError("level must lie in (0, 1)")
        if self.generator not in GENERATORS:
            raise PreconditionError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.generator == "copula" and self.missing_rate:
            raise PreconditionError("missingness is only supported for the ANOVA generators")
        if self.bootstrap_b < 1:
            raise PreconditionError("bootstrap_b must be >= 1")
        for alpha in self.alphas:
            self.config(self.designs[0], alpha)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        """Parse the JSON experiment schema (see README)."""
        if not isinstance(d, dict):
            raise PreconditionError("experiment spec must be a JSON object")
        known = {f for f in cls.__dataclass_fields__} | {"alpha_grid"}
        unknown = set(d) - known
        if unknown:
            raise PreconditionError(f"unknown spec field(s): {sorted(unknown)}")
        d = dict(d)
        grid = d.pop("alpha_grid", None)
        if grid is not None:
            if "alphas" in d:
                raise PreconditionError("give either alphas or alpha_grid, not both")
            try:
                start, stop, step = float(grid["start"]), float(grid["stop"]), float(grid["step"])
            except (KeyError, TypeError, ValueError):
                raise PreconditionError("alpha_grid needs numeric start, stop and step") from None
            if step <= 0:
                raise PreconditionError("alpha_grid step must be positive")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            d["alphas"] = [round(start + i * step, 12) for i in range(count)]
        for key in ("designs", "alphas", "replicates"):
            if key not in d:
                raise PreconditionError(f"missing required spec field {key!r}")
        try:
            d["designs"] = tuple(tuple(int(x) for x in des) for des in d["designs"])
            d["alphas"] = tuple(float(x) for x in d["alphas"])
            for key in ("estimators", "intervals", "pi"):
                if key in d:
                    d[key] = tuple(d[key])
            if "replicates" in d:
                d["replicates"] = int(d["replicates"])
        except (TypeError, ValueError) as exc:
            raise PreconditionError(f"malformed spec: {exc}") from None
        return cls(**d)

    @property
    def cells(self) -> list[tuple[tuple[int, int], float]]:
        return [(des, alpha) for des in self.designs for alpha in self.alphas]

    def config(self, design: tuple[int, int], alpha: float):
        a, n = design
        if self.generator == "copula":
            return CopulaSimConfig(a, n, alpha, tuple(self.pi))
        return AnovaSimConfig(a, n, alpha, unit_effect_family=self.generator, missing_rate=self.missing_rate)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("design", "a", "n", "generator", "alpha", "method", "kind", "replicates", "valid",
               "mean_estimate", "bias", "percent_bias", "mse", "coverage", "mean_width",
               "mean_lower", "mean_upper", "skipped")

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def to_json(self) -> str:
        spec = asdict(self.spec)
        return json.dumps({"spec": spec, "rows": self.rows}, indent=2, allow_nan=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: ("" if r[k] is None else r[k]) for k in self.COLUMNS})
        return buf.getvalue()


def _draw_batch(spec: ExperimentSpec, cell: int, cfg, reps: range) -> UnitSums:
    if spec.generator == "copula":
        codes = np.stack([draw_copula(cfg, stream(spec.seed, "simulate", cell, r))[0] for r in reps])
        return categorical_unit_sums(codes - 1, None, len(cfg.pi))
    ys, masks = zip(*(draw_anova(cfg, stream(spec.seed, "simulate", cell, r)) for r in reps))
    mask = np.stack(masks)
    return numeric_unit_sums(np.stack(ys), None if spec.missing_rate == 0 else mask)


def _run_chunk(spec: ExperimentSpec, cell: int, start: int, stop: int) -> dict:
    """Per-replicate outputs for replicates [start, stop) of one cell."""
    design, alpha = spec.cells[cell]
    cfg = spec.config(design, alpha)
    us = _draw_batch(spec, cell, cfg, range(start, stop))
    ms = mean_squares(us)
    balanced_n = design[1] if spec.missing_rate == 0 else None
    out = {}
    for kind in spec.estimators:
        if kind in BALANCED_ONLY and balanced_n is None:
            continue
        out[kind] = batch_alpha(ms, kind, balanced_n)
    delta = 1.0 - spec.level
    if "jackknife" in spec.intervals:
        jk = jackknife_arrays(us, delta)
        out["jackknife"] = np.stack([jk["lower"], jk["upper"]], axis=-1)
    boots = [m for m in spec.intervals if INTERVAL_METHODS[m] is not None]
    if boots:
        pairs = [INTERVAL_METHODS[m] for m in boots]
        res = {m: np.full((stop - start, 2), np.nan) for m in boots}
        for i, r in enumerate(range(start, stop)):
            one = UnitSums(us.n[i], us.cross[i])
            if not np.isfinite(ms.mst[i]) or ms.mst[i] == 0:
                continue
            try:
                vals, _ = bootstrap_replicates(one, pairs, spec.bootstrap_b,
                                               derive_seed(spec.seed, "simulate-boot", cell, r))
            except PreconditionError:
                continue
            for m, p in zip(boots, pairs):
                res[m][i] = percentile_interval(vals[p], delta)
        out.update(res)
    return out


def _finite_or_none(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _summarise_cell(spec: ExperimentSpec, cell: int, per: dict) -> list[dict]:
    (a, n), alpha = spec.cells[cell]
    base = {"design": f"{a}x{n}", "a": a, "n": n, "generator": spec.generator, "alpha": alpha,
            "replicates": spec.replicates}
    rows = []
    for kind in spec.estimators:
        row = dict.fromkeys(ExperimentResult.COLUMNS, None) | base | {"method": kind, "kind": "estimator"}
        if kind not in per:
            row["skipped"] = "requires balanced design"
            row["valid"] = 0
            rows.append(row)
            continue
        est = per[kind]
        ok = np.isfinite(est)
        e = est[ok]
        row["valid"] = int(ok.sum())
        row["skipped"] = ""
        if len(e):
            mean = math.fsum(e) / len(e)
            row["mean_estimate"] = mean
            row["bias"] = mean - alpha
            row["percent_bias"] = 100.0 * (mean - alpha) / alpha if alpha != 0 else None
            row["mse"] = math.fsum((e - alpha) ** 2) / len(e)
        rows.append(row)
    for method in spec.intervals:
        row = dict.fromkeys(ExperimentResult.COLUMNS, None) | base | {"method": method, "kind": "interval"}
        ci = per[method]
        ok = np.all(np.isfinite(ci), axis=1)
        lo, hi = ci[ok, 0], ci[ok, 1]
        row["valid"] = int(ok.sum())
        row["skipped"] = ""
        if len(lo):
            row["coverage"] = float(np.count_nonzero((lo <= alpha) & (alpha <= hi))) / len(lo)
            row["mean_width"] = math.fsum(hi - lo) / len(lo)
            row["mean_lower"] = math.fsum(lo) / len(lo)
            row["mean_upper"] = math.fsum(hi) / len(hi)
        rows.append(row)
    for row in rows:
        for k in ("mean_estimate", "bias", "percent_bias", "mse", "coverage", "mean_width",
                  "mean_lower", "mean_upper"):
            if row[k] is not None:
                row[k] = _finite_or_none(row[k])
    return rows


def run_experiment(spec: ExperimentSpec, cores: int = 1,
                   progress: Callable[[int, int], None] | None = None) -> ExperimentResult:
    """Simulate every (design, alpha) cell and aggregate the requested statistics.

    Work is split into fixed chunks of replicates; each replicate draws from
    its own (seed, cell, replicate) stream and chunk outputs are gathered in
    order, so results do not depend on ``cores``.
    """
    if cores < 1:
        raise PreconditionError("cores must be >= 1")
    jobs = [(cell, s, min(s + CHUNK, spec.replicates))
            for cell in range(len(spec.cells)) for s in range(0, spec.replicates, CHUNK)]
    outputs = [None] * len(jobs)
    if cores == 1:
        for j, job in enumerate(jobs):
            outputs[j] = _run_chunk(spec, *job)
            if progress:
                progress(j + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=cores) as pool:
            futures = [pool.submit(_run_chunk, spec, *job) for job in jobs]
            for j, fut in enumerate(futures):
                outputs[j] = fut.result()
                if progress:
                    progress(j + 1, len(jobs))
    result = ExperimentResult(spec)
    for cell in range(len(spec.cells)):
        parts = [out for (c, _, _), out in zip(jobs, outputs) if c == cell]
        per = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        result.rows.extend(_summarise_cell(spec, cell, per))
    return result


def design_list(text: Sequence[str]) -> tuple[tuple[int, int], ...]:
    """Parse designs written as 'AxN' strings."""
    out = []
    for t in text:
        try:
            a, n = t.lower().split("x")
            out.append((int(a), int(n)))
        except ValueError:
            raise PreconditionError(f"design {t!r} must look like 16x4") from None
    return tuple(out)
