"""One-way ANOVA sums of squares in classical and pairwise-distance form.

Two ways of pooling the within-unit variation are supported:

``classical``
    MSE = SSE / (N - a), MSA = SSA / (a - 1).
``pairable`` (default)
    MSE is the average of the units' unbiased within-unit variances weighted by
    their score counts, taken over units with at least two scores. This is
    Krippendorff's observed-disagreement weighting. MSA is then defined through
    the partition (N - 1) MST_c = (a - 1) MSA + (N - a) MSE.

Both agree exactly for balanced designs. Units with a single score contribute
nothing to the within-unit terms but still enter SST_c, N, a and n*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import DEFAULT_TABLE_CAP, DataMatrix, DistanceFunction, DistanceTable, build_distance_table
from .errors import PreconditionError

POOLINGS = ("pairable", "classical")


@dataclass(frozen=True)
class AnovaSummary:
    """Sums of squares, mean squares and design constants for one data matrix.

    ``sse`` is always the within-unit sum of squares about the unit means (or
    its pairwise-distance analogue) and ``ssa = sst - sse``. Under pairable
    pooling the mean squares ``mse``/``msa`` follow the module docstring and
    need not equal ``sse/(N-a)``/``ssa/(a-1)`` for unbalanced data.
    """

    sse: float
    ssa: float
    sst: float
    mse: float
    msa: float
    mst: float
    N: int
    a: int
    n_eff: float
    balanced: bool
    pooling: str = "pairable"

    @classmethod
    def balanced_from_sums(cls, sse: float, ssa: float, a: int, n: int) -> AnovaSummary:
        """Summary of a balanced a x n design given SSE and SSA directly."""
        N = a * n
        sst = sse + ssa
        return cls(sse=sse, ssa=ssa, sst=sst, mse=sse / (N - a), msa=ssa / (a - 1),
                   mst=sst / (N - 1), N=N, a=a, n_eff=float(n), balanced=True, pooling="classical")

    @property
    def theta(self) -> float:
        """Variance-ratio statistic MSA/MSE (inf when MSE = 0 < MSA)."""
        if self.mse == 0:
            return math.inf if self.msa > 0 else math.nan
        return self.msa / self.mse

    @property
    def degenerate(self) -> bool:
        """True when all scores are identical under the distance (SST_c = 0)."""
        return self.sst == 0


@dataclass(frozen=True)
class UnitSums:
    """Unit-level aggregates of a distance table.

    ``cross[i, k]`` is the sum of d^2 over all ordered score pairs with one
    score from unit ``i`` and one from unit ``k``; ``cross[i, i]`` is the
    within-unit sum. Every ANOVA quantity of any multiset of units (bootstrap
    resample, leave-one-out subset) is a function of these sums alone.
    """

    n: np.ndarray
    cross: np.ndarray

    @property
    def within(self) -> np.ndarray:
        return np.diagonal(self.cross, axis1=-2, axis2=-1)

    @property
    def a(self) -> int:
        return self.n.shape[-1]


class MeanSquares(NamedTuple):
    sse: np.ndarray
    ssa: np.ndarray
    sst: np.ndarray
    mse: np.ndarray
    msa: np.ndarray
    mst: np.ndarray
    N: np.ndarray
    a: np.ndarray
    n_eff: np.ndarray


def unit_sums(m: DataMatrix, f: DistanceFunction | None, table: DistanceTable | None = None,
              cap: int = DEFAULT_TABLE_CAP) -> UnitSums:
    """Aggregate pairwise distances by unit, via the lookup table when N <= cap.

    Above the cap the table is never materialised; distances are evaluated
    one unit block at a time instead.
    """
    counts = m.counts
    a = m.a
    if table is None and m.N <= cap:
        table = build_distance_table(m, f, cap=cap)
    if table is not None:
        owner = np.repeat(np.arange(a), counts)
        ind = np.zeros((m.N, a))
        ind[np.arange(m.N), owner] = 1.0
        cross = ind.T @ table.entries @ ind
    else:
        if f.numeric and not m.numeric:
            raise PreconditionError(f"{f.kind} distance requires numeric scores")
        v = m.values()
        owner = np.repeat(np.arange(a), counts)
        cross = np.zeros((a, a))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for i in range(a):
            if counts[i] == 0:
                continue
            block = f.pairwise(v[offsets[i]:offsets[i + 1]], v).sum(axis=0)
            cross[i] = np.bincount(owner, weights=block, minlength=a)
    cross = 0.5 * (cross + cross.T)
    return UnitSums(counts.astype(float), cross)


def numeric_unit_sums(values: np.ndarray, mask: np.ndarray | None = None) -> UnitSums:
    """Squared-Euclidean unit sums for (batches of) rectangular numeric data.

    ``values`` has shape (..., a, n); ``mask`` marks observed cells. Uses
    closed forms instead of a table: the within sum of unit i is
    2 n_i SS_i and the cross sum is n_k Q_i + n_i Q_k - 2 S_i S_k.
    """
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    x = np.where(mask, values, 0.0)
    n = mask.sum(axis=-1).astype(float)
    tot_n = n.sum(axis=-1, keepdims=True)
    grand = x.sum(axis=(-2, -1))[..., None] / np.where(tot_n > 0, tot_n, 1.0)
    xc = np.where(mask, x - grand[..., None], 0.0)
    s = xc.sum(axis=-1)
    q = (xc * xc).sum(axis=-1)
    safe_n = np.where(n > 0, n, 1.0)
    ss_within = np.where(mask, xc - (s / safe_n)[..., None], 0.0)
    ss_within = (ss_within * ss_within).sum(axis=-1)
    cross = (n[..., None, :] * q[..., :, None] + n[..., :, None] * q[..., None, :]
             - 2.0 * s[..., :, None] * s[..., None, :])
    diag = 2.0 * n * ss_within
    idx = np.arange(n.shape[-1])
    cross[..., idx, idx] = diag
    return UnitSums(n, cross)


def categorical_unit_sums(codes: np.ndarray, mask: np.ndarray | None, n_categories: int) -> UnitSums:
    """Discrete-metric unit sums for (batches of) integer-coded data, shape (..., a, n)."""
    codes = np.asarray(codes)
    if mask is None:
        mask = np.ones(codes.shape, dtype=bool)
    tab = np.stack([((codes == c) & mask).sum(axis=-1) for c in range(n_categories)], axis=-1).astype(float)
    n = tab.sum(axis=-1)
    cross = n[..., :, None] * n[..., None, :] - tab @ np.swapaxes(tab, -1, -2)
    return UnitSums(n, cross)


def _assemble(c, n, w, pair_total, pooling: str) -> MeanSquares:
    if pooling not in POOLINGS:
        raise PreconditionError(f"unknown pooling {pooling!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        N = (c * n).sum(axis=-1)
        a = (c * (n > 0)).sum(axis=-1)
        sse = (c * np.where(n > 0, w / (2.0 * np.where(n > 0, n, 1.0)), 0.0)).sum(axis=-1)
        sst = pair_total / (2.0 * N)
        mst = sst / (N - 1.0)
        if pooling == "pairable":
            pairable = n >= 2
            n_pair = (c * np.where(pairable, n, 0.0)).sum(axis=-1)
            w_pair = (c * np.where(pairable, w / np.where(pairable, n - 1.0, 1.0), 0.0)).sum(axis=-1)
            mse = w_pair / (2.0 * n_pair)
            msa = (sst - (N - a) * mse) / (a - 1.0)
        else:
            mse = sse / (N - a)
            msa = (sst - sse) / (a - 1.0)
        sum_n2 = (c * n * n).sum(axis=-1)
        n_eff = (N - sum_n2 / N) / (a - 1.0)
        bad = (a < 2) | (N <= a)
    nan = np.nan
    return MeanSquares(
        sse=sse, ssa=sst - sse, sst=sst,
        mse=np.where(bad, nan, mse), msa=np.where(bad, nan, msa), mst=np.where(bad, nan, mst),
        N=N, a=a, n_eff=np.where(bad, nan, n_eff),
    )


def mean_squares(us: UnitSums, counts: np.ndarray | None = None, pooling: str = "pairable") -> MeanSquares:
    """Vectorised ANOVA quantities for unit multisets given by ``counts``.

    ``counts`` has shape (..., a) and gives how many copies of each unit are
    included (bootstrap frequencies); leading dimensions broadcast against
    those of ``us``. Invalid configurations yield NaN instead of raising.
    """
    c = np.ones_like(us.n) if counts is None else np.asarray(counts, dtype=float)
    pair_total = np.einsum("...i,...ij,...j->...", c, us.cross, c)
    return _assemble(c, us.n, us.within, pair_total, pooling)


def _check_design(counts: np.ndarray) -> tuple[int, int]:
    counts = counts[counts > 0]
    a, N = len(counts), int(counts.sum())
    if a < 2:
        raise PreconditionError(f"need at least 2 units with scores, found {a}")
    if N <= a:
        raise PreconditionError("no unit has two or more scores (N = a)")
    return a, N


def summarize(us: UnitSums, pooling: str = "pairable") -> AnovaSummary:
    """AnovaSummary of all units described by ``us``."""
    _check_design(us.n.astype(int))
    ms = mean_squares(us, pooling=pooling)
    nz = us.n[us.n > 0]
    return AnovaSummary(
        sse=float(ms.sse), ssa=float(ms.ssa), sst=float(ms.sst),
        mse=float(ms.mse), msa=float(ms.msa), mst=float(ms.mst),
        N=int(ms.N), a=int(ms.a), n_eff=float(ms.n_eff),
        balanced=bool(np.all(nz == nz[0])), pooling=pooling,
    )


def classical_sums(m: DataMatrix, pooling: str = "pairable") -> AnovaSummary:
    """Mean-based one-way ANOVA for numeric scores."""
    if pooling not in POOLINGS:
        raise PreconditionError(f"unknown pooling {pooling!r}")
    if not m.numeric:
        raise PreconditionError("classical sums require numeric scores")
    units = [np.asarray(u, dtype=float) for u in m.units if len(u) > 0]
    counts = np.array([len(u) for u in units])
    a, N = _check_design(counts)
    grand = math.fsum(math.fsum(u) for u in units) / N
    means = [math.fsum(u) / len(u) for u in units]
    within = [math.fsum((u - mu) ** 2) for u, mu in zip(units, means)]
    sse = math.fsum(within)
    ssa = math.fsum(len(u) * (mu - grand) ** 2 for u, mu in zip(units, means))
    sst = math.fsum(math.fsum((u - grand) ** 2) for u in units)
    mst = sst / (N - 1)
    if pooling == "pairable":
        n_pair = sum(len(u) for u in units if len(u) >= 2)
        mse = math.fsum(len(u) * ss / (len(u) - 1) for u, ss in zip(units, within) if len(u) >= 2) / n_pair
        msa = (sst - (N - a) * mse) / (a - 1)
    else:
        mse = sse / (N - a)
        msa = ssa / (a - 1)
    return AnovaSummary(sse=sse, ssa=ssa, sst=sst, mse=mse, msa=msa, mst=mst, N=N, a=a,
                        n_eff=n_star(counts), balanced=bool(np.all(counts == counts[0])),
                        pooling=pooling)


def nonparametric_sums(m: DataMatrix, t: DistanceTable, pooling: str = "pairable") -> AnovaSummary:
    """ANOVA quantities computed from a precomputed distance table.

    SSE = sum_i (2 n_i)^-1 sum_{j,l} d^2 and SST_c = (2N)^-1 sum over all
    score pairs; SSA = SST_c - SSE.
    """
    if not np.array_equal(t.counts, m.counts):
        raise PreconditionError("distance table was built for a different matrix")
    return summarize(unit_sums(m, None, table=t), pooling=pooling)


def n_star(m: DataMatrix | np.ndarray | list) -> float:
    """Effective number of scores per unit, (N - sum n_i^2 / N) / (a - 1)."""
    counts = m.counts if isinstance(m, DataMatrix) else np.asarray(m)
    counts = counts[counts > 0]
    a = len(counts)
    if a < 2:
        raise PreconditionError("n* needs at least 2 units")
    N = float(np.sum(counts))
    if N == 0:
        return 0.0
    return (N - float(np.sum(counts.astype(float) ** 2)) / N) / (a - 1)


def leave_one_out(us: UnitSums, pooling: str = "pairable") -> MeanSquares:
    """ANOVA quantities with each unit removed in turn; result arrays end in axis a.

    Uses T_{-i} = T - 2 (B 1)_i + B_ii on the unit cross sums, so all a
    subsets together cost O(a^2).
    """
    a = us.a
    row = us.cross.sum(axis=-1)
    pair_total = row.sum(axis=-1, keepdims=True) - 2.0 * row + us.within
    c = 1.0 - np.eye(a)
    return _assemble(c, us.n[..., None, :], us.within[..., None, :], pair_total, pooling)
