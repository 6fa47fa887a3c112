"""Score matrices, distance functions and the pairwise distance lookup table."""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .errors import DataFormatError, PreconditionError

Score = Union[float, str]

DEFAULT_TABLE_CAP = 10_000


@dataclass(frozen=True)
class DataMatrix:
    """Ragged units-by-coders matrix holding only the observed scores.

    ``units[i]`` holds the scores of unit ``i`` in coder order; missing cells
    are simply absent. ``columns[i]`` records which coder column produced each
    score so a matrix can be written back out in its original shape.
    """

    units: tuple[tuple[Score, ...], ...]
    columns: tuple[tuple[int, ...], ...] | None = None
    coder_labels: tuple[str, ...] | None = None
    unit_labels: tuple[str, ...] | None = None
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        if self.columns is not None and len(self.columns) != len(self.units):
            raise PreconditionError("columns must have one entry per unit")
        if self.unit_labels is not None and len(self.unit_labels) != len(self.units):
            raise PreconditionError("unit_labels must have one entry per unit")

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[Any]], missing: Any = None, **kwargs) -> DataMatrix:
        """Build a matrix from rectangular rows, treating ``missing``/NaN/None as absent."""
        units, columns = [], []
        for row in rows:
            scores, cols = [], []
            for j, v in enumerate(row):
                if _is_missing(v, missing):
                    continue
                scores.append(v if isinstance(v, str) else float(v))
                cols.append(j)
            units.append(tuple(scores))
            columns.append(tuple(cols))
        return cls(tuple(units), tuple(columns), **kwargs)

    @property
    def a(self) -> int:
        return len(self.units)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(u) for u in self.units], dtype=np.int64)

    @property
    def N(self) -> int:
        return sum(len(u) for u in self.units)

    @property
    def balanced(self) -> bool:
        return len({len(u) for u in self.units}) <= 1

    @property
    def numeric(self) -> bool:
        return all(not isinstance(v, str) for u in self.units for v in u)

    @property
    def labels(self) -> tuple[str, ...]:
        if self.unit_labels is not None:
            return self.unit_labels
        return tuple(f"u{i + 1}" for i in range(self.a))

    def values(self) -> np.ndarray:
        """All observed scores flattened unit by unit (float array when numeric)."""
        flat = [v for u in self.units for v in u]
        if self.numeric:
            return np.array(flat, dtype=float)
        return np.array(flat, dtype=object)

    def subset(self, keep: Sequence[int]) -> DataMatrix:
        """Matrix restricted to the given unit indices (in the given order)."""
        keep = list(keep)
        labels = self.labels
        kept = set(keep)
        gone = tuple(labels[i] for i in range(self.a) if i not in kept)
        return DataMatrix(
            units=tuple(self.units[i] for i in keep),
            columns=None if self.columns is None else tuple(self.columns[i] for i in keep),
            coder_labels=self.coder_labels,
            unit_labels=tuple(labels[i] for i in keep),
            dropped=self.dropped + gone,
        )

    def to_csv(self, path: str | os.PathLike | None = None, missing_token: str = "NA",
               delimiter: str = ",", header: bool | None = None) -> str:
        """Serialize back to rectangular CSV. Returns the text; writes it if ``path`` is given."""
        if self.columns is not None:
            width = max((max(c) + 1 for c in self.columns if c), default=0)
        else:
            width = max((len(u) for u in self.units), default=0)
        if self.coder_labels is not None:
            width = max(width, len(self.coder_labels))
        if header is None:
            header = self.coder_labels is not None
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        if header:
            writer.writerow(self.coder_labels or [f"c{j + 1}" for j in range(width)])
        for i, unit in enumerate(self.units):
            row = [missing_token] * width
            cols = self.columns[i] if self.columns is not None else range(len(unit))
            for j, v in zip(cols, unit):
                row[j] = v if isinstance(v, str) else _format_number(v)
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _format_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def _is_missing(v: Any, missing: Any) -> bool:
    if v is None:
        return True
    if missing is not None and v == missing:
        return True
    if isinstance(v, float) and math.isnan(v):
        return True
    return False


def load_csv(path: str | os.PathLike, missing_token: str = "NA", value_mode: str = "numeric",
             header: bool = False, delimiter: str = ",") -> DataMatrix:
    """Read a units-by-coders CSV file.

    Cells equal to ``missing_token`` (or blank) are treated as absent scores.
    In ``numeric`` mode every observed cell must parse as a float; in
    ``categorical`` mode labels are kept verbatim as strings.
    """
    if value_mode not in ("numeric", "categorical"):
        raise PreconditionError(f"unknown value_mode {value_mode!r}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc

    coder_labels = None
    if header and rows:
        coder_labels = tuple(c.strip() for c in rows[0])
        rows = rows[1:]
    if not rows:
        raise DataFormatError("no units")
    width = len(coder_labels) if coder_labels is not None else len(rows[0])

    units, columns = [], []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DataFormatError(f"ragged row at line {lineno}: expected {width} cells, found {len(row)}")
        scores, cols = [], []
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell == missing_token:
                continue
            if value_mode == "numeric":
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"line {lineno}, column {j + 1}: non-numeric cell {cell!r}") from None
                if not math.isfinite(value):
                    raise DataFormatError(f"line {lineno}, column {j + 1}: non-finite cell {cell!r}")
                scores.append(value)
            else:
                scores.append(cell)
            cols.append(j)
        units.append(tuple(scores))
        columns.append(tuple(cols))
    return DataMatrix(tuple(units), tuple(columns), coder_labels=coder_labels)


def prune_units(m: DataMatrix, min_scores: int = 2) -> DataMatrix:
    """Drop units with fewer than ``min_scores`` observed scores.

    Dropped unit labels are appended to ``DataMatrix.dropped``.
    """
    keep = [i for i, u in enumerate(m.units) if len(u) >= min_scores]
    if not keep:
        raise PreconditionError("no units")
    if len(keep) == m.a:
        return m
    return m.subset(keep)


def drop_units(m: DataMatrix, indices: Iterable[int]) -> DataMatrix:
    """Remove units by zero-based index (sensitivity analyses)."""
    drop = set(indices)
    bad = [i for i in drop if not 0 <= i < m.a]
    if bad:
        raise PreconditionError(f"unit index out of range: {sorted(bad)}")
    keep = [i for i in range(m.a) if i not in drop]
    if not keep:
        raise PreconditionError("no units")
    return m.subset(keep)


# ---------------------------------------------------------------- distances


def _nominal(x, y):
    return 0.0 if x == y else 1.0


def _interval(x, y):
    return (x - y) ** 2


def _ratio(x, y):
    s = x + y
    if s == 0:
        raise PreconditionError("ratio distance undefined for x + y = 0")
    return ((x - y) / s) ** 2


@dataclass(frozen=True)
class DistanceFunction:
    """Squared discrepancy d^2(x, y) between two scores.

    ``pairwise`` evaluates every pair of two score vectors at once; for the
    built-in kinds it performs the same floating point operations as the
    scalar function, so table entries are bit-identical to direct calls.
    """

    kind: str
    func: Callable[[Any, Any], float] = field(repr=False)

    def __call__(self, x, y) -> float:
        return self.func(x, y)

    @property
    def numeric(self) -> bool:
        return self.kind in ("interval", "ratio")

    def pairwise(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "nominal":
            return np.not_equal.outer(x, y).astype(float)
        if self.kind == "interval":
            x, y = np.asarray(x, float), np.asarray(y, float)
            return (x[:, None] - y[None, :]) ** 2
        if self.kind == "ratio":
            x, y = np.asarray(x, float), np.asarray(y, float)
            s = x[:, None] + y[None, :]
            if np.any(s == 0):
                raise PreconditionError("ratio distance undefined for x + y = 0")
            return ((x[:, None] - y[None, :]) / s) ** 2
        out = np.empty((len(x), len(y)))
        for p, xp in enumerate(x):
            for q, yq in enumerate(y):
                out[p, q] = self.func(xp, yq)
        return out


NOMINAL = DistanceFunction("nominal", _nominal)
INTERVAL = DistanceFunction("interval", _interval)
RATIO = DistanceFunction("ratio", _ratio)

_BUILTIN = {"nominal": NOMINAL, "interval": INTERVAL, "ratio": RATIO}


def get_distance(name: str) -> DistanceFunction:
    try:
        return _BUILTIN[name]
    except KeyError:
        raise PreconditionError(
            f"unknown distance {name!r}; choose from {sorted(_BUILTIN)}") from None


def custom_distance(func: Callable[[Any, Any], float], samples: Sequence[Any] = (),
                    max_pairs: int = 2_000, seed: int = 0) -> DistanceFunction:
    """Register a user-defined distance after checking it on sampled score pairs.

    Checks zero self-distance, symmetry and non-negativity on up to
    ``max_pairs`` pairs drawn from ``samples``.
    """
    samples = list(samples)
    if samples:
        rng = np.random.default_rng(seed)
        k = len(samples)
        for x in samples:
            if func(x, x) != 0:
                raise PreconditionError(f"custom distance: d(x, x) != 0 for x={x!r}")
        for _ in range(min(max_pairs, k * k)):
            x, y = samples[rng.integers(k)], samples[rng.integers(k)]
            dxy, dyx = func(x, y), func(y, x)
            if dxy < 0:
                raise PreconditionError(f"custom distance negative for ({x!r}, {y!r})")
            if dxy != dyx:
                raise PreconditionError(f"custom distance asymmetric for ({x!r}, {y!r})")
    return DistanceFunction("custom", func)


def distance(f: DistanceFunction, x: Score, y: Score) -> float:
    """Evaluate ``f`` on a single pair."""
    return f(x, y)


@dataclass(frozen=True)
class DistanceTable:
    """Dense N x N table of d^2 over every observed score.

    Flat index ``p`` enumerates scores unit by unit; ``offsets[i]`` is the
    first flat index of unit ``i``.
    """

    entries: np.ndarray
    offsets: np.ndarray
    counts: np.ndarray

    def index(self, unit: int, slot: int) -> int:
        if not 0 <= slot < self.counts[unit]:
            raise IndexError("slot out of range")
        return int(self.offsets[unit] + slot)

    def index_map(self) -> dict[tuple[int, int], int]:
        return {(i, j): int(self.offsets[i] + j)
                for i in range(len(self.counts)) for j in range(int(self.counts[i]))}

    def lookup(self, p: tuple[int, int], q: tuple[int, int]) -> float:
        return float(self.entries[self.index(*p), self.index(*q)])


def build_distance_table(m: DataMatrix, f: DistanceFunction, cap: int = DEFAULT_TABLE_CAP) -> DistanceTable:
    """Precompute d^2 for every pair of observed scores."""
    if m.N == 0:
        raise PreconditionError("cannot build a distance table for an empty matrix")
    if m.N > cap:
        raise PreconditionError(f"N={m.N} exceeds the distance table cap {cap}")
    if f.numeric and not m.numeric:
        raise PreconditionError(f"{f.kind} distance requires numeric scores")
    v = m.values()
    counts = m.counts
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    entries = f.pairwise(v, v)
    entries.setflags(write=False)
    return DistanceTable(entries, offsets, counts)
