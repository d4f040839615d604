"""Agglomerative hierarchical clustering over a condensed distance matrix.

Merges follow the Lance-Williams recurrence for the chosen linkage. Active
clusters live in slots 0..n-1; merging slots i < j stores the new cluster in
slot i. Among equally small dissimilarities the lexicographically smallest
slot pair (i, j) is merged first.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from typing import IO, Sequence

import numba
import numpy as np

from .errors import DataError, ParameterError
from .seqdist import CondensedDistanceMatrix


class Linkage(str, enum.Enum):
    WARD_SQUARED = "ward_squared"
    WARD_RAW = "ward_raw"
    AVERAGE = "average"
    COMPLETE = "complete"
    SINGLE = "single"

    @classmethod
    def parse(cls, name: "str | Linkage") -> "Linkage":
        if isinstance(name, Linkage):
            return name
        key = name.strip().lower().replace("-", "_")
        aliases = {"ward": "ward_squared", "ward_d2": "ward_squared", "ward_d": "ward_raw"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ParameterError(f"unknown linkage {name!r} (choose from {choices})") from None

    @property
    def monotone(self) -> bool:
        return self is not Linkage.WARD_RAW


_CODES = {
    Linkage.WARD_SQUARED: 0,
    Linkage.WARD_RAW: 1,
    Linkage.AVERAGE: 2,
    Linkage.COMPLETE: 3,
    Linkage.SINGLE: 4,
}


@dataclass(frozen=True)
class Dendrogram:
    """Merge history. Node refs < n are leaves; ref n + m is the result of merge m."""

    n: int
    left: np.ndarray
    right: np.ndarray
    height: np.ndarray
    size: np.ndarray

    def __len__(self) -> int:
        return int(self.left.shape[0])

    def merges(self) -> list[tuple[int, int, float, int]]:
        return [
            (int(a), int(b), float(h), int(s))
            for a, b, h, s in zip(self.left, self.right, self.height, self.size)
        ]

    def to_scipy(self) -> np.ndarray:
        """Linkage matrix in scipy's (n-1, 4) layout, for plotting or cross-checks."""
        return np.column_stack([self.left, self.right, self.height, self.size]).astype(np.float64)

    def node_name(self, ref: int) -> str:
        return f"L{ref}" if ref < self.n else f"M{ref - self.n}"

    def write_csv(self, target: IO[str]) -> None:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["merge_index", "left", "right", "height", "size"])
        for m, (a, b, h, s) in enumerate(self.merges()):
            writer.writerow([m, self.node_name(a), self.node_name(b), repr(h), s])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source: IO[str]) -> "Dendrogram":
        rows = list(csv.DictReader(source))
        n = len(rows) + 1

        def ref(token: str) -> int:
            return int(token[1:]) if token[0] == "L" else n + int(token[1:])

        return cls(
            n=n,
            left=np.array([ref(r["left"]) for r in rows], dtype=np.int64),
            right=np.array([ref(r["right"]) for r in rows], dtype=np.int64),
            height=np.array([float(r["height"]) for r in rows], dtype=np.float64),
            size=np.array([int(r["size"]) for r in rows], dtype=np.int64),
        )


@numba.njit(cache=True, inline="always")
def _cidx(n, i, j):
    return n * i - (i * (i + 1)) // 2 + (j - i - 1)


@numba.njit(cache=True, inline="always")
def _lance_williams(code, dik, djk, dij, ni, nj, nk):
    if code <= 1:
        return ((ni + nk) * dik + (nj + nk) * djk - nk * dij) / (ni + nj + nk)
    if code == 2:
        return (ni * dik + nj * djk) / (ni + nj)
    if code == 3:
        return dik if dik > djk else djk
    return dik if dik < djk else djk


@numba.njit(cache=True)
def _scan_row(d, n, i, active, rowmin, rowarg):
    best = np.inf
    arg = -1
    for k in range(i + 1, n):
        if active[k]:
            v = d[_cidx(n, i, k)]
            if v < best:
                best = v
                arg = k
    rowmin[i] = best
    rowarg[i] = arg


@numba.njit(cache=True)
def _agglomerate(d, n, code):
    left = np.empty(n - 1, dtype=np.int64)
    right = np.empty(n - 1, dtype=np.int64)
    crit = np.empty(n - 1, dtype=np.float64)
    size_out = np.empty(n - 1, dtype=np.int64)
    active = np.ones(n, dtype=np.bool_)
    sizes = np.ones(n, dtype=np.float64)
    node = np.arange(n)
    rowmin = np.empty(n, dtype=np.float64)
    rowarg = np.empty(n, dtype=np.int64)
    for i in range(n):
        _scan_row(d, n, i, active, rowmin, rowarg)

    for m in range(n - 1):
        i = -1
        best = np.inf
        for r in range(n):
            if active[r] and rowarg[r] >= 0 and rowmin[r] < best:
                best = rowmin[r]
                i = r
        j = rowarg[i]
        dij = d[_cidx(n, i, j)]
        ni = sizes[i]
        nj = sizes[j]
        left[m] = node[i]
        right[m] = node[j]
        crit[m] = dij
        size_out[m] = np.int64(ni + nj)

        for k in range(n):
            if not active[k] or k == i or k == j:
                continue
            ik = _cidx(n, i, k) if i < k else _cidx(n, k, i)
            jk = _cidx(n, j, k) if j < k else _cidx(n, k, j)
            d[ik] = _lance_williams(code, d[ik], d[jk], dij, ni, nj, sizes[k])

        active[j] = False
        sizes[i] = ni + nj
        node[i] = n + m

        for k in range(i):
            if not active[k]:
                continue
            if rowarg[k] == i or rowarg[k] == j:
                _scan_row(d, n, k, active, rowmin, rowarg)
            else:
                v = d[_cidx(n, k, i)]
                if v < rowmin[k] or (v == rowmin[k] and i < rowarg[k]):
                    rowmin[k] = v
                    rowarg[k] = i
        _scan_row(d, n, i, active, rowmin, rowarg)
        for k in range(i + 1, j):
            if active[k] and rowarg[k] == j:
                _scan_row(d, n, k, active, rowmin, rowarg)
        rowarg[j] = -1
    return left, right, crit, size_out


def _check_matrix(matrix: CondensedDistanceMatrix) -> np.ndarray:
    if matrix.n < 2:
        raise DataError(f"need at least 2 observations to cluster, got {matrix.n}")
    data = np.asarray(matrix.data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError("distance matrix contains non-finite entries")
    if np.any(data < 0):
        raise DataError("distance matrix contains negative entries")
    return data


def _heights(criterion: np.ndarray, linkage: Linkage) -> np.ndarray:
    if linkage is Linkage.WARD_SQUARED:
        return np.sqrt(np.maximum(criterion, 0.0))
    return criterion


def agglomerate(matrix: CondensedDistanceMatrix, linkage: Linkage | str = Linkage.WARD_SQUARED) -> Dendrogram:
    """Greedy agglomeration with cached per-row minima.

    WardSquared runs the recurrence on squared distances and reports the
    square root of the merge criterion as the height. Input is promoted to
    float64 before any arithmetic.
    """
    linkage = Linkage.parse(linkage)
    data = _check_matrix(matrix).copy()
    if linkage is Linkage.WARD_SQUARED:
        data *= data
    left, right, crit, size = _agglomerate(data, matrix.n, _CODES[linkage])
    return Dendrogram(matrix.n, left, right, _heights(crit, linkage), size)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    k: int

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterAssignment):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def write_csv(self, target: IO[str], student_ids: Sequence[str]) -> None:
        if len(student_ids) != len(self):
            raise ParameterError("student id count does not match assignment length")
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["student_id", "cluster_id"])
        for sid, lab in zip(student_ids, self.labels.tolist()):
            writer.writerow([sid, lab])

    def to_csv(self, student_ids: Sequence[str]) -> str:
        buf = io.StringIO()
        self.write_csv(buf, student_ids)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source: IO[str]) -> tuple[list[str], "ClusterAssignment"]:
        rows = list(csv.DictReader(source))
        labels = np.array([int(r["cluster_id"]) for r in rows], dtype=np.int64)
        return [r["student_id"] for r in rows], canonical_assignment(labels)


def canonical_assignment(labels: Sequence[int] | np.ndarray) -> ClusterAssignment:
    """Relabel clusters 0..k-1 in order of first appearance over leaf index."""
    mapping: dict[int, int] = {}
    out = np.array([mapping.setdefault(int(x), len(mapping)) for x in np.asarray(labels).tolist()], dtype=np.int64)
    return ClusterAssignment(out, len(mapping))


def cut_tree(dendro: Dendrogram, k: int) -> ClusterAssignment:
    """Flat clustering obtained by undoing the last k-1 merges."""
    n = dendro.n
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m in range(n - k):
        root = n + m
        parent[find(int(dendro.left[m]))] = root
        parent[find(int(dendro.right[m]))] = root
    return canonical_assignment([find(i) for i in range(n)])


@dataclass(frozen=True)
class ClusterStatsRow:
    cluster_id: int
    student_count: int
    mean_length: float
    sd_length: float

    def to_dict(self) -> dict[str, object]:
        return {
            "cluster_id": self.cluster_id,
            "student_count": self.student_count,
            "mean_length": self.mean_length,
            "sd_length": self.sd_length,
        }


def cluster_stats(assign: ClusterAssignment, table) -> list[ClusterStatsRow]:
    """Count, mean and sample SD (n-1 denominator) of sequence length per cluster."""
    lengths = table.lengths() if hasattr(table, "lengths") else np.asarray([len(s) for s in table])
    if lengths.shape[0] != len(assign):
        raise ParameterError(f"assignment has {len(assign)} labels but table has {lengths.shape[0]} entries")
    rows = []
    for c in range(assign.k):
        ls = lengths[assign.labels == c].astype(np.float64)
        sd = float(np.std(ls, ddof=1)) if ls.size > 1 else 0.0
        rows.append(ClusterStatsRow(c, int(ls.size), float(ls.mean()), sd))
    return rows


def stats_to_json(rows: Sequence[ClusterStatsRow]) -> str:
    return json.dumps([r.to_dict() for r in rows], indent=2) + "\n"


@numba.njit(cache=True)
def _cluster_sums(d, n, labels, k):
    sums = np.zeros((n, k), dtype=np.float64)
    pos = 0
    for i in range(n):
        for j in range(i + 1, n):
            v = d[pos]
            sums[i, labels[j]] += v
            sums[j, labels[i]] += v
            pos += 1
    return sums


def silhouette(matrix: CondensedDistanceMatrix, assign: ClusterAssignment) -> float:
    """Mean silhouette width; points in singleton clusters score 0."""
    if len(assign) != matrix.n:
        raise ParameterError("assignment length does not match matrix size")
    if not 2 <= assign.k <= matrix.n - 1:
        raise ParameterError("silhouette needs 2 <= k <= n-1")
    sums = _cluster_sums(matrix.data.astype(np.float64), matrix.n, assign.labels, assign.k)
    counts = np.bincount(assign.labels, minlength=assign.k).astype(np.float64)
    own = assign.labels
    idx = np.arange(matrix.n)
    own_count = counts[own]
    a = np.where(own_count > 1, sums[idx, own] / np.maximum(own_count - 1, 1), 0.0)
    means = sums / counts
    means[idx, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_count > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def silhouette_report(matrix: CondensedDistanceMatrix, dendro: Dendrogram, k_values: Sequence[int]) -> dict[int, float]:
    """Mean silhouette per candidate k. A diagnostic only; it does not pick k."""
    return {k: silhouette(matrix, cut_tree(dendro, k)) for k in k_values}


def adjusted_rand_index(a: Sequence[int] | np.ndarray, b: Sequence[int] | np.ndarray) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ParameterError("partitions must have the same length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x: np.ndarray) -> float:
        return float((x * (x - 1) // 2).sum())

    n = a.shape[0]
    index = pairs(table)
    row = pairs(table.sum(axis=1))
    col = pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = row * col / total if total else 0.0
    max_index = (row + col) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)
