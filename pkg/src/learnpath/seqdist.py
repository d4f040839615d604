"""Generalized Levenshtein distance over activity sequences and the condensed pairwise matrix."""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path
from typing import IO, Sequence

import numba
import numpy as np

from .errors import DataError

MAGIC = b"PMDM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQ")


@numba.njit(cache=True, nogil=True)
def _levenshtein(a, b, prev, cur):
    # Two-row DP; ``prev``/``cur`` are scratch buffers of length >= len(b) + 1.
    m = b.shape[0]
    for j in range(m + 1):
        prev[j] = j
    for i in range(a.shape[0]):
        cur[0] = i + 1
        ai = a[i]
        for j in range(m):
            best = prev[j] + (0 if ai == b[j] else 1)
            ins = cur[j] + 1
            if ins < best:
                best = ins
            dele = prev[j + 1] + 1
            if dele < best:
                best = dele
            cur[j + 1] = best
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True)
def _edit_distance(a, b):
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    prev = np.empty(b.shape[0] + 1, dtype=np.int32)
    cur = np.empty(b.shape[0] + 1, dtype=np.int32)
    return _levenshtein(a, b, prev, cur)


@numba.njit(cache=True, nogil=True)
def _fill_row(i, flat, offsets, out, prev, cur):
    n = offsets.shape[0] - 1
    base = n * i - (i * (i + 1)) // 2 - i - 1
    a = flat[offsets[i]:offsets[i + 1]]
    for j in range(i + 1, n):
        b = flat[offsets[j]:offsets[j + 1]]
        if a.shape[0] >= b.shape[0]:
            out[base + j] = _levenshtein(a, b, prev, cur)
        else:
            out[base + j] = _levenshtein(b, a, prev, cur)


@numba.njit(cache=True, parallel=True)
def _pairwise(flat, offsets, maxlen):
    n = offsets.shape[0] - 1
    out = np.empty(n * (n - 1) // 2, dtype=np.float32)
    half = (n + 1) // 2
    # Row i has n-1-i pairs; pairing row m with row n-1-m balances the work per task.
    for m in numba.prange(half):
        prev = np.empty(maxlen + 1, dtype=np.int32)
        cur = np.empty(maxlen + 1, dtype=np.int32)
        _fill_row(m, flat, offsets, out, prev, cur)
        other = n - 1 - m
        if other != m:
            _fill_row(other, flat, offsets, out, prev, cur)
    return out


def _as_array(seq: Sequence[int] | np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(seq, dtype=np.int64).reshape(-1))


def edit_distance(a: Sequence[int] | np.ndarray, b: Sequence[int] | np.ndarray) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs.

    Works on any sequences of integer symbols (use catalog indices for
    activity tokens). For arbitrary hashable tokens see ``edit_distance_tokens``.
    """
    return int(_edit_distance(_as_array(a), _as_array(b)))


def edit_distance_tokens(a: Sequence[object], b: Sequence[object]) -> int:
    codes: dict[object, int] = {}
    ca = [codes.setdefault(x, len(codes)) for x in a]
    cb = [codes.setdefault(x, len(codes)) for x in b]
    return edit_distance(ca, cb)


def pack_sequences(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate sequences into one int64 array plus an offsets array of length n+1."""
    lengths = np.fromiter((len(s) for s in sequences), dtype=np.int64, count=len(sequences))
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.empty(int(offsets[-1]), dtype=np.int64)
    for i, s in enumerate(sequences):
        flat[offsets[i]:offsets[i + 1]] = s
    return flat, offsets


def condensed_index(n: int, i: int, j: int) -> int:
    """Position of pair (i, j), i != j, in the condensed array."""
    if i == j:
        raise IndexError("diagonal is not stored")
    if i > j:
        i, j = j, i
    return n * i - i * (i + 1) // 2 + (j - i - 1)


class CondensedDistanceMatrix:
    """Pairwise distances stored once per unordered pair.

    Pair (i, j) with i < j lives at ``condensed_index(n, i, j)``, the same
    ordering scipy uses for its condensed form. Storage is float32; pass
    ``dtype=np.float64`` for in-memory matrices that need finer resolution
    (the on-disk format is always float32).
    """

    __slots__ = ("n", "data")

    def __init__(self, n: int, data: np.ndarray, dtype=np.float32):
        data = np.ascontiguousarray(data, dtype=dtype)
        if data.ndim != 1 or data.shape[0] != n * (n - 1) // 2:
            raise DataError(f"condensed array of length {data.shape[0]} does not match n={n}")
        self.n = n
        self.data = data

    @classmethod
    def from_square(cls, square: np.ndarray, dtype=np.float32) -> "CondensedDistanceMatrix":
        square = np.asarray(square)
        n = square.shape[0]
        iu = np.triu_indices(n, k=1)
        return cls(n, square[iu], dtype=dtype)

    def __getitem__(self, pair: tuple[int, int]) -> float:
        i, j = pair
        if i == j:
            return 0.0
        return float(self.data[condensed_index(self.n, i, j)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CondensedDistanceMatrix):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.data, other.data)

    def to_square(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.float64)
        iu = np.triu_indices(self.n, k=1)
        out[iu] = self.data
        out.T[iu] = self.data
        return out

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, FORMAT_VERSION, self.n) + self.data.astype("<f4", copy=False).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CondensedDistanceMatrix":
        if len(blob) < HEADER.size:
            raise DataError("truncated distance-matrix file")
        magic, version, n = HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise DataError("not a PMDM distance-matrix file")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported PMDM version {version}")
        expected = HEADER.size + 4 * (n * (n - 1) // 2)
        if len(blob) != expected:
            raise DataError(f"PMDM file has {len(blob)} bytes, expected {expected}")
        data = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).astype(np.float32)
        return cls(n, data)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "CondensedDistanceMatrix":
        return cls.from_bytes(Path(path).read_bytes())

    def write_text(self, target: IO[str], labels: Sequence[str] | None = None) -> None:
        """Debug export: one ``i,j,distance`` row per pair. Only sensible for small n."""
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["i", "j", "distance"])
        names = list(labels) if labels is not None else [str(i) for i in range(self.n)]
        k = 0
        for i in range(self.n):
            for j in range(i + 1, self.n):
                writer.writerow([names[i], names[j], f"{float(self.data[k]):g}"])
                k += 1

    def to_text(self, labels: Sequence[str] | None = None) -> str:
        buf = io.StringIO()
        self.write_text(buf, labels)
        return buf.getvalue()


def pairwise_distances(table_or_sequences) -> CondensedDistanceMatrix:
    """Edit distance between every pair of sequences.

    Accepts a SequenceTable or a plain list of integer sequences. Rows are
    computed in parallel (numba threads) but every pair has a fixed output
    slot, so the result does not depend on the thread count.
    """
    sequences = getattr(table_or_sequences, "sequences", table_or_sequences)
    n = len(sequences)
    if n < 2:
        raise DataError(f"need at least 2 sequences for a distance matrix, got {n}")
    flat, offsets = pack_sequences(sequences)
    maxlen = int(np.max(np.diff(offsets))) if n else 0
    return CondensedDistanceMatrix(n, _pairwise(flat, offsets, maxlen))
