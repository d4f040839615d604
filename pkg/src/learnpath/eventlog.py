"""Event-log ingestion: parse delimited logs into per-student activity sequences."""

from __future__ import annotations

import csv
import enum
import io
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParameterError

REQUIRED_FIELDS = ("student_id", "activity_id", "timestamp")
OPTIONAL_FIELDS = ("event_type", "activity_type", "score", "session_id")
SEQUENCE_SEPARATOR = "|"


class TimestampFormat(str, enum.Enum):
    ISO8601 = "iso8601"
    EPOCH_MS = "epoch_ms"
    EPOCH_S = "epoch_s"


@dataclass(frozen=True, slots=True)
class EventRecord:
    student_id: str
    activity_id: str
    timestamp_ms: int
    event_type: str | None = None
    activity_type: str | None = None
    score: float | None = None
    session_id: str | None = None
    # Position among accepted rows; breaks timestamp ties.
    rank: int = 0


@dataclass(frozen=True)
class IngestConfig:
    column_map: Mapping[str, str] = field(
        default_factory=lambda: {name: name for name in REQUIRED_FIELDS}
    )
    event_type_filter: frozenset[str] | None = None
    activity_type_filter: frozenset[str] | None = None
    timestamp_format: TimestampFormat = TimestampFormat.ISO8601
    sample_size: int | None = None
    sample_seed: int = 0
    min_sequence_length: int = 1

    def __post_init__(self) -> None:
        missing = [f for f in REQUIRED_FIELDS if f not in self.column_map]
        if missing:
            raise ConfigError(f"column_map lacks required fields: {', '.join(missing)}")
        unknown = set(self.column_map) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
        if unknown:
            raise ConfigError(f"column_map has unknown fields: {', '.join(sorted(unknown))}")
        if self.event_type_filter is not None and "event_type" not in self.column_map:
            raise ConfigError("event_type_filter given but event_type is not mapped")
        if self.activity_type_filter is not None and "activity_type" not in self.column_map:
            raise ConfigError("activity_type_filter given but activity_type is not mapped")
        if self.sample_size is not None and self.sample_size < 1:
            raise ConfigError("sample_size must be >= 1")
        if not 0 <= self.sample_seed < 2**64:
            raise ConfigError("sample_seed must fit in an unsigned 64-bit integer")
        if self.min_sequence_length < 0:
            raise ConfigError("min_sequence_length must be non-negative")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, object]) -> "IngestConfig":
        """Build a config from a parsed JSON/TOML document."""
        known = {
            "column_map", "event_type_filter", "activity_type_filter",
            "timestamp_format", "sample_size", "sample_seed", "min_sequence_length",
        }
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        kwargs: dict[str, object] = {}
        if "column_map" in raw:
            cmap = raw["column_map"]
            if not isinstance(cmap, Mapping):
                raise ConfigError("column_map must be a table/object")
            kwargs["column_map"] = {str(k): str(v) for k, v in cmap.items()}
        for key in ("event_type_filter", "activity_type_filter"):
            value = raw.get(key)
            if value is not None:
                if isinstance(value, str) or not isinstance(value, Iterable):
                    raise ConfigError(f"{key} must be a list of strings")
                kwargs[key] = frozenset(str(v) for v in value)
        if "timestamp_format" in raw:
            try:
                kwargs["timestamp_format"] = TimestampFormat(raw["timestamp_format"])
            except ValueError:
                choices = ", ".join(t.value for t in TimestampFormat)
                raise ConfigError(f"timestamp_format must be one of {choices}") from None
        for key in ("sample_size", "sample_seed", "min_sequence_length"):
            value = raw.get(key)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
            kwargs[key] = value
        return cls(**kwargs)  # type: ignore[arg-type]

    def to_mapping(self) -> dict[str, object]:
        """Canonical JSON-ready form; used for hashing the configuration."""
        return {
            "column_map": dict(sorted(self.column_map.items())),
            "event_type_filter": sorted(self.event_type_filter) if self.event_type_filter is not None else None,
            "activity_type_filter": sorted(self.activity_type_filter) if self.activity_type_filter is not None else None,
            "timestamp_format": self.timestamp_format.value,
            "sample_size": self.sample_size,
            "sample_seed": self.sample_seed,
            "min_sequence_length": self.min_sequence_length,
        }


@dataclass(frozen=True, slots=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list[EventRecord]
    errors: list[RowError]

    @property
    def error_count(self) -> int:
        return len(self.errors)


def parse_timestamp(text: str, fmt: TimestampFormat) -> int:
    """Parse a timestamp token into integer epoch milliseconds.

    Naive ISO-8601 values are taken as UTC. Raises ValueError on bad input.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if fmt is TimestampFormat.ISO8601:
        iso = text[:-1] + "+00:00" if text[-1] in "Zz" else text
        dt = datetime.fromisoformat(iso)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
        return (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000
    if fmt is TimestampFormat.EPOCH_MS:
        return int(text) if text.lstrip("-").isdigit() else _finite_round(float(text))
    seconds = float(text)
    return int(text) * 1000 if text.lstrip("-").isdigit() else _finite_round(seconds * 1000.0)


def _finite_round(value: float) -> int:
    if not np.isfinite(value):
        raise ValueError("non-finite timestamp")
    return int(round(value))


def _detect_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _as_text_stream(source: IO[bytes] | IO[str]) -> IO[str]:
    sample = source.read(0)
    if isinstance(sample, bytes):
        return io.TextIOWrapper(source, encoding="utf-8-sig", newline="")  # type: ignore[arg-type]
    return source  # type: ignore[return-value]


def parse_event_log(source: IO[bytes] | IO[str], config: IngestConfig) -> ParseResult:
    """Read a header-bearing delimited event log.

    Rows failing the event/activity type filters are dropped silently.
    Rows with an empty required field or an unparseable timestamp or score
    are skipped and reported as RowError (line numbers count the header as 1).
    A header missing a mapped column raises ConfigError.
    """
    stream = _as_text_stream(source)
    header_line = stream.readline()
    if not header_line:
        raise ConfigError("event log is empty (no header line)")
    delimiter = _detect_delimiter(header_line)
    header = next(csv.reader([header_line], delimiter=delimiter))
    header = [h.strip().lstrip("﻿") for h in header]
    position = {name: i for i, name in enumerate(header)}
    missing = [col for col in config.column_map.values() if col not in position]
    if missing:
        raise ConfigError(f"event log header lacks mapped columns: {', '.join(missing)}")
    cols = {fieldname: position[col] for fieldname, col in config.column_map.items()}

    def cell(row: list[str], name: str) -> str | None:
        idx = cols.get(name)
        if idx is None or idx >= len(row):
            return None
        return row[idx].strip()

    records: list[EventRecord] = []
    errors: list[RowError] = []
    for lineno, row in enumerate(csv.reader(stream, delimiter=delimiter), start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        event_type = cell(row, "event_type") or None
        if config.event_type_filter is not None and event_type not in config.event_type_filter:
            continue
        activity_type = cell(row, "activity_type") or None
        if config.activity_type_filter is not None and activity_type not in config.activity_type_filter:
            continue

        student = cell(row, "student_id")
        activity = cell(row, "activity_id")
        if not student:
            errors.append(RowError(lineno, "empty student_id"))
            continue
        if not activity:
            errors.append(RowError(lineno, "empty activity_id"))
            continue
        raw_ts = cell(row, "timestamp") or ""
        try:
            ts = parse_timestamp(raw_ts, config.timestamp_format)
        except (ValueError, OverflowError):
            errors.append(RowError(lineno, f"unparseable timestamp {raw_ts!r}"))
            continue
        score: float | None = None
        raw_score = cell(row, "score")
        if raw_score:
            try:
                score = float(raw_score)
            except ValueError:
                errors.append(RowError(lineno, f"unparseable score {raw_score!r}"))
                continue
            if not 0.0 <= score <= 1.0:
                errors.append(RowError(lineno, f"score {score} outside [0, 1]"))
                continue
        records.append(
            EventRecord(
                student_id=student,
                activity_id=activity,
                timestamp_ms=ts,
                event_type=event_type,
                activity_type=activity_type,
                score=score,
                session_id=cell(row, "session_id") or None,
                rank=len(records),
            )
        )
    return ParseResult(records, errors)


def read_event_log(path: str | Path, config: IngestConfig) -> ParseResult:
    with open(path, "rb") as fh:
        return parse_event_log(fh, config)


class SequenceTable:
    """Per-student activity sequences over a dense activity catalog.

    ``entries`` holds ``(student_id, sequence)`` pairs sorted by student id;
    each sequence is a tuple of catalog indices. The catalog lists activity
    ids in order of first appearance when walking the entries in order.
    """

    __slots__ = ("entries", "catalog", "_index")

    def __init__(self, entries: Sequence[tuple[str, tuple[int, ...]]], catalog: Sequence[str]):
        self.entries: tuple[tuple[str, tuple[int, ...]], ...] = tuple(entries)
        self.catalog: tuple[str, ...] = tuple(catalog)
        self._index = {a: i for i, a in enumerate(self.catalog)}
        ids = [sid for sid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ParameterError("student ids must be unique")
        size = len(self.catalog)
        for _, seq in self.entries:
            if any(not 0 <= x < size for x in seq):
                raise ParameterError("sequence references an index outside the catalog")

    @classmethod
    def from_tokens(cls, pairs: Iterable[tuple[str, Sequence[str]]]) -> "SequenceTable":
        """Build a table from ``(student_id, [activity_id, ...])`` pairs."""
        ordered = sorted(((sid, list(tokens)) for sid, tokens in pairs), key=lambda p: p[0])
        index: dict[str, int] = {}
        entries = []
        for sid, tokens in ordered:
            entries.append((sid, tuple(index.setdefault(t, len(index)) for t in tokens)))
        return cls(entries, list(index))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SequenceTable):
            return NotImplemented
        return self.entries == other.entries and self.catalog == other.catalog

    def __repr__(self) -> str:
        return f"SequenceTable(students={len(self.entries)}, activities={len(self.catalog)})"

    @property
    def student_ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    @property
    def sequences(self) -> list[tuple[int, ...]]:
        return [seq for _, seq in self.entries]

    def index_of(self, activity_id: str) -> int:
        return self._index[activity_id]

    def tokens(self, seq: Sequence[int]) -> list[str]:
        return [self.catalog[i] for i in seq]

    def token_pairs(self) -> list[tuple[str, list[str]]]:
        return [(sid, self.tokens(seq)) for sid, seq in self.entries]

    def lengths(self) -> np.ndarray:
        return np.fromiter((len(s) for _, s in self.entries), dtype=np.int64, count=len(self.entries))

    def subset(self, positions: Iterable[int]) -> "SequenceTable":
        """Table restricted to the given entry positions; catalog recomputed."""
        pairs = self.token_pairs()
        return SequenceTable.from_tokens(pairs[i] for i in positions)

    def write_csv(self, target: IO[str]) -> None:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["student_id", "activity_ids"])
        for sid, tokens in self.token_pairs():
            writer.writerow([sid, SEQUENCE_SEPARATOR.join(tokens)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source: IO[str]) -> "SequenceTable":
        reader = csv.reader(source)
        header = next(reader, None)
        if header != ["student_id", "activity_ids"]:
            raise ConfigError(f"not a sequences file (header {header!r})")
        pairs = []
        for row in reader:
            if not row:
                continue
            sid, joined = row[0], row[1] if len(row) > 1 else ""
            pairs.append((sid, joined.split(SEQUENCE_SEPARATOR) if joined else []))
        return cls.from_tokens(pairs)


def extract_sequences(records: Sequence[EventRecord], config: IngestConfig | None = None) -> SequenceTable:
    """Group records per student and order each group by (timestamp, input rank)."""
    min_len = config.min_sequence_length if config is not None else 1
    groups: dict[str, list[tuple[int, int, str]]] = defaultdict(list)
    for pos, rec in enumerate(records):
        groups[rec.student_id].append((rec.timestamp_ms, pos, rec.activity_id))
    pairs = []
    for sid, events in groups.items():
        if len(events) < min_len:
            continue
        events.sort()
        pairs.append((sid, [activity for _, _, activity in events]))
    return SequenceTable.from_tokens(pairs)


def sample_students(table: SequenceTable, n: int, seed: int) -> SequenceTable:
    """Uniform sample of ``n`` students without replacement, deterministic in ``seed``."""
    if n < 1:
        raise ParameterError("sample size must be >= 1")
    if n >= len(table):
        return table
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(table), size=n, replace=False))
    return table.subset(chosen.tolist())


def build_sequence_table(source: IO[bytes] | IO[str], config: IngestConfig) -> tuple[SequenceTable, ParseResult]:
    """parse -> extract -> optional sample, the full ingestion path."""
    parsed = parse_event_log(source, config)
    table = extract_sequences(parsed.records, config)
    if config.sample_size is not None:
        table = sample_students(table, config.sample_size, config.sample_seed)
    return table, parsed
