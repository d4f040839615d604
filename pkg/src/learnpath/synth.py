"""Synthetic event logs with planted groups, for tests and benchmarks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import lru_cache
from typing import IO, Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import ParameterError
from .eventlog import SequenceTable
from .hac import ClusterAssignment, canonical_assignment

BASE_TIME = datetime(2016, 1, 1, tzinfo=timezone.utc)

# Length mean / SD of three usage tiers (light, medium, heavy).
TIER_MEANS = (2.80, 13.72, 44.85)
TIER_SDS = (1.91, 5.79, 18.91)


@dataclass(frozen=True)
class SynthGroup:
    student_count: int
    mean_length: float
    length_sd: float
    backbone: tuple[int, ...]
    deviation_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "backbone", tuple(int(b) for b in self.backbone))
        if self.student_count < 1:
            raise ParameterError("student_count must be positive")
        if not self.mean_length >= 1:
            raise ParameterError("mean_length must be >= 1")
        if not self.length_sd >= 0:
            raise ParameterError("length_sd must be non-negative")
        if not self.backbone:
            raise ParameterError("backbone must be non-empty")
        if not 0.0 <= self.deviation_rate <= 1.0:
            raise ParameterError("deviation_rate must be in [0, 1]")


@dataclass(frozen=True)
class SynthSpec:
    groups: tuple[SynthGroup, ...]
    alphabet_size: int
    seed: int = 0
    student_prefix: str = "s"
    activity_prefix: str = "A"

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ParameterError("at least one group is required")
        if self.alphabet_size < 1:
            raise ParameterError("alphabet_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in an unsigned 64-bit integer")
        for g in self.groups:
            if any(not 0 <= b < self.alphabet_size for b in g.backbone):
                raise ParameterError("backbone activity outside the alphabet")

    @property
    def student_total(self) -> int:
        return sum(g.student_count for g in self.groups)

    def activity_token(self, index: int) -> str:
        width = len(str(self.alphabet_size - 1))
        return f"{self.activity_prefix}{index:0{width}d}"

    def student_token(self, index: int) -> str:
        width = max(6, len(str(self.student_total - 1)))
        return f"{self.student_prefix}{index:0{width}d}"

    @classmethod
    def from_mapping(cls, raw: Mapping[str, object]) -> "SynthSpec":
        if raw.get("preset") == "tiered":
            kwargs = {k: v for k, v in raw.items() if k != "preset"}
            return tiered_spec(**kwargs)  # type: ignore[arg-type]
        try:
            groups = tuple(SynthGroup(**g) for g in raw["groups"])  # type: ignore[union-attr]
            extra = {k: raw[k] for k in ("seed", "student_prefix", "activity_prefix") if k in raw}
            return cls(groups=groups, alphabet_size=int(raw["alphabet_size"]), **extra)  # type: ignore[arg-type]
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"invalid synth spec: {exc}") from exc


def tiered_spec(
    seed: int = 0,
    counts: Sequence[int] = (300, 150, 100),
    deviation_rate: float = 0.15,
) -> SynthSpec:
    """Three usage tiers (light, medium, heavy), each on its own backbone.

    Backbones are disjoint ranges of a 200-activity alphabet with lengths
    30, 50 and 120, long enough that typical walks do not wrap.
    """
    bounds = ((0, 30), (30, 80), (80, 200))
    groups = tuple(
        SynthGroup(int(c), m, s, tuple(range(lo, hi)), deviation_rate)
        for c, m, s, (lo, hi) in zip(counts, TIER_MEANS, TIER_SDS, bounds)
    )
    return SynthSpec(groups=groups, alphabet_size=200, seed=seed)


def _discrete_moments(mu: float, sigma: float, support: np.ndarray) -> tuple[np.ndarray, float, float]:
    upper = stats.norm.cdf((support + 0.5 - mu) / sigma)
    lower = stats.norm.cdf((support - 0.5 - mu) / sigma)
    pmf = upper - lower
    pmf = pmf / pmf.sum()
    mean = float(pmf @ support)
    var = float(pmf @ (support - mean) ** 2)
    return pmf, mean, var


@lru_cache(maxsize=64)
def length_distribution(mean: float, sd: float) -> tuple[np.ndarray, np.ndarray]:
    """Lengths 1, 2, ... and their probabilities.

    A normal variate is rounded to the nearest integer and conditioned on
    being >= 1. Its latent location and scale are solved for so that the
    resulting integer distribution has exactly the requested mean and SD.
    """
    if sd == 0:
        k = max(1, int(round(mean)))
        return np.array([k], dtype=np.int64), np.array([1.0])
    support = np.arange(1, int(np.ceil(mean + 14 * sd)) + 2, dtype=np.float64)

    def residual(params: np.ndarray) -> np.ndarray:
        mu, log_sigma = params
        _, m, v = _discrete_moments(mu, float(np.exp(log_sigma)), support)
        return np.array([m - mean, np.sqrt(v) - sd])

    fit = optimize.least_squares(residual, x0=[mean, np.log(sd)], xtol=1e-14, ftol=1e-14, gtol=1e-14)
    if np.max(np.abs(fit.fun)) > 1e-6:
        raise ParameterError(f"no length distribution on {{1, 2, ...}} has mean {mean} and sd {sd}")
    pmf, _, _ = _discrete_moments(fit.x[0], float(np.exp(fit.x[1])), support)
    return support.astype(np.int64), pmf


def _student_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def generate_corpus(spec: SynthSpec) -> tuple[SequenceTable, ClusterAssignment]:
    """Sequences plus ground-truth group labels, deterministic in ``spec.seed``.

    Each student draws a length, then walks the group backbone (wrapping
    around if the length exceeds it); every step is independently replaced
    by a uniformly random activity with probability ``deviation_rate``.
    """
    pairs: list[tuple[str, list[str]]] = []
    truth: list[int] = []
    index = 0
    for g_id, group in enumerate(spec.groups):
        support, pmf = length_distribution(float(group.mean_length), float(group.length_sd))
        cdf = np.cumsum(pmf)
        backbone = np.asarray(group.backbone, dtype=np.int64)
        for _ in range(group.student_count):
            rng = _student_rng(spec.seed, index)
            pos = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(support) - 1)
            length = int(support[pos])
            steps = backbone[np.arange(length) % backbone.size]
            deviate = rng.random(length) < group.deviation_rate
            noise = rng.integers(0, spec.alphabet_size, size=length)
            walk = np.where(deviate, noise, steps)
            pairs.append((spec.student_token(index), [spec.activity_token(int(a)) for a in walk]))
            truth.append(g_id)
            index += 1
    table = SequenceTable.from_tokens(pairs)
    # Student tokens are zero-padded, so sorted table order equals generation order.
    return table, canonical_assignment(truth)


def write_event_log(table: SequenceTable, target: IO[str], event_type: str = "submit") -> None:
    """Emit the table as an ingestible event log, one second between a student's events."""
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(["student_id", "activity_id", "timestamp", "event_type"])
    for sid, tokens in table.token_pairs():
        for t, activity in enumerate(tokens):
            stamp = (BASE_TIME + timedelta(seconds=t)).strftime("%Y-%m-%dT%H:%M:%SZ")
            writer.writerow([sid, activity, stamp, event_type])


def event_log_text(table: SequenceTable, event_type: str = "submit") -> str:
    buf = io.StringIO()
    write_event_log(table, buf, event_type)
    return buf.getvalue()


@dataclass
class GroupLengthStats:
    group: int
    count: int
    mean: float
    sd: float
    target_mean: float
    target_sd: float
    standard_errors: float = field(init=False)

    def __post_init__(self) -> None:
        se = self.target_sd / np.sqrt(self.count) if self.count > 0 else np.inf
        self.standard_errors = abs(self.mean - self.target_mean) / se if se > 0 else (0.0 if self.mean == self.target_mean else np.inf)


def group_length_stats(spec: SynthSpec, table: SequenceTable, truth: ClusterAssignment) -> list[GroupLengthStats]:
    lengths = table.lengths().astype(np.float64)
    out = []
    for g, group in enumerate(spec.groups):
        ls = lengths[truth.labels == g]
        sd = float(ls.std(ddof=1)) if ls.size > 1 else 0.0
        out.append(GroupLengthStats(g, int(ls.size), float(ls.mean()), sd, group.mean_length, group.length_sd))
    return out
