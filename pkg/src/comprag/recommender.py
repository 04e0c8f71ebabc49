"""Reference out-of-model ranker: a desirability index from delivery metrics."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateKey, InvalidBounds, InvalidMetric, MissingColumn
from .evaluator import FiltrationList, ingest_filtration
from .hashing import canonical_key

METRIC_COLUMNS = ("object_key", "nps", "response_time_min", "review_score", "proximity_km")


@dataclass(frozen=True)
class MetricRecord:
    object_key: str
    nps: float
    response_time_min: float
    review_score: float
    proximity_km: float

    def __post_init__(self) -> None:
        if not self.object_key.strip():
            raise InvalidMetric("object_key must be non-empty")
        for name in METRIC_COLUMNS[1:]:
            if not math.isfinite(getattr(self, name)):
                raise InvalidMetric(f"{self.object_key}: {name} is not finite")
        if not -100 <= self.nps <= 100:
            raise InvalidMetric(f"{self.object_key}: nps {self.nps} outside [-100, 100]")
        if self.response_time_min <= 0:
            raise InvalidMetric(f"{self.object_key}: response_time_min must be positive")
        if not 0 <= self.review_score <= 5:
            raise InvalidMetric(f"{self.object_key}: review_score {self.review_score} outside [0, 5]")
        if self.proximity_km < 0:
            raise InvalidMetric(f"{self.object_key}: proximity_km must be nonnegative")


@dataclass(frozen=True)
class MetricWeights:
    nps: float = 0.25
    time: float = 0.25
    review: float = 0.25
    proximity: float = 0.25

    def __post_init__(self) -> None:
        ws = (self.nps, self.time, self.review, self.proximity)
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise ValueError("weights must be finite and nonnegative")
        if abs(math.fsum(ws) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {math.fsum(ws)}")


@dataclass(frozen=True)
class MetricBounds:
    """Normalization ranges; values outside are clamped."""

    nps: tuple[float, float] = (-100.0, 100.0)
    time: tuple[float, float] = (10.0, 60.0)
    review: tuple[float, float] = (0.0, 5.0)
    proximity: tuple[float, float] = (0.0, 10.0)

    def check(self) -> None:
        for name in ("nps", "time", "review", "proximity"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidBounds(f"{name} bounds must satisfy min < max, got ({lo}, {hi})")


def _norm(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


def desirability(
    m: MetricRecord,
    w: MetricWeights | None = None,
    bounds: MetricBounds | None = None,
) -> float:
    """Weighted sum of clamped min-max metrics; time and distance count inversely."""
    w = w or MetricWeights()
    bounds = bounds or MetricBounds()
    bounds.check()
    score = (
        w.nps * _norm(m.nps, bounds.nps)
        + w.time * (1.0 - _norm(m.response_time_min, bounds.time))
        + w.review * _norm(m.review_score, bounds.review)
        + w.proximity * (1.0 - _norm(m.proximity_km, bounds.proximity))
    )
    return min(1.0, max(0.0, score))


def build_filtration(
    records: Iterable[MetricRecord],
    w: MetricWeights | None = None,
    bounds: MetricBounds | None = None,
) -> FiltrationList:
    records = list(records)
    seen: set[str] = set()
    for r in records:
        ck = canonical_key(r.object_key)
        if ck in seen:
            raise DuplicateKey(f"duplicate object key {r.object_key!r}")
        seen.add(ck)
    return ingest_filtration((r.object_key, desirability(r, w, bounds)) for r in records)


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in METRIC_COLUMNS:
            if col not in header:
                raise MissingColumn(f"{path}: missing column {col!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(
                    MetricRecord(
                        object_key=row["object_key"],
                        nps=float(row["nps"]),
                        response_time_min=float(row["response_time_min"]),
                        review_score=float(row["review_score"]),
                        proximity_km=float(row["proximity_km"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise InvalidMetric(f"{path}:{lineno}: {exc}") from exc
    return records


def weights_from_mapping(data: Mapping[str, float]) -> MetricWeights:
    return MetricWeights(**{k: float(v) for k, v in data.items()})


def bounds_from_mapping(data: Mapping[str, Iterable[float]]) -> MetricBounds:
    out = {}
    for k, v in data.items():
        lo, hi = (float(x) for x in v)
        out[k] = (lo, hi)
    return MetricBounds(**out)
