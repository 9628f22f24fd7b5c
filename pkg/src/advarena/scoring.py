"""Distances, per-sample minima, and median model/attack scores.

Scores are medians so a single catastrophic run cannot dominate: a model
is scored by the median (over samples) of the smallest perturbation any
opponent attack found, an attack by the median perturbation it achieved
over all (sample, model) pairs. Failed runs enter at the conservative
upper bound `d_max` and carry the grey image as their registered artifact.

Distances are quantized to 9 significant decimal digits when a record is
created, which makes the append-only record log lossless and score
recomputation from the log exact.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .images import Image, grey_image

__all__ = [
    "FAILURE_KINDS",
    "RunRecord",
    "RecordSet",
    "ScoreTable",
    "l2_distance",
    "d_max",
    "quantize_distance",
    "valid_record",
    "failed_record",
    "min_distance_per_sample",
    "model_score",
    "attack_score",
    "score_table",
    "format_record_line",
    "parse_record_line",
]

FAILURE_KINDS = (
    "attack_error",
    "budget_exhausted_no_adversarial",
    "not_adversarial",
    "timeout",
)


def l2_distance(a: Image, b: Image) -> float:
    """Euclidean distance between two images of identical shape."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.flat().astype(np.float64) - b.flat().astype(np.float64)
    return float(np.linalg.norm(diff))


def d_max(shape: tuple[int, int, int]) -> float:
    """Largest possible L2 distance between unit-range images of `shape`."""
    h, w, c = shape
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"invalid shape {shape}")
    return math.sqrt(h * w * c)


def quantize_distance(distance: float) -> float:
    """Round to the 9 significant digits the record log carries."""
    return float(f"{distance:.9g}")


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one attack against one model on one sample.

    `valid` is true iff the attack's returned image was confirmed
    adversarial by the referee; otherwise `failure_kind` names why and the
    distance is the conservative upper bound for the image shape.
    """

    model_id: str
    attack_id: str
    sample_id: str
    distance: float
    queries_used: int
    valid: bool
    failure_kind: str | None = None
    artifact: Image | None = None
    artifact_path: str | None = None

    def __post_init__(self):
        if self.distance < 0.0 or not math.isfinite(self.distance):
            raise ValueError(f"distance must be finite and >= 0, got {self.distance}")
        if self.queries_used < 0:
            raise ValueError(f"queries_used must be >= 0, got {self.queries_used}")
        if self.valid and self.failure_kind is not None:
            raise ValueError("valid record cannot carry a failure_kind")
        if not self.valid:
            if self.failure_kind not in FAILURE_KINDS:
                raise ValueError(f"unknown failure_kind {self.failure_kind!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.model_id, self.attack_id, self.sample_id)


def valid_record(model_id: str, attack_id: str, sample_id: str, *,
                 original: Image, adversarial: Image,
                 queries_used: int) -> RunRecord:
    """Record for a referee-confirmed adversarial."""
    distance = quantize_distance(l2_distance(original, adversarial))
    bound = d_max(original.shape)
    if distance >= bound:
        raise ValueError(
            f"confirmed adversarial at distance {distance} >= d_max {bound}"
        )
    return RunRecord(
        model_id=model_id,
        attack_id=attack_id,
        sample_id=sample_id,
        distance=distance,
        queries_used=queries_used,
        valid=True,
        artifact=adversarial,
    )


def failed_record(model_id: str, attack_id: str, sample_id: str, *,
                  failure_kind: str, queries_used: int,
                  shape: tuple[int, int, int]) -> RunRecord:
    """Record for a failed run: scored at d_max, grey image registered."""
    return RunRecord(
        model_id=model_id,
        attack_id=attack_id,
        sample_id=sample_id,
        distance=quantize_distance(d_max(shape)),
        queries_used=queries_used,
        valid=False,
        failure_kind=failure_kind,
        artifact=grey_image(shape),
    )


class RecordSet:
    """Run records indexed by (model_id, attack_id, sample_id), one each."""

    def __init__(self, records=()):
        self._by_key: dict[tuple[str, str, str], RunRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, record: RunRecord) -> None:
        if record.key in self._by_key:
            raise ValueError(f"duplicate record for {record.key}")
        self._by_key[record.key] = record

    def extend(self, records) -> None:
        for rec in records:
            self.add(rec)

    def get(self, model_id: str, attack_id: str, sample_id: str) -> RunRecord:
        try:
            return self._by_key[(model_id, attack_id, sample_id)]
        except KeyError:
            raise KeyError(
                f"no record for model={model_id} attack={attack_id} "
                f"sample={sample_id}"
            ) from None

    def has(self, model_id: str, attack_id: str, sample_id: str) -> bool:
        return (model_id, attack_id, sample_id) in self._by_key

    def __iter__(self):
        return iter(self._by_key.values())

    def __len__(self) -> int:
        return len(self._by_key)


def _median(values) -> float:
    # Even-length convention: arithmetic mean of the two middle order stats.
    return float(statistics.median(values))


def min_distance_per_sample(records: RecordSet, model_id: str, sample_id: str,
                            attack_ids) -> float:
    """Smallest recorded distance over the attack set for one (model, sample)."""
    attack_ids = list(attack_ids)
    if not attack_ids:
        raise ValueError("attack set must be non-empty")
    return min(
        records.get(model_id, a, sample_id).distance for a in attack_ids
    )


def model_score(records: RecordSet, model_id: str, attack_ids,
                sample_ids) -> float:
    """Median over samples of the per-sample minimum distance; higher is better."""
    sample_ids = list(sample_ids)
    if not sample_ids:
        raise ValueError("sample set must be non-empty")
    minima = [
        min_distance_per_sample(records, model_id, s, attack_ids)
        for s in sample_ids
    ]
    return _median(minima)


def attack_score(records: RecordSet, attack_id: str, model_ids,
                 sample_ids) -> float:
    """Median of achieved distances over all (sample, model) pairs; lower is better."""
    model_ids = list(model_ids)
    sample_ids = list(sample_ids)
    if not model_ids or not sample_ids:
        raise ValueError("model and sample sets must be non-empty")
    distances = [
        records.get(m, attack_id, s).distance
        for s in sample_ids
        for m in model_ids
    ]
    return _median(distances)


@dataclass(frozen=True)
class ScoreTable:
    """Scores for a cohort of models and attacks against fixed opponent pools."""

    model_scores: dict[str, float]
    attack_scores: dict[str, float]
    sample_count: int
    attack_pool: tuple[str, ...]
    model_pool: tuple[str, ...]


def score_table(records: RecordSet, model_ids, attack_ids, sample_ids, *,
                attack_pool=None, model_pool=None) -> ScoreTable:
    """Score every model against `attack_pool` and every attack against
    `model_pool` (each defaulting to the full opposing cohort)."""
    model_ids = list(model_ids)
    attack_ids = list(attack_ids)
    sample_ids = list(sample_ids)
    attack_pool = tuple(attack_pool if attack_pool is not None else attack_ids)
    model_pool = tuple(model_pool if model_pool is not None else model_ids)
    return ScoreTable(
        model_scores={
            m: model_score(records, m, attack_pool, sample_ids)
            for m in model_ids
        },
        attack_scores={
            a: attack_score(records, a, model_pool, sample_ids)
            for a in attack_ids
        },
        sample_count=len(sample_ids),
        attack_pool=attack_pool,
        model_pool=model_pool,
    )


def format_record_line(round_id: str, record: RunRecord) -> str:
    return "\t".join(
        [
            round_id,
            record.model_id,
            record.attack_id,
            record.sample_id,
            f"{record.distance:.9g}",
            str(record.queries_used),
            "1" if record.valid else "0",
            record.failure_kind or "-",
            record.artifact_path or "-",
        ]
    )


def parse_record_line(line: str) -> tuple[str, RunRecord]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 9:
        raise ValueError(f"record line has {len(parts)} fields, expected 9")
    round_id, model_id, attack_id, sample_id = parts[:4]
    record = RunRecord(
        model_id=model_id,
        attack_id=attack_id,
        sample_id=sample_id,
        distance=float(parts[4]),
        queries_used=int(parts[5]),
        valid=parts[6] == "1",
        failure_kind=None if parts[7] == "-" else parts[7],
        artifact_path=None if parts[8] == "-" else parts[8],
    )
    return round_id, record
