"""The referee: executes (model, attack, sample) runs under budget and
deadline, confirms returned candidates unmetered, and emits RunRecords.

Failure taxonomy applied here:
  - the attack raised             -> attack_error
  - deadline hit, nothing found   -> timeout
  - no candidate otherwise        -> budget_exhausted_no_adversarial
  - candidate fails referee check -> not_adversarial
All failures are scored at D_max with the grey image registered as the
artifact.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .attacks import Attack, AttackContext, DeadlineExceeded, OutOfBudget
from .images import Sample
from .oracle import (DecisionOracle, QueryMeter, raw_verdict,
                     verdict_is_adversarial)
from .rng import RngKey
from .scoring import RunRecord, failed_record, l2_distance, valid_record

__all__ = ["EvalSettings", "run_single", "evaluate_pair"]


@dataclass(frozen=True)
class EvalSettings:
    budget: int = 1000
    query_timeout: float | None = 0.1
    sample_deadline: float | None = 90.0
    refine_steps: int = 12
    workers: int = 1


def _artifact_name(model_id: str, attack_id: str, sample_id: str) -> str:
    return f"{model_id}__{attack_id}__{sample_id}.avt1"


def run_single(model: DecisionOracle, model_id: str, attack: Attack,
               sample: Sample, run_key: RngKey,
               settings: EvalSettings = EvalSettings()) -> RunRecord:
    """One attack run on one sample, refereed."""
    meter = QueryMeter(model, settings.budget, settings.query_timeout)
    deadline_at = (time.monotonic() + settings.sample_deadline
                   if settings.sample_deadline is not None else None)
    ctx = AttackContext(meter, sample, attack.task, run_key,
                        deadline_at=deadline_at,
                        refine_steps=settings.refine_steps)
    failure = None
    candidate = None
    try:
        candidate = attack.run(ctx).candidate
    except OutOfBudget:
        failure = "budget_exhausted_no_adversarial"
    except DeadlineExceeded:
        failure = "timeout"
    except Exception:
        failure = "attack_error"
    if failure is None and candidate is None:
        expired = deadline_at is not None and time.monotonic() > deadline_at
        failure = "timeout" if expired else "budget_exhausted_no_adversarial"
    if failure is None:
        verdict = raw_verdict(model, candidate, settings.query_timeout)
        if verdict_is_adversarial(verdict, sample, attack.task):
            return valid_record(model_id, attack.attack_id, sample.sample_id,
                                original=sample.image, adversarial=candidate,
                                queries_used=meter.used)
        failure = "not_adversarial"
    return failed_record(model_id, attack.attack_id, sample.sample_id,
                         failure_kind=failure, queries_used=meter.used,
                         shape=sample.image.shape)


def evaluate_pair(model: DecisionOracle, model_id: str, attack: Attack,
                  samples, base_key: RngKey,
                  settings: EvalSettings = EvalSettings(),
                  artifact_dir: Path | None = None,
                  artifact_prefix: str = "") -> list[RunRecord]:
    """Run one attack against one model over a sample set.

    Each run draws its own stream from `base_key`, so results do not
    depend on scheduling order. Artifacts (the adversarial, or the grey
    fallback) are written when `artifact_dir` is given, and records then
    carry `artifact_prefix + filename` as their path.
    """
    samples = list(samples)

    def one(sample: Sample) -> RunRecord:
        run_key = base_key.child(model_id, attack.attack_id, sample.sample_id)
        return run_single(model, model_id, attack, sample, run_key, settings)

    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            records = list(pool.map(one, samples))
    else:
        records = [one(s) for s in samples]

    if artifact_dir is not None:
        from .tensorio import save_image

        artifact_dir.mkdir(parents=True, exist_ok=True)
        stamped = []
        for rec in records:
            name = _artifact_name(rec.model_id, rec.attack_id, rec.sample_id)
            save_image(rec.artifact, artifact_dir / name)
            stamped.append(replace(rec, artifact_path=artifact_prefix + name))
        records = stamped
    return records
