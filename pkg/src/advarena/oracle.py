"""The decision interface between attacks and models.

Attacks never see a model object: they see a `QueryMeter` wrapping a
`DecisionOracle`, which forwards at most `budget` label queries per
(attack, model, sample) run and absorbs model failures into verdicts.
A model error or per-query timeout means the input was "not classified",
which by the arena rules counts as a misclassification for untargeted
attacks but never satisfies a targeted attack.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .images import Image, Sample

__all__ = [
    "DecisionOracle",
    "Verdict",
    "QueryMeter",
    "metered_predict",
    "is_adversarial",
    "verdict_is_adversarial",
    "raw_verdict",
    "check_determinism",
    "check_statelessness",
    "ComplianceReport",
]

VERDICT_ERRORS = ("budget_exhausted", "model_error", "timeout", "invalid_input")

DEFAULT_QUERY_BUDGET = 1000
DEFAULT_QUERY_TIMEOUT = 0.1


class DecisionOracle:
    """A classifier exposing only its final label decision.

    Implementations provide `shape`, `num_classes`, and `predict`; they
    must be deterministic and stateless (same image, same label, always).
    """

    shape: tuple[int, int, int]
    num_classes: int

    def predict(self, image: Image) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class Verdict:
    """Either a class label or one error, never both."""

    label: int | None = None
    error: str | None = None

    def __post_init__(self):
        if (self.label is None) == (self.error is None):
            raise ValueError("exactly one of label/error must be set")
        if self.error is not None and self.error not in VERDICT_ERRORS:
            raise ValueError(f"unknown verdict error {self.error!r}")

    @property
    def ok(self) -> bool:
        return self.error is None


def _call_oracle(oracle: DecisionOracle, image: Image,
                 timeout: float | None) -> Verdict:
    start = time.monotonic()
    try:
        label = int(oracle.predict(image))
    except TimeoutError:
        return Verdict(error="timeout")
    except Exception:
        return Verdict(error="model_error")
    if timeout is not None and time.monotonic() - start > timeout:
        return Verdict(error="timeout")
    if not 0 <= label < oracle.num_classes:
        return Verdict(error="model_error")
    return Verdict(label=label)


def raw_verdict(oracle: DecisionOracle, image: Image,
                timeout: float | None = None) -> Verdict:
    """Unmetered oracle call with the same error absorption as the meter.

    Used by the referee to confirm returned candidates without charging
    the attack's budget.
    """
    if image.shape != tuple(oracle.shape):
        return Verdict(error="invalid_input")
    return _call_oracle(oracle, image, timeout)


class QueryMeter:
    """Per-run budget enforcement around a DecisionOracle.

    `used` counts forwarded predictions only; the (budget+1)-th query is
    refused with a budget_exhausted verdict and never reaches the model.
    Invalid inputs are rejected without consuming budget.
    """

    def __init__(self, oracle: DecisionOracle, budget: int = DEFAULT_QUERY_BUDGET,
                 query_timeout: float | None = DEFAULT_QUERY_TIMEOUT):
        if budget < 0:
            raise ValueError(f"budget must be >= 0, got {budget}")
        self.oracle = oracle
        self.budget = budget
        self.query_timeout = query_timeout
        self.used = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.oracle.shape)

    @property
    def num_classes(self) -> int:
        return self.oracle.num_classes

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def predict(self, image: Image) -> Verdict:
        if image.shape != self.shape:
            return Verdict(error="invalid_input")
        if self.used >= self.budget:
            return Verdict(error="budget_exhausted")
        self.used += 1
        return _call_oracle(self.oracle, image, self.query_timeout)


def metered_predict(meter: QueryMeter, image: Image) -> Verdict:
    return meter.predict(image)


def verdict_is_adversarial(verdict: Verdict, sample: Sample, task: str) -> bool:
    """Apply the adversariality rule to a verdict.

    Untargeted: any label other than the true one, or a model error /
    timeout ("not classified"), is adversarial. Targeted: only the target
    label counts; errors never do.
    """
    if task == "untargeted":
        if verdict.error in ("model_error", "timeout"):
            return True
        return verdict.ok and verdict.label != sample.true_label
    if task == "targeted":
        if sample.target_label is None:
            raise ValueError(f"sample {sample.sample_id} has no target label")
        return verdict.ok and verdict.label == sample.target_label
    raise ValueError(f"unknown task {task!r}")


def is_adversarial(meter: QueryMeter, sample: Sample, candidate: Image,
                   task: str) -> bool:
    """Metered adversariality check; consumes one query on valid input.

    Budget exhaustion and invalid input both report False: the attack
    learned nothing that confirms a success.
    """
    return verdict_is_adversarial(meter.predict(candidate), sample, task)


@dataclass(frozen=True)
class ComplianceReport:
    check: str
    passed: bool
    failures: tuple[str, ...] = ()

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        lines = [f"{self.check}: {status}"]
        lines.extend(f"  {f}" for f in self.failures)
        return "\n".join(lines)


def _stable_label(oracle: DecisionOracle, image: Image) -> object:
    v = raw_verdict(oracle, image)
    return v.label if v.ok else f"error:{v.error}"


def check_determinism(oracle: DecisionOracle, probe_images,
                      repeats: int = 3) -> ComplianceReport:
    """Replay each probe `repeats` times back to back, then sweep the set
    once more interleaved; flag any label change.

    Consecutive replays defeat call-counter cycles whose period divides an
    interleaved stride; the final sweep catches slower drift.
    """
    probes = list(probe_images)
    if not probes:
        raise ValueError("need at least one probe image")
    if repeats < 2:
        raise ValueError("need at least 2 repeats")
    baseline = []
    failures = []
    for idx, img in enumerate(probes):
        first = _stable_label(oracle, img)
        baseline.append(first)
        for _ in range(repeats - 1):
            label = _stable_label(oracle, img)
            if label != first:
                failures.append(f"probe {idx}: label {first} then {label}")
    for idx, img in enumerate(probes):
        label = _stable_label(oracle, img)
        if label != baseline[idx]:
            failures.append(
                f"probe {idx}: label {baseline[idx]} then {label}"
            )
    return ComplianceReport(
        check="determinism", passed=not failures, failures=tuple(sorted(set(failures)))
    )


def check_statelessness(oracle: DecisionOracle, probe: Image,
                        context_sequences) -> ComplianceReport:
    """Query a context sequence, then the probe; the probe's label must not
    depend on which context preceded it."""
    contexts = [list(seq) for seq in context_sequences]
    if len(contexts) < 2:
        raise ValueError("need at least 2 context sequences")
    labels = []
    for ctx in contexts:
        for img in ctx:
            raw_verdict(oracle, img)
        labels.append(_stable_label(oracle, probe))
    failures = []
    if len(set(map(str, labels))) > 1:
        failures.append(f"probe label varies with context: {labels}")
    return ComplianceReport(
        check="statelessness", passed=not failures, failures=tuple(failures)
    )
