"""Baseline decision-based attacks.

Every attack sees the model only through a metered oracle handle and
hunts for the smallest-L2 adversarial it can confirm. Running out of
queries or time mid-search is normal, not an error: the attack returns
the best verified candidate found so far (possibly none).

All randomness flows from the context's stream key, so a run is fully
determined by (sample, model, seed, budget).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .images import Image, Sample, make_image
from .oracle import QueryMeter, verdict_is_adversarial
from .rng import RngKey
from .scoring import l2_distance

__all__ = [
    "OutOfBudget",
    "DeadlineExceeded",
    "AttackContext",
    "AttackResult",
    "Attack",
    "binary_search_refine",
    "additive_gaussian_attack",
    "salt_and_pepper_attack",
    "pointwise_attack",
    "boundary_attack",
    "interpolation_attack",
    "transfer_attack_single_step",
    "transfer_attack_iterative",
    "builtin_attacks",
]

DEFAULT_REFINE_STEPS = 12
DEFAULT_BOUNDARY_ITERATIONS = 200
DEFAULT_PGD_STEPS = 10
MAX_START_DRAWS = 50


class OutOfBudget(Exception):
    """Raised inside an attack when the meter refuses further queries."""


class DeadlineExceeded(Exception):
    """Raised inside an attack when its wall-clock allowance is spent."""


@dataclass
class AttackContext:
    """Everything an attack may touch: the metered oracle, the sample,
    the task, a private random stream, and a wall-clock deadline."""

    meter: QueryMeter
    sample: Sample
    task: str  # "untargeted" | "targeted"
    rng: RngKey
    deadline_at: float | None = None  # absolute time.monotonic() value
    refine_steps: int = DEFAULT_REFINE_STEPS

    def __post_init__(self):
        if self.task not in ("untargeted", "targeted"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "targeted" and self.sample.target_label is None:
            raise ValueError("targeted context requires a target label")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.sample.image.shape

    @property
    def queries_used(self) -> int:
        return self.meter.used

    def check_deadline(self) -> None:
        if self.deadline_at is not None and time.monotonic() > self.deadline_at:
            raise DeadlineExceeded

    def is_adversarial(self, candidate: Image) -> bool:
        """One metered query; raises OutOfBudget instead of guessing."""
        self.check_deadline()
        verdict = self.meter.predict(candidate)
        if verdict.error == "budget_exhausted":
            raise OutOfBudget
        return verdict_is_adversarial(verdict, self.sample, self.task)


@dataclass(frozen=True)
class AttackResult:
    candidate: Image | None
    queries_used: int
    trace: tuple[tuple[int, float], ...] = ()

    @property
    def succeeded(self) -> bool:
        return self.candidate is not None


class _Best:
    """Keeps the closest verified adversarial and its improvement trace."""

    def __init__(self, ctx: AttackContext):
        self.ctx = ctx
        self.image: Image | None = None
        self.distance = float("inf")
        self.trace: list[tuple[int, float]] = []

    def consider(self, candidate: Image) -> None:
        dist = l2_distance(self.ctx.sample.image, candidate)
        if dist < self.distance:
            self.image = candidate
            self.distance = dist
            self.trace.append((self.ctx.queries_used, dist))

    def finish(self) -> AttackResult:
        if self.image is not None:
            refined = binary_search_refine(self.ctx, self.image)
            self.consider(refined)
        return AttackResult(self.image, self.ctx.queries_used,
                            tuple(self.trace))


def _to_image(flat: np.ndarray, shape: tuple[int, int, int]) -> Image:
    return make_image(np.clip(flat, 0.0, 1.0).reshape(shape))


def _flat64(image: Image) -> np.ndarray:
    return image.flat().astype(np.float64)


def binary_search_refine(ctx: AttackContext, adversarial_point: Image,
                         steps: int | None = None) -> Image:
    """Bisect the segment sample -> adversarial_point toward the sample.

    Returns the closest in-segment point that verified adversarial; on
    budget or deadline exhaustion, whatever was verified so far. Never
    returns a non-adversarial.
    """
    if steps is None:
        steps = ctx.refine_steps
    x = _flat64(ctx.sample.image)
    z = _flat64(adversarial_point)
    best = adversarial_point
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = (lo + hi) / 2.0
        candidate = _to_image(x + mid * (z - x), ctx.shape)
        try:
            ok = ctx.is_adversarial(candidate)
        except (OutOfBudget, DeadlineExceeded):
            break
        if ok:
            hi = mid
            best = candidate
        else:
            lo = mid
    return best


def _require_task(ctx: AttackContext, task: str, name: str) -> None:
    if ctx.task != task:
        raise ValueError(f"{name} is a {task} attack, context is {ctx.task}")


def additive_gaussian_attack(ctx: AttackContext) -> AttackResult:
    """Escalating ladder of L2 noise scales; fresh seeded draw per rung."""
    _require_task(ctx, "untargeted", "additive_gaussian_attack")
    best = _Best(ctx)
    x = _flat64(ctx.sample.image)
    dim = x.size
    d_max = float(np.sqrt(dim))
    scales = [0.01 * d_max * 2.0 ** j for j in range(9)]  # up to 2.56*D_max
    gen = ctx.rng.child("gaussian").generator()
    try:
        while best.image is None:
            for eps in scales:
                eta = gen.standard_normal(dim)
                norm = float(np.linalg.norm(eta))
                if norm == 0.0:
                    continue
                candidate = _to_image(x + eps * eta / norm, ctx.shape)
                if ctx.is_adversarial(candidate):
                    best.consider(candidate)
                    break
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


def _salt_pepper_at(x: np.ndarray, positions: np.ndarray,
                    polarity: np.ndarray, count: int,
                    shape: tuple[int, int, int]) -> Image:
    flat = x.copy()
    flat[positions[:count]] = polarity[:count]
    return _to_image(flat, shape)


def salt_and_pepper_attack(ctx: AttackContext, trials: int = 10) -> AttackResult:
    """Force a growing prefix of shuffled pixels to 0 or 1, then bisect
    the prefix length. Distance is monotone in the prefix, so the
    bisection is sound."""
    _require_task(ctx, "untargeted", "salt_and_pepper_attack")
    best = _Best(ctx)
    x = _flat64(ctx.sample.image)
    dim = x.size
    gen = ctx.rng.child("salt-pepper").generator()
    counts = [1]
    while counts[-1] < dim:
        counts.append(min(counts[-1] * 2, dim))
    try:
        for trial in range(trials):
            positions = gen.permutation(dim)
            polarity = gen.integers(0, 2, dim).astype(np.float64)
            ladder = [0] + counts if trial == 0 else counts
            hit = None
            prev_fail = 0
            for count in ladder:
                candidate = _salt_pepper_at(x, positions, polarity, count,
                                            ctx.shape)
                if ctx.is_adversarial(candidate):
                    hit = count
                    best.consider(candidate)
                    break
                prev_fail = count
            if hit is None:
                continue
            lo, hi = prev_fail, hit
            while hi - lo > 1:
                mid = (lo + hi) // 2
                candidate = _salt_pepper_at(x, positions, polarity, mid,
                                            ctx.shape)
                if ctx.is_adversarial(candidate):
                    hi = mid
                    best.consider(candidate)
                else:
                    lo = mid
            break
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


def pointwise_attack(ctx: AttackContext,
                     starting_point: Image | None = None) -> AttackResult:
    """Greedy sweeps resetting perturbed pixels back to their original
    values, keeping each reset only if the image stays adversarial."""
    best = _Best(ctx)
    if starting_point is None:
        if ctx.task == "targeted":
            raise ValueError(
                "targeted pointwise_attack needs an adversarial starting point"
            )
        seed_result = salt_and_pepper_attack(ctx)
        if seed_result.candidate is None:
            return AttackResult(None, ctx.queries_used, seed_result.trace)
        starting_point = seed_result.candidate
    best.consider(starting_point)
    x = _flat64(ctx.sample.image)
    current = _flat64(starting_point)
    gen = ctx.rng.child("pointwise").generator()
    try:
        changed = True
        while changed:
            changed = False
            perturbed = np.flatnonzero(current != x)
            if perturbed.size == 0:
                break
            for i in gen.permutation(perturbed):
                old = current[i]
                current[i] = x[i]
                candidate = _to_image(current, ctx.shape)
                if ctx.is_adversarial(candidate):
                    best.consider(candidate)
                    changed = True
                else:
                    current[i] = old
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


def _boundary_start(ctx: AttackContext, gen: np.random.Generator,
                    pool: list[Image] | None) -> Image | None:
    if ctx.task == "targeted":
        for image in (pool or [])[:MAX_START_DRAWS]:
            if ctx.is_adversarial(image):
                return image
        return None
    dim = int(np.prod(ctx.shape))
    for _ in range(MAX_START_DRAWS):
        candidate = _to_image(gen.uniform(0.0, 1.0, dim), ctx.shape)
        if ctx.is_adversarial(candidate):
            return candidate
    return None


def boundary_attack(ctx: AttackContext,
                    iterations: int = DEFAULT_BOUNDARY_ITERATIONS,
                    pool: list[Image] | None = None) -> AttackResult:
    """Random walk along the decision boundary: orthogonal proposal on the
    sphere around the sample, then contraction toward it, with both step
    sizes adapted multiplicatively from recent acceptance rates."""
    best = _Best(ctx)
    gen = ctx.rng.child("boundary").generator()
    try:
        start = _boundary_start(ctx, gen, pool)
        if start is None:
            return AttackResult(None, ctx.queries_used)
        best.consider(start)
        x = _flat64(ctx.sample.image)
        adv = _flat64(start)
        delta, alpha = 0.1, 0.01
        orth_tries = orth_hits = 0
        contr_tries = contr_hits = 0
        for it in range(iterations):
            direction = x - adv
            dist = float(np.linalg.norm(direction))
            if dist == 0.0:
                break
            dirhat = direction / dist
            eta = gen.standard_normal(x.size)
            eta -= (eta @ dirhat) * dirhat
            eta_norm = float(np.linalg.norm(eta))
            if eta_norm == 0.0:
                continue
            # same-distance proposal: perturb orthogonally, reproject onto
            # the sphere of radius dist around the sample, clip to the box
            # (clipping never moves a point away from an in-box sample)
            spherical = adv + (delta * dist / eta_norm) * eta
            rel = spherical - x
            rel_norm = float(np.linalg.norm(rel))
            if rel_norm == 0.0:
                continue
            spherical_img = _to_image(x + rel * (dist / rel_norm), ctx.shape)
            orth_tries += 1
            if ctx.is_adversarial(spherical_img):
                orth_hits += 1
                sph = _flat64(spherical_img)
                contracted_img = _to_image(x + (1.0 - alpha) * (sph - x),
                                           ctx.shape)
                contr_tries += 1
                if ctx.is_adversarial(contracted_img):
                    contr_hits += 1
                    adv = _flat64(contracted_img)
                    best.consider(contracted_img)
                else:
                    adv = sph
                    best.consider(spherical_img)
            if (it + 1) % 10 == 0:
                if orth_tries:
                    rate = orth_hits / orth_tries
                    delta = delta * 1.5 if rate > 0.5 else (
                        delta / 1.5 if rate < 0.5 else delta)
                    delta = min(max(delta, 1e-5), 2.0)
                if contr_tries:
                    rate = contr_hits / contr_tries
                    alpha = alpha * 1.5 if rate > 0.25 else (
                        alpha / 1.5 if rate < 0.25 else alpha)
                    alpha = min(max(alpha, 1e-5), 0.5)
                orth_tries = orth_hits = 0
                contr_tries = contr_hits = 0
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


def interpolation_attack(ctx: AttackContext, pool: list[Image],
                         pool_cap: int = 20) -> AttackResult:
    """Blend toward pool images of the target class, bisecting each blend
    for the smallest mix that still reads as the target."""
    _require_task(ctx, "targeted", "interpolation_attack")
    best = _Best(ctx)
    try:
        if ctx.is_adversarial(ctx.sample.image):
            best.consider(ctx.sample.image)
            return AttackResult(best.image, ctx.queries_used,
                                tuple(best.trace))
        for image in pool[:pool_cap]:
            if ctx.is_adversarial(image):
                best.consider(image)
                best.consider(binary_search_refine(ctx, image))
    except (OutOfBudget, DeadlineExceeded):
        pass
    if best.image is None:
        return AttackResult(None, ctx.queries_used)
    return best.finish()


_EPS_LADDER_RUNGS = 9  # D_max/256 ... D_max, doubling


def _bisect_epsilon(ctx: AttackContext, best: _Best,
                    candidate_at: Callable[[float], Image]) -> None:
    """Find the smallest scale whose candidate fools the true model:
    ladder scan up, then bisection inside the bracket."""
    x = _flat64(ctx.sample.image)
    d_max = float(np.sqrt(x.size))
    hit = None
    prev_fail = 0.0
    for j in range(_EPS_LADDER_RUNGS):
        eps = d_max * 2.0 ** (j - _EPS_LADDER_RUNGS + 1)
        candidate = candidate_at(eps)
        if ctx.is_adversarial(candidate):
            hit = eps
            best.consider(candidate)
            break
        prev_fail = eps
    if hit is None:
        return
    lo, hi = prev_fail, hit
    for _ in range(10):
        mid = (lo + hi) / 2.0
        candidate = candidate_at(mid)
        if ctx.is_adversarial(candidate):
            hi = mid
            best.consider(candidate)
        else:
            lo = mid


def transfer_attack_single_step(ctx: AttackContext,
                                substitute) -> AttackResult:
    """One substitute-gradient direction, scaled until the true model
    flips; only the true model is ever queried through the meter."""
    _require_task(ctx, "untargeted", "transfer_attack_single_step")
    gradient = substitute.loss_gradient(ctx.sample.image,
                                        ctx.sample.true_label)
    norm = float(np.linalg.norm(gradient))
    if norm == 0.0:
        return AttackResult(None, ctx.queries_used)
    ghat = gradient / norm
    x = _flat64(ctx.sample.image)
    best = _Best(ctx)
    try:
        _bisect_epsilon(ctx, best,
                        lambda eps: _to_image(x + eps * ghat, ctx.shape))
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


def transfer_attack_iterative(ctx: AttackContext, substitute,
                              steps: int = DEFAULT_PGD_STEPS) -> AttackResult:
    """Projected gradient iteration on the substitute inside an L2 ball,
    with the ball radius bisected against the true model."""
    _require_task(ctx, "untargeted", "transfer_attack_iterative")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = _flat64(ctx.sample.image)
    label = ctx.sample.true_label
    first_grad = substitute.loss_gradient(ctx.sample.image, label)
    if float(np.linalg.norm(first_grad)) == 0.0:
        return AttackResult(None, ctx.queries_used)

    def candidate_at(eps: float) -> Image:
        current = x.copy()
        for _ in range(steps):
            gradient = substitute.loss_gradient_array(current, label)
            norm = float(np.linalg.norm(gradient))
            if norm == 0.0:
                break
            current = np.clip(current + (eps / steps) * gradient / norm,
                              0.0, 1.0)
            offset = current - x
            offset_norm = float(np.linalg.norm(offset))
            if offset_norm > eps:
                current = x + offset * (eps / offset_norm)
        return _to_image(current, ctx.shape)

    best = _Best(ctx)
    try:
        _bisect_epsilon(ctx, best, candidate_at)
    except (OutOfBudget, DeadlineExceeded):
        pass
    return best.finish()


@dataclass(frozen=True)
class Attack:
    """A named, fully-wired attack: hyperparameters and any side resources
    (substitute model, image pools) are already bound in `run`."""

    attack_id: str
    task: str
    run: Callable[[AttackContext], AttackResult] = field(repr=False)


def _targeted_pointwise(pool_by_class) -> Callable[[AttackContext], AttackResult]:
    def run(ctx: AttackContext) -> AttackResult:
        pool = pool_by_class.get(ctx.sample.target_label, [])
        seed_result = interpolation_attack(ctx, pool)
        if seed_result.candidate is None:
            return seed_result
        return pointwise_attack(ctx, starting_point=seed_result.candidate)

    return run


def builtin_attacks(substitute=None, pool_by_class=None,
                    boundary_iterations: int = DEFAULT_BOUNDARY_ITERATIONS,
                    pgd_steps: int = DEFAULT_PGD_STEPS) -> list[Attack]:
    """The baseline attack suite.

    `substitute` (a gradient-capable model) enables the transfer attacks;
    `pool_by_class` (label -> list of images from the attacker-visible
    split) enables the targeted attacks.
    """
    attacks = [
        Attack("gaussian", "untargeted", additive_gaussian_attack),
        Attack("salt-pepper", "untargeted", salt_and_pepper_attack),
        Attack("pointwise", "untargeted", pointwise_attack),
        Attack("boundary", "untargeted",
               lambda ctx: boundary_attack(ctx, boundary_iterations)),
    ]
    if substitute is not None:
        attacks.append(Attack(
            "transfer-step", "untargeted",
            lambda ctx: transfer_attack_single_step(ctx, substitute)))
        attacks.append(Attack(
            "transfer-pgd", "untargeted",
            lambda ctx: transfer_attack_iterative(ctx, substitute, pgd_steps)))
    if pool_by_class is not None:
        def target_pool(ctx):
            return pool_by_class.get(ctx.sample.target_label, [])

        attacks.append(Attack(
            "interpolation", "targeted",
            lambda ctx: interpolation_attack(ctx, target_pool(ctx))))
        attacks.append(Attack(
            "pointwise-t", "targeted", _targeted_pointwise(pool_by_class)))
        attacks.append(Attack(
            "boundary-t", "targeted",
            lambda ctx: boundary_attack(ctx, boundary_iterations,
                                        pool=target_pool(ctx))))
    return attacks
