import numpy as np
import pytest

from advarena.attacks import (AttackContext, additive_gaussian_attack,
                              binary_search_refine, boundary_attack,
                              builtin_attacks, interpolation_attack,
                              pointwise_attack, salt_and_pepper_attack,
                              transfer_attack_iterative,
                              transfer_attack_single_step)
from advarena.images import Sample, grey_image, make_image
from advarena.models import min_adversarial_distance_linear
from advarena.oracle import (DecisionOracle, QueryMeter, raw_verdict,
                             verdict_is_adversarial)
from advarena.rng import RngKey
from advarena.scoring import l2_distance

from mocks import ConstantModel, ErrorModel

SHAPE = (4, 4, 1)
DIM = 16


class PixelThresholdModel(DecisionOracle):
    """Label 1 iff the first pixel is at or above a threshold, else 0."""

    def __init__(self, threshold, shape=SHAPE, num_classes=2):
        self.threshold = threshold
        self.shape = shape
        self.num_classes = num_classes

    def predict(self, image):
        return 1 if float(image.flat()[0]) >= self.threshold else 0


class ExactMatchModel(DecisionOracle):
    """Returns `hit` only for one exact image, `miss` otherwise."""

    def __init__(self, image, hit, miss, num_classes=4):
        self.match = image.pixels.tobytes()
        self.hit = hit
        self.miss = miss
        self.shape = image.shape
        self.num_classes = num_classes

    def predict(self, image):
        return self.hit if image.pixels.tobytes() == self.match else self.miss


def make_ctx(model, sample, task="untargeted", budget=1000, seed=7,
             refine_steps=12):
    meter = QueryMeter(model, budget=budget, query_timeout=None)
    return AttackContext(meter, sample, task, RngKey(seed).child("test"),
                         refine_steps=refine_steps)


def referee_confirms(model, sample, candidate, task):
    return verdict_is_adversarial(raw_verdict(model, candidate), sample, task)


def _sample(value=0.3, label=0):
    img = make_image(np.full(SHAPE, value, dtype=np.float32))
    return Sample("s", img, label)


def _correct_samples(model, dataset, n):
    picked = []
    for s in dataset:
        if model.predict(s.image) == s.true_label:
            picked.append(s)
        if len(picked) == n:
            break
    assert len(picked) == n
    return picked


# ---------------- refine ----------------


def test_refine_bisects_monotone_segment():
    model = PixelThresholdModel(0.5)
    sample = _sample(0.0)  # adversarial iff pixel0 >= 0.5
    far = make_image(np.concatenate([[1.0], np.zeros(DIM - 1)]), SHAPE)
    ctx = make_ctx(model, sample)
    refined = binary_search_refine(ctx, far)
    dist = l2_distance(sample.image, refined)
    # boundary sits at 0.5 along a unit segment: 12-step bisection lands
    # within 1/2^12 of it
    assert 0.5 <= dist <= 0.5 + 1.0 / 2 ** 12 + 1e-9
    assert referee_confirms(model, sample, refined, "untargeted")


def test_refine_never_returns_non_adversarial():
    model = PixelThresholdModel(0.5)
    sample = _sample(0.0)
    far = make_image(np.concatenate([[1.0], np.zeros(DIM - 1)]), SHAPE)
    for budget in (1, 2, 3, 5, 8, 12):
        ctx = make_ctx(model, sample, budget=budget)
        refined = binary_search_refine(ctx, far)
        assert referee_confirms(model, sample, refined, "untargeted")


def test_refine_keeps_zero_distance_point():
    sample = _sample(0.3)
    model = ConstantModel(1)  # everything adversarial for true_label=0
    ctx = make_ctx(model, sample)
    out = binary_search_refine(ctx, sample.image)
    assert out == sample.image


def test_refine_reaches_analytic_minimum_on_linear(vanilla_model,
                                                   train_data):
    samples = _correct_samples(vanilla_model, train_data, 5)
    for sample in samples:
        bound = min_adversarial_distance_linear(vanilla_model, sample)
        flat = sample.image.flat().astype(np.float64)
        # walk straight through the nearest boundary, then refine back
        grad = vanilla_model.loss_gradient(sample.image, sample.true_label)
        direction = grad / np.linalg.norm(grad)
        start = None
        for scale in np.linspace(0.1, 4.0, 40):
            candidate = make_image(np.clip(flat + scale * direction, 0, 1),
                                   SHAPE and vanilla_model.shape)
            if vanilla_model.predict(candidate) != sample.true_label:
                start = candidate
                break
        if start is None:
            continue
        ctx = make_ctx(vanilla_model, sample, refine_steps=20)
        refined = binary_search_refine(ctx, start)
        dist = l2_distance(sample.image, refined)
        assert dist >= bound - 1e-9


# ---------------- additive gaussian ----------------


def test_gaussian_on_always_erroring_model():
    sample = _sample()
    ctx = make_ctx(ErrorModel(), sample)
    result = additive_gaussian_attack(ctx)
    assert result.candidate is not None
    assert l2_distance(sample.image, result.candidate) < 0.01


def test_gaussian_budget_one_miss():
    sample = _sample(0.3, label=0)
    ctx = make_ctx(ConstantModel(0), sample, budget=1)
    result = additive_gaussian_attack(ctx)
    assert result.candidate is None
    assert result.queries_used == 1


def test_gaussian_is_deterministic(vanilla_model, train_data):
    sample = _correct_samples(vanilla_model, train_data, 1)[0]
    runs = [additive_gaussian_attack(
        make_ctx(vanilla_model, sample, seed=5)) for _ in range(2)]
    assert runs[0].candidate == runs[1].candidate
    assert runs[0].queries_used == runs[1].queries_used
    assert runs[0].trace == runs[1].trace


def test_gaussian_respects_analytic_bound(vanilla_model, train_data):
    for sample in _correct_samples(vanilla_model, train_data, 5):
        bound = min_adversarial_distance_linear(vanilla_model, sample)
        result = additive_gaussian_attack(make_ctx(vanilla_model, sample))
        if result.candidate is None:
            continue
        assert l2_distance(sample.image, result.candidate) >= bound - 1e-9
        assert referee_confirms(vanilla_model, sample, result.candidate,
                                "untargeted")


# ---------------- salt and pepper ----------------


def test_salt_pepper_gives_up_when_extremes_fail():
    sample = _sample(0.3, label=0)
    ctx = make_ctx(ConstantModel(0), sample, budget=500)
    result = salt_and_pepper_attack(ctx, trials=3)
    assert result.candidate is None


def test_salt_pepper_on_misclassified_clean_sample():
    sample = _sample(0.3, label=0)
    ctx = make_ctx(ConstantModel(1), sample)
    result = salt_and_pepper_attack(ctx)
    assert result.candidate == sample.image
    assert l2_distance(sample.image, result.candidate) == 0.0


def test_salt_pepper_succeeds_on_vanilla(vanilla_model, train_data):
    hits = 0
    samples = _correct_samples(vanilla_model, train_data, 10)
    for sample in samples:
        result = salt_and_pepper_attack(make_ctx(vanilla_model, sample))
        if result.candidate is not None:
            hits += 1
            assert referee_confirms(vanilla_model, sample, result.candidate,
                                    "untargeted")
    assert hits >= 9


def test_salt_pepper_trace_non_increasing(vanilla_model, train_data):
    sample = _correct_samples(vanilla_model, train_data, 1)[0]
    result = salt_and_pepper_attack(make_ctx(vanilla_model, sample))
    dists = [d for _, d in result.trace]
    assert dists == sorted(dists, reverse=True)


# ---------------- pointwise ----------------


def test_pointwise_fixed_point_returns_start():
    # adversarial region is a razor-thin slab at pixel0 ~ 1.0: resetting
    # the one perturbed pixel breaks adversariality and no interior blend
    # point is adversarial, so neither the sweep nor the final refinement
    # can move the start
    model = PixelThresholdModel(1.0 - 1e-7)
    sample = _sample(0.25, label=0)
    start_flat = sample.image.flat().astype(np.float64).copy()
    start_flat[0] = 1.0
    start = make_image(start_flat, SHAPE)
    ctx = make_ctx(model, sample)
    result = pointwise_attack(ctx, starting_point=start)
    assert result.candidate == start


def test_pointwise_resets_everything_on_error_model():
    sample = _sample(0.3)
    ctx = make_ctx(ErrorModel(), sample)
    result = pointwise_attack(ctx, starting_point=grey_image(SHAPE))
    assert result.candidate == sample.image
    assert l2_distance(sample.image, result.candidate) == 0.0


def test_pointwise_targeted_requires_starting_point(vanilla_model):
    sample = Sample("s", grey_image(vanilla_model.shape), 0, 1)
    ctx = make_ctx(vanilla_model, sample, task="targeted")
    with pytest.raises(ValueError):
        pointwise_attack(ctx)


def test_pointwise_improves_on_salt_pepper(vanilla_model, train_data):
    for sample in _correct_samples(vanilla_model, train_data, 5):
        sp = salt_and_pepper_attack(make_ctx(vanilla_model, sample))
        pw = pointwise_attack(make_ctx(vanilla_model, sample))
        if sp.candidate is None or pw.candidate is None:
            continue
        assert l2_distance(sample.image, pw.candidate) <= \
            l2_distance(sample.image, sp.candidate) + 1e-9


def test_pointwise_trace_non_increasing(vanilla_model, train_data):
    for seed, sample in enumerate(
            _correct_samples(vanilla_model, train_data, 20)):
        result = pointwise_attack(make_ctx(vanilla_model, sample, seed=seed))
        dists = [d for _, d in result.trace]
        assert dists == sorted(dists, reverse=True)


# ---------------- boundary ----------------


def test_boundary_zero_iterations_returns_refined_start(vanilla_model,
                                                        train_data):
    sample = _correct_samples(vanilla_model, train_data, 1)[0]
    result = boundary_attack(make_ctx(vanilla_model, sample), iterations=0)
    assert result.candidate is not None
    assert referee_confirms(vanilla_model, sample, result.candidate,
                            "untargeted")


def test_boundary_no_start_within_50_draws():
    sample = _sample(0.3, label=0)
    ctx = make_ctx(ConstantModel(0), sample, budget=500)
    result = boundary_attack(ctx, iterations=10)
    assert result.candidate is None
    assert result.queries_used == 50


def test_boundary_trace_non_increasing(vanilla_model, train_data):
    sample = _correct_samples(vanilla_model, train_data, 1)[0]
    result = boundary_attack(make_ctx(vanilla_model, sample), iterations=100)
    dists = [d for _, d in result.trace]
    assert dists == sorted(dists, reverse=True)


def test_boundary_beats_its_starting_point(vanilla_model, train_data):
    for sample in _correct_samples(vanilla_model, train_data, 3):
        short = boundary_attack(make_ctx(vanilla_model, sample), iterations=0)
        long = boundary_attack(make_ctx(vanilla_model, sample),
                               iterations=150)
        assert l2_distance(sample.image, long.candidate) <= \
            l2_distance(sample.image, short.candidate) + 1e-9


def test_boundary_targeted_uses_pool(vanilla_model, train_data, val_data):
    pools = {}
    for s in train_data:
        pools.setdefault(s.true_label, []).append(s.image)
    done = 0
    for sample in val_data:
        if vanilla_model.predict(sample.image) != sample.true_label:
            continue
        ctx = make_ctx(vanilla_model, sample, task="targeted")
        result = boundary_attack(ctx, iterations=100,
                                 pool=pools[sample.target_label])
        if result.candidate is None:
            continue
        assert vanilla_model.predict(result.candidate) == sample.target_label
        done += 1
        if done == 3:
            break
    assert done == 3


# ---------------- interpolation ----------------


def test_interpolation_sample_already_target():
    sample = Sample("s", grey_image(SHAPE), 0, 2)
    ctx = make_ctx(ConstantModel(2), sample, task="targeted")
    result = interpolation_attack(ctx, pool=[])
    assert result.candidate == sample.image
    assert result.queries_used == 1


def test_interpolation_pool_of_one_endpoint_only():
    sample = _sample(0.2, label=0)
    sample = Sample(sample.sample_id, sample.image, 0, 2)
    pool_img = make_image(np.full(SHAPE, 0.8, dtype=np.float32))
    model = ExactMatchModel(pool_img, hit=2, miss=0)
    ctx = make_ctx(model, sample, task="targeted")
    result = interpolation_attack(ctx, pool=[pool_img])
    assert result.candidate == pool_img


def test_interpolation_no_target_in_pool():
    sample = Sample("s", grey_image(SHAPE), 0, 2)
    ctx = make_ctx(ConstantModel(0), sample, task="targeted")
    result = interpolation_attack(ctx, pool=[grey_image(SHAPE)] * 3)
    assert result.candidate is None


def test_interpolation_success_rate_on_vanilla(vanilla_model, train_data,
                                               val_data):
    pools = {}
    for s in train_data:
        pools.setdefault(s.true_label, []).append(s.image)
    total = hits = 0
    for sample in list(val_data)[:20]:
        total += 1
        ctx = make_ctx(vanilla_model, sample, task="targeted")
        result = interpolation_attack(ctx, pools[sample.target_label])
        if result.candidate is not None:
            assert vanilla_model.predict(result.candidate) == \
                sample.target_label
            hits += 1
    assert hits / total >= 0.8


# ---------------- transfer ----------------


class CountingSubstitute:
    def __init__(self, model):
        self.model = model
        self.calls = 0

    def loss_gradient(self, image, label):
        self.calls += 1
        return self.model.loss_gradient(image, label)

    def loss_gradient_array(self, flat, label):
        self.calls += 1
        return self.model.loss_gradient_array(flat, label)


def test_single_step_whitebox_near_analytic(vanilla_model, train_data):
    # the gradient ray is a softmax-weighted mix of class directions, not
    # the nearest-boundary normal, so even with a perfect substitute the
    # crossing lands somewhat past the analytic minimum -- but well under 2x
    ratios = []
    for sample in _correct_samples(vanilla_model, train_data, 10):
        bound = min_adversarial_distance_linear(vanilla_model, sample)
        if bound == 0.0:
            continue
        ctx = make_ctx(vanilla_model, sample)
        result = transfer_attack_single_step(ctx, vanilla_model)
        assert result.candidate is not None
        dist = l2_distance(sample.image, result.candidate)
        assert dist >= bound - 1e-9
        ratios.append(dist / bound)
    assert float(np.median(ratios)) <= 2.0


def test_substitute_queries_are_free(vanilla_model, substitute_model,
                                     train_data):
    sample = _correct_samples(vanilla_model, train_data, 1)[0]
    spy = CountingSubstitute(substitute_model)
    ctx = make_ctx(vanilla_model, sample)
    result = transfer_attack_single_step(ctx, spy)
    assert spy.calls >= 1
    assert ctx.meter.used == result.queries_used


def test_zero_gradient_yields_no_candidate(train_data):
    flat_model = type(train_data)  # placate linters; real model below
    from advarena.models import LinearSoftmaxModel

    zero = LinearSoftmaxModel(np.zeros((2, DIM)), np.zeros(2), SHAPE)
    sample = _sample(0.3, label=0)
    ctx = make_ctx(ConstantModel(1), sample)
    result = transfer_attack_single_step(ctx, zero)
    assert result.candidate is None
    assert ctx.meter.used == 0


def test_pgd_one_step_equals_single_step(vanilla_model, substitute_model,
                                         train_data):
    for sample in _correct_samples(vanilla_model, train_data, 5):
        single = transfer_attack_single_step(
            make_ctx(vanilla_model, sample), substitute_model)
        pgd1 = transfer_attack_iterative(
            make_ctx(vanilla_model, sample), substitute_model, steps=1)
        assert single.candidate == pgd1.candidate
        assert single.queries_used == pgd1.queries_used


def test_pgd_rejects_zero_steps(vanilla_model, substitute_model):
    sample = _sample(0.3)
    ctx = make_ctx(vanilla_model, sample)
    with pytest.raises(ValueError):
        transfer_attack_iterative(ctx, substitute_model, steps=0)


def test_pgd_median_not_worse_than_single_step(vanilla_model,
                                               substitute_model, train_data):
    singles, pgds = [], []
    for sample in _correct_samples(vanilla_model, train_data, 20):
        s = transfer_attack_single_step(
            make_ctx(vanilla_model, sample), substitute_model)
        p = transfer_attack_iterative(
            make_ctx(vanilla_model, sample), substitute_model, steps=10)
        if s.candidate is None or p.candidate is None:
            continue
        singles.append(l2_distance(sample.image, s.candidate))
        pgds.append(l2_distance(sample.image, p.candidate))
    assert len(singles) >= 15
    assert np.median(pgds) <= np.median(singles) + 1e-9


# ---------------- cross-cutting properties ----------------


def test_wrong_task_rejected(vanilla_model):
    targeted = Sample("s", grey_image(vanilla_model.shape), 0, 1)
    ctx = make_ctx(vanilla_model, targeted, task="targeted")
    with pytest.raises(ValueError):
        additive_gaussian_attack(ctx)
    with pytest.raises(ValueError):
        salt_and_pepper_attack(ctx)
    untargeted = make_ctx(vanilla_model,
                          Sample("s", grey_image(vanilla_model.shape), 0))
    with pytest.raises(ValueError):
        interpolation_attack(untargeted, pool=[])


def test_budget_safety_across_suite(vanilla_model, substitute_model,
                                    train_data, val_data):
    pools = {}
    for s in train_data:
        pools.setdefault(s.true_label, []).append(s.image)
    suite = builtin_attacks(substitute=substitute_model, pool_by_class=pools,
                            boundary_iterations=50)
    budget = 60
    for attack in suite:
        sample = next(s for s in val_data
                      if (attack.task == "untargeted"
                          or s.target_label is not None))
        meter = QueryMeter(vanilla_model, budget=budget, query_timeout=None)
        ctx = AttackContext(meter, sample, attack.task,
                            RngKey(3).child("safety", attack.attack_id))
        result = attack.run(ctx)
        assert meter.used <= budget, attack.attack_id
        assert result.queries_used == meter.used
        if result.candidate is not None:
            assert referee_confirms(vanilla_model, sample, result.candidate,
                                    attack.task), attack.attack_id


def test_builtin_suite_ids_and_tasks(substitute_model):
    base = builtin_attacks()
    assert [a.attack_id for a in base] == ["gaussian", "salt-pepper",
                                           "pointwise", "boundary"]
    full = builtin_attacks(substitute=substitute_model, pool_by_class={})
    ids = [a.attack_id for a in full]
    assert ids == ["gaussian", "salt-pepper", "pointwise", "boundary",
                   "transfer-step", "transfer-pgd", "interpolation",
                   "pointwise-t", "boundary-t"]
    tasks = {a.attack_id: a.task for a in full}
    assert tasks["interpolation"] == "targeted"
    assert tasks["transfer-pgd"] == "untargeted"
