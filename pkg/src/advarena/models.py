"""Reference classifiers: vanilla, adversarially trained, and frozen-noise.

All are linear softmax models (K x D weights over flattened pixels), small
enough to train in seconds yet rich enough to have real decision
boundaries. They double as white-box oracles for tests: the exact minimal
untargeted perturbation of a linear classifier has a closed form, which
gives every attack an analytic quality bound.

Weights are quantized to float32-representable values when training ends,
so a model survives a checkpoint round trip with bit-identical behavior.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .images import Dataset, Image, Sample, make_image
from .oracle import DecisionOracle
from .rng import RngKey

__all__ = [
    "LinearSoftmaxModel",
    "FrozenNoiseModel",
    "frozen_noise_mask",
    "apply_mask",
    "train",
    "adversarial_train",
    "min_adversarial_distance_linear",
    "save_model",
    "load_model",
]

DEFAULT_EPOCHS = 40
DEFAULT_LEARNING_RATE = 0.5
DEFAULT_BATCH_SIZE = 32
DEFAULT_NOISE_SIGMA = 0.1

_PROB_FLOOR = 1e-12


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class LinearSoftmaxModel(DecisionOracle):
    """argmax_k (W x + b)_k with ties broken toward the lowest class index."""

    kind = "vanilla"

    def __init__(self, weights: np.ndarray, bias: np.ndarray,
                 shape: tuple[int, int, int], kind: str = "vanilla",
                 trained: bool = False):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        h, w, c = shape
        if weights.ndim != 2 or weights.shape[1] != h * w * c:
            raise ValueError(
                f"weights {weights.shape} incompatible with shape {shape}"
            )
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"bias {bias.shape} incompatible with weights")
        self.weights = weights
        self.bias = bias
        self.shape = (h, w, c)
        self.num_classes = weights.shape[0]
        self.kind = kind
        self.trained = trained

    def logits_array(self, flat: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(flat, dtype=np.float64) + self.bias

    def predict_array(self, flat: np.ndarray) -> int:
        return int(np.argmax(self.logits_array(flat)))

    def predict(self, image: Image) -> int:
        return self.predict_array(image.flat())

    def loss_array(self, flat: np.ndarray, label: int) -> float:
        probs = _softmax(self.logits_array(flat))
        return float(-np.log(max(probs[label], _PROB_FLOOR)))

    def loss(self, image: Image, label: int) -> float:
        return self.loss_array(image.flat(), label)

    def loss_gradient_array(self, flat: np.ndarray, label: int) -> np.ndarray:
        probs = _softmax(self.logits_array(flat))
        probs[label] -= 1.0
        return self.weights.T @ probs

    def loss_gradient(self, image: Image, label: int) -> np.ndarray:
        """d(cross-entropy)/d(pixels), flattened; exact for this model."""
        return self.loss_gradient_array(
            image.flat().astype(np.float64), label
        )


def frozen_noise_mask(dim: int, noise_seed: int,
                      noise_sigma: float = DEFAULT_NOISE_SIGMA) -> np.ndarray:
    """The fixed additive mask a frozen-noise model applies to its input.

    Pure function of (dim, seed, sigma), so the mask can be reproduced
    anywhere -- notably when preparing training data for the inner model.
    """
    gen = RngKey(int(noise_seed)).child("frozen-noise").generator()
    mask = gen.normal(0.0, float(noise_sigma), size=int(dim))
    # float32-representable, like the trained weights
    return mask.astype(np.float32).astype(np.float64)


def apply_mask(dataset: Dataset, mask: np.ndarray) -> Dataset:
    """Shift every image by a fixed mask, clipped to [0, 1].

    This is the view of the world a FrozenNoiseModel's inner model sees;
    training the inner model on it keeps the defended model's clean
    accuracy intact.
    """
    samples = []
    for s in dataset:
        flat = np.clip(s.image.flat().astype(np.float64) + mask, 0.0, 1.0)
        samples.append(Sample(s.sample_id, make_image(flat, s.image.shape),
                              s.true_label))
    return Dataset(dataset.num_classes, dataset.split_tag, tuple(samples))


class FrozenNoiseModel(DecisionOracle):
    """A linear model behind a fixed input perturbation.

    The mask is drawn once from a seeded Gaussian, so the model stays
    deterministic and stateless while its effective decision surface is
    shifted (and partially saturated by clipping) relative to the inner
    model's.
    """

    kind = "frozen-noise"

    def __init__(self, inner: LinearSoftmaxModel, noise_seed: int,
                 noise_sigma: float = DEFAULT_NOISE_SIGMA):
        self.inner = inner
        self.noise_seed = int(noise_seed)
        self.noise_sigma = float(noise_sigma)
        self.noise_mask = frozen_noise_mask(inner.weights.shape[1],
                                            self.noise_seed, self.noise_sigma)
        self.shape = inner.shape
        self.num_classes = inner.num_classes

    def predict_array(self, flat: np.ndarray) -> int:
        shifted = np.clip(np.asarray(flat, dtype=np.float64) + self.noise_mask,
                          0.0, 1.0)
        return self.inner.predict_array(shifted)

    def predict(self, image: Image) -> int:
        return self.predict_array(image.flat())


def _dataset_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s.image.flat().astype(np.float64) for s in dataset])
    ys = np.array([s.true_label for s in dataset], dtype=np.int64)
    return xs, ys


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _batch_gradients(weights, bias, xs, ys_onehot):
    logits = xs @ weights.T + bias
    probs = _softmax(logits)
    err = probs - ys_onehot
    n = xs.shape[0]
    grad_w = err.T @ xs / n
    grad_b = err.sum(axis=0) / n
    return grad_w, grad_b, err


def _perturb_batch(weights, xs, err, epsilon):
    # Single ascent step of magnitude epsilon along each sample's input
    # gradient; zero-gradient rows stay put.
    grads = err @ weights
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.clip(xs + epsilon * grads / safe, 0.0, 1.0)


def _fit(dataset: Dataset, epochs: int, learning_rate: float, seed: int,
         batch_size: int, epsilon: float | None) -> LinearSoftmaxModel:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    xs, ys = _dataset_arrays(dataset)
    num_classes = dataset.num_classes
    dim = xs.shape[1]
    ys_onehot = _onehot(ys, num_classes)

    # Zero init: the objective is convex, so there is nothing to gain from
    # random starts and determinism comes for free.
    weights = np.zeros((num_classes, dim), dtype=np.float64)
    bias = np.zeros(num_classes, dtype=np.float64)

    shuffle_gen = RngKey(seed).child("train-shuffle").generator()
    n = xs.shape[0]
    for _ in range(epochs):
        order = shuffle_gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = xs[idx], ys_onehot[idx]
            grad_w, grad_b, err = _batch_gradients(weights, bias, xb, yb)
            if epsilon is not None:
                x_adv = _perturb_batch(weights, xb, err, epsilon)
                grad_w_adv, grad_b_adv, _ = _batch_gradients(
                    weights, bias, x_adv, yb
                )
                grad_w = (grad_w + grad_w_adv) / 2.0
                grad_b = (grad_b + grad_b_adv) / 2.0
            weights -= learning_rate * grad_w
            bias -= learning_rate * grad_b

    # Quantize so checkpoints round-trip without behavior change.
    weights = weights.astype(np.float32).astype(np.float64)
    bias = bias.astype(np.float32).astype(np.float64)
    kind = "vanilla" if epsilon is None else "adv-trained"
    return LinearSoftmaxModel(weights, bias, dataset.shape, kind=kind,
                              trained=True)


def train(dataset: Dataset, epochs: int = DEFAULT_EPOCHS,
          learning_rate: float = DEFAULT_LEARNING_RATE, seed: int = 0,
          batch_size: int = DEFAULT_BATCH_SIZE) -> LinearSoftmaxModel:
    """Deterministic mini-batch gradient descent on mean cross-entropy."""
    return _fit(dataset, epochs, learning_rate, seed, batch_size, None)


def adversarial_train(dataset: Dataset, epochs: int = DEFAULT_EPOCHS,
                      learning_rate: float = DEFAULT_LEARNING_RATE,
                      epsilon: float = 0.5, seed: int = 0,
                      batch_size: int = DEFAULT_BATCH_SIZE) -> LinearSoftmaxModel:
    """Like `train`, but every mini-batch is averaged with a copy pushed one
    L2-normalized gradient-ascent step of magnitude `epsilon` (labels kept),
    which inflates the margins the model must defend."""
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return _fit(dataset, epochs, learning_rate, seed, batch_size, epsilon)


def accuracy(model, dataset: Dataset) -> float:
    hits = sum(model.predict(s.image) == s.true_label for s in dataset)
    return hits / len(dataset)


def min_adversarial_distance_linear(model: LinearSoftmaxModel,
                                    sample: Sample) -> float:
    """Exact minimal untargeted L2 perturbation, ignoring box constraints.

    The nearest decision boundary of a linear classifier is a hyperplane;
    with the box active this is a lower bound on any attack's distance.
    """
    flat = sample.image.flat().astype(np.float64)
    if model.predict_array(flat) != sample.true_label:
        return 0.0
    logits = model.logits_array(flat)
    t = sample.true_label
    best = None
    for k in range(model.num_classes):
        if k == t:
            continue
        dw = model.weights[t] - model.weights[k]
        norm = float(np.linalg.norm(dw))
        if norm == 0.0:
            continue
        gap = abs(float(logits[t] - logits[k]))
        dist = gap / norm
        if best is None or dist < best:
            best = dist
    if best is None:
        raise ValueError("all classes share identical weights; no boundary")
    return best


_CKPT_HEADER = "advarena-model\t1"


def _write_block(fh, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<II", a.shape[0], a.shape[1] if a.ndim == 2 else 1))
    fh.write(a.tobytes())


def _read_block(fh) -> np.ndarray:
    rows, cols = struct.unpack("<II", fh.read(8))
    data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    return data.reshape(rows, cols).astype(np.float64)


def save_model(model: DecisionOracle, path) -> None:
    if isinstance(model, FrozenNoiseModel):
        inner, kind = model.inner, "frozen-noise"
        noise_line = f"noise\t{model.noise_seed}\t{model.noise_sigma!r}\n"
    elif isinstance(model, LinearSoftmaxModel):
        inner, kind = model, model.kind
        noise_line = ""
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    h, w, c = inner.shape
    header = (
        f"{_CKPT_HEADER}\n"
        f"kind\t{kind}\n"
        f"classes\t{inner.num_classes}\n"
        f"shape\t{h}\t{w}\t{c}\n"
        f"{noise_line}"
        "end\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        _write_block(fh, inner.weights)
        _write_block(fh, inner.bias.reshape(1, -1))


def load_model(path) -> DecisionOracle:
    with open(Path(path), "rb") as fh:
        fields = {}
        first = fh.readline().decode("ascii").rstrip("\n")
        if first != _CKPT_HEADER:
            raise ValueError(f"not a model checkpoint: {path}")
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "end":
                break
            if not line:
                raise ValueError("truncated checkpoint header")
            parts = line.split("\t")
            fields[parts[0]] = parts[1:]
        weights = _read_block(fh)
        bias = _read_block(fh).reshape(-1)
    shape = tuple(int(v) for v in fields["shape"])
    kind = fields["kind"][0]
    inner_kind = "vanilla" if kind == "frozen-noise" else kind
    inner = LinearSoftmaxModel(weights, bias, shape, kind=inner_kind,
                               trained=True)
    if kind == "frozen-noise":
        seed, sigma = fields["noise"]
        return FrozenNoiseModel(inner, int(seed), float(sigma))
    return inner
