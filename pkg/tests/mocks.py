"""Hand-rolled oracle doubles used across the test suite."""

import hashlib
import time

from advarena.oracle import DecisionOracle


class ConstantModel(DecisionOracle):
    """Always the same label; deterministic and stateless."""

    def __init__(self, label=0, shape=(4, 4, 1), num_classes=4):
        self.label = label
        self.shape = shape
        self.num_classes = num_classes

    def predict(self, image):
        return self.label


class ErrorModel(DecisionOracle):
    """Raises on every query."""

    def __init__(self, shape=(4, 4, 1), num_classes=4):
        self.shape = shape
        self.num_classes = num_classes

    def predict(self, image):
        raise RuntimeError("synthetic model failure")


class SlowModel(DecisionOracle):
    """Takes longer than any sane per-query timeout."""

    def __init__(self, delay=0.05, shape=(4, 4, 1), num_classes=4):
        self.delay = delay
        self.shape = shape
        self.num_classes = num_classes

    def predict(self, image):
        time.sleep(self.delay)
        return 0


class FlippingModel(DecisionOracle):
    """Nondeterministic: alternates labels on successive calls."""

    def __init__(self, shape=(4, 4, 1), num_classes=4):
        self.shape = shape
        self.num_classes = num_classes
        self.calls = 0

    def predict(self, image):
        self.calls += 1
        return self.calls % self.num_classes


class StickyModel(DecisionOracle):
    """Stateful: answers with a label derived from the PREVIOUS query."""

    def __init__(self, shape=(4, 4, 1), num_classes=4):
        self.shape = shape
        self.num_classes = num_classes
        self._previous = 0

    def predict(self, image):
        answer = self._previous
        digest = hashlib.blake2b(image.pixels.tobytes(), digest_size=2)
        self._previous = int.from_bytes(digest.digest(), "little") \
            % self.num_classes
        return answer


class HashModel(DecisionOracle):
    """Pure function of the pixels: label = keyed hash of the bytes.

    Deterministic and stateless by construction, but with no structure an
    attack could exploit; ideal for false-positive checks on the
    compliance tooling.
    """

    def __init__(self, key=0, shape=(4, 4, 1), num_classes=4):
        self.key = key
        self.shape = shape
        self.num_classes = num_classes

    def predict(self, image):
        digest = hashlib.blake2b(image.pixels.tobytes(), digest_size=4,
                                 key=self.key.to_bytes(8, "little"))
        return int.from_bytes(digest.digest(), "little") % self.num_classes
