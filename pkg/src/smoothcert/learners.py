"""Small deterministic base learners for the smoothing ensemble.

Each learner trains from an explicit RNG (bit-reproducible given the seed),
predicts hard labels with lowest-class-index tie-breaking, and serializes
its parameters to a canonical little-endian byte string so the ensemble's
hash-derived test augmentation is platform-stable.

The optional differentially private step clips every per-example gradient
to L2 norm <= clip_norm, sums, adds N(0, (noise_multiplier * clip_norm)^2)
per coordinate, and averages (the standard clipped-noisy-SGD recipe); an
audit object records the realized clipped norms and noise spread so the
invariants can be checked from outside.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

__all__ = [
    "LEARNER_KINDS",
    "DPConfig",
    "DPAudit",
    "BaseLearnerSpec",
    "TrainingDiverged",
    "LogisticModel",
    "MLPModel",
    "KNNVoterModel",
    "train_model",
    "model_from_bytes",
]

LEARNER_KINDS = ("logistic", "mlp", "knn-voter")


@dataclass(frozen=True)
class DPConfig:
    """Per-example clipping bound and relative noise scale for DP training."""

    clip_norm: float
    noise_multiplier: float

    def __post_init__(self):
        if not float(self.clip_norm) > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm!r}")
        if float(self.noise_multiplier) < 0:
            raise ValueError(f"noise_multiplier must be >= 0, got {self.noise_multiplier!r}")


@dataclass
class DPAudit:
    """Instrumentation of one DP training run."""

    max_clipped_norm: float = 0.0
    noise_count: int = 0
    noise_sum: float = 0.0
    noise_sumsq: float = 0.0

    def record_norms(self, clipped_norms: np.ndarray) -> None:
        self.max_clipped_norm = max(self.max_clipped_norm, float(clipped_norms.max()))

    def record_noise(self, noise: np.ndarray) -> None:
        self.noise_count += noise.size
        self.noise_sum += float(noise.sum())
        self.noise_sumsq += float(np.square(noise).sum())

    @property
    def noise_std(self) -> float:
        if self.noise_count < 2:
            return float("nan")
        mean = self.noise_sum / self.noise_count
        return math.sqrt(max(self.noise_sumsq / self.noise_count - mean * mean, 0.0))


@dataclass(frozen=True)
class BaseLearnerSpec:
    """Which learner to train and with what hyperparameters.

    ``hidden_sizes`` only matters for the MLP, ``k`` only for the K-NN
    voter; the SGD hyperparameters apply to the two gradient-trained kinds.
    """

    kind: str
    hidden_sizes: tuple = (32,)
    k: int = 5
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.5
    dp: DPConfig | None = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}, expected one of {LEARNER_KINDS}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.kind == "mlp" and (not self.hidden_sizes or min(self.hidden_sizes) < 1):
            raise ValueError("mlp needs at least one positive hidden size")
        if self.kind == "knn-voter" and self.k < 1:
            raise ValueError("knn-voter needs k >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


class TrainingDiverged(RuntimeError):
    """Raised when a member's loss stops being finite."""


def _pack_array(out: io.BytesIO, arr: np.ndarray) -> None:
    out.write(struct.pack("<I", arr.ndim))
    out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _unpack_array(f: io.BytesIO) -> np.ndarray:
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    return np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _apply_gradient_step(flat_grads, params, lr, batch, dp, rng, audit):
    """One SGD step from a (batch, n_params) per-example gradient matrix."""
    if dp is not None:
        norms = np.linalg.norm(flat_grads, axis=1)
        scale = np.minimum(1.0, dp.clip_norm / np.maximum(norms, 1e-12))
        flat_grads = flat_grads * scale[:, None]
        if audit is not None:
            audit.record_norms(np.linalg.norm(flat_grads, axis=1))
        total = flat_grads.sum(axis=0)
        noise = rng.standard_normal(total.size) * (dp.noise_multiplier * dp.clip_norm)
        if audit is not None:
            audit.record_noise(noise)
        step = (total + noise) / batch
    else:
        step = flat_grads.mean(axis=0)
    offset = 0
    for p in params:
        p -= lr * step[offset : offset + p.size].reshape(p.shape)
        offset += p.size


class LogisticModel:
    """Multinomial logistic regression trained by minibatch SGD."""

    kind = "logistic"
    _TAG = b"LOGR"

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    @classmethod
    def train(cls, dataset: Dataset, spec: BaseLearnerSpec, rng, audit=None) -> "LogisticModel":
        n, d, c = dataset.n, dataset.d, dataset.class_count
        w = np.zeros((c, d))
        b = np.zeros(c)
        onehot = np.eye(c)[dataset.labels]
        for _ in range(spec.epochs):
            order = rng.permutation(n)
            for start in range(0, n, spec.batch_size):
                rows = order[start : start + spec.batch_size]
                xb, yb = dataset.features[rows], onehot[rows]
                probs = _softmax(xb @ w.T + b)
                if not np.all(np.isfinite(probs)):
                    raise TrainingDiverged("logistic softmax produced non-finite values")
                err = probs - yb  # (batch, c)
                grads_w = err[:, :, None] * xb[:, None, :]  # per-example (batch, c, d)
                flat = np.concatenate([grads_w.reshape(len(rows), -1), err], axis=1)
                _apply_gradient_step(flat, [w, b], spec.learning_rate, len(rows), spec.dp, rng, audit)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise TrainingDiverged("logistic parameters diverged to non-finite values")
        return cls(w, b)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.argmax(x @ self.weights.T + self.bias, axis=1)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(self._TAG)
        _pack_array(out, self.weights)
        _pack_array(out, self.bias)
        return out.getvalue()

    @classmethod
    def _from_stream(cls, f: io.BytesIO) -> "LogisticModel":
        return cls(_unpack_array(f), _unpack_array(f))


class MLPModel:
    """Fully connected tanh network trained by minibatch SGD."""

    kind = "mlp"
    _TAG = b"MLPN"

    def __init__(self, weights: list, biases: list):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def train(cls, dataset: Dataset, spec: BaseLearnerSpec, rng, audit=None) -> "MLPModel":
        n, d, c = dataset.n, dataset.d, dataset.class_count
        sizes = (d,) + spec.hidden_sizes + (c,)
        weights = [
            rng.standard_normal((sizes[i + 1], sizes[i])) / math.sqrt(sizes[i])
            for i in range(len(sizes) - 1)
        ]
        biases = [np.zeros(s) for s in sizes[1:]]
        onehot = np.eye(c)[dataset.labels]
        for _ in range(spec.epochs):
            order = rng.permutation(n)
            for start in range(0, n, spec.batch_size):
                rows = order[start : start + spec.batch_size]
                xb, yb = dataset.features[rows], onehot[rows]
                batch = len(rows)
                # forward
                acts = [xb]
                for w, b in zip(weights[:-1], biases[:-1]):
                    acts.append(np.tanh(acts[-1] @ w.T + b))
                logits = acts[-1] @ weights[-1].T + biases[-1]
                probs = _softmax(logits)
                if not np.all(np.isfinite(probs)):
                    raise TrainingDiverged("mlp softmax produced non-finite values")
                # per-example backward
                delta = probs - yb
                grads = []
                for layer in range(len(weights) - 1, -1, -1):
                    gw = delta[:, :, None] * acts[layer][:, None, :]
                    grads.append((gw.reshape(batch, -1), delta))
                    if layer > 0:
                        delta = (delta @ weights[layer]) * (1.0 - acts[layer] ** 2)
                grads.reverse()
                flat = np.concatenate([g for pair in grads for g in pair], axis=1)
                params = [p for lw, lb in zip(weights, biases) for p in (lw, lb)]
                _apply_gradient_step(flat, params, spec.learning_rate, batch, spec.dp, rng, audit)
        if not all(np.all(np.isfinite(w)) for w in weights):
            raise TrainingDiverged("mlp parameters diverged to non-finite values")
        return cls(weights, biases)

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(x)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w.T + b)
        return np.argmax(h @ self.weights[-1].T + self.biases[-1], axis=1)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(self._TAG)
        out.write(struct.pack("<I", len(self.weights)))
        for w, b in zip(self.weights, self.biases):
            _pack_array(out, w)
            _pack_array(out, b)
        return out.getvalue()

    @classmethod
    def _from_stream(cls, f: io.BytesIO) -> "MLPModel":
        (layers,) = struct.unpack("<I", f.read(4))
        weights, biases = [], []
        for _ in range(layers):
            weights.append(_unpack_array(f))
            biases.append(_unpack_array(f))
        return cls(weights, biases)


class KNNVoterModel:
    """Plain K-NN majority vote that memorizes its (noisy) training set."""

    kind = "knn-voter"
    _TAG = b"KNNV"

    def __init__(self, features: np.ndarray, labels: np.ndarray, class_count: int, k: int):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.class_count = int(class_count)
        self.k = int(k)

    @classmethod
    def train(cls, dataset: Dataset, spec: BaseLearnerSpec, rng, audit=None) -> "KNNVoterModel":
        if spec.k > dataset.n:
            raise ValueError(f"k={spec.k} exceeds training size {dataset.n}")
        return cls(dataset.features, dataset.labels, dataset.class_count, spec.k)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        d2 = (
            np.einsum("ij,ij->i", x, x)[:, None]
            - 2.0 * x @ self.features.T
            + np.einsum("ij,ij->i", self.features, self.features)[None, :]
        )
        # stable argsort: equal distances resolve to the lower training index
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        votes = self.labels[order]
        tallies = np.zeros((x.shape[0], self.class_count), dtype=np.int64)
        np.add.at(tallies, (np.repeat(np.arange(x.shape[0]), self.k), votes.ravel()), 1)
        return np.argmax(tallies, axis=1)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(self._TAG)
        out.write(struct.pack("<IQ", self.class_count, self.k))
        _pack_array(out, self.features)
        _pack_array(out, self.labels.astype(np.float64))
        return out.getvalue()

    @classmethod
    def _from_stream(cls, f: io.BytesIO) -> "KNNVoterModel":
        class_count, k = struct.unpack("<IQ", f.read(12))
        features = _unpack_array(f)
        labels = _unpack_array(f).astype(np.int64)
        return cls(features, labels, class_count, k)


_MODEL_TAGS = {
    LogisticModel._TAG: LogisticModel,
    MLPModel._TAG: MLPModel,
    KNNVoterModel._TAG: KNNVoterModel,
}


def train_model(dataset: Dataset, spec: BaseLearnerSpec, rng, audit: DPAudit | None = None):
    """Train one base model of the requested kind from an explicit RNG."""
    cls = {"logistic": LogisticModel, "mlp": MLPModel, "knn-voter": KNNVoterModel}[spec.kind]
    return cls.train(dataset, spec, rng, audit)


def model_from_bytes(buf: bytes):
    """Reconstruct any serialized model from its canonical bytes."""
    f = io.BytesIO(buf)
    tag = f.read(4)
    try:
        cls = _MODEL_TAGS[tag]
    except KeyError:
        raise ValueError(f"unknown model tag {tag!r}") from None
    model = cls._from_stream(f)
    if f.read(1):
        raise ValueError("trailing bytes after model payload")
    return model
