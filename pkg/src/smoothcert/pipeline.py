"""Monte-Carlo smoothing pipeline for generic base learners.

Training: draw N independent Gaussian perturbations of the training
features, train one base model per draw.  Prediction: every member votes
on the test input offset by its own noise vector u_k, drawn from a PRNG
seeded by the SHA-256 hash of the member's canonical parameter bytes, so
inference stays a deterministic function of the trained models while the
train/test noise distributions match.  Vote frequencies are turned into
certified bounds by the Hoeffding correction and the Gaussian radius.

Every random stream derives from numpy SeedSequence([master_seed,
member_index, tag]) with tag 0 for data noise and tag 1 for training, so
members are reproducible and mutually independent for any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .certify import CertifiedPrediction, GaussianSmoothing, gaussian_radius
from .data import Dataset, dataset_sha256
from .learners import BaseLearnerSpec, DPAudit, DPConfig, TrainingDiverged, model_from_bytes, train_model
from .stats import hoeffding_bounds

__all__ = [
    "SmoothingConfig",
    "TrainedEnsembleMember",
    "Ensemble",
    "PipelineError",
    "sample_noisy_dataset",
    "train_member",
    "train_ensemble",
    "member_test_noise",
    "smoothed_predict",
    "run_pipeline",
    "save_ensemble",
    "load_ensemble",
    "manifest_to_specs",
]

_DATA_NOISE_STREAM = 0
_TRAINING_STREAM = 1
MEMBER_SUCCESS_FLOOR = 0.9


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float
    ensemble_size: int
    alpha: float
    master_seed: int

    def __post_init__(self):
        GaussianSmoothing(self.sigma)  # validates sigma
        if int(self.ensemble_size) != self.ensemble_size or self.ensemble_size < 1:
            raise ValueError(f"ensemble_size must be a positive integer, got {self.ensemble_size!r}")
        if not (0.0 < float(self.alpha) < 1.0):
            raise ValueError(f"alpha must lie strictly inside (0, 1), got {self.alpha!r}")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValueError(f"master_seed must be a nonnegative integer, got {self.master_seed!r}")


class PipelineError(RuntimeError):
    pass


def _member_rng(master_seed: int, member_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), int(member_index), int(stream)])
    )


def sample_noisy_dataset(
    dataset: Dataset, sigma: float, member_index: int, master_seed: int
) -> Dataset:
    """Member k's smoothed training set: independent N(0, sigma^2 I) per row."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return dataset
    rng = _member_rng(master_seed, member_index, _DATA_NOISE_STREAM)
    noisy = dataset.features + sigma * rng.standard_normal(dataset.features.shape)
    return Dataset(noisy, dataset.labels, dataset.class_count, dataset.feature_shape)


@dataclass(frozen=True)
class TrainedEnsembleMember:
    """One trained base model, identified by its canonical parameter bytes.

    The test-noise seed is not stored: it is, by construction, the first 8
    bytes (little-endian) of SHA-256(parameters).  ``index`` records the
    member's position in the ensemble's seed schedule (None for ad-hoc
    members built outside a pipeline run).
    """

    parameters: bytes
    dp_audit: DPAudit | None = None
    index: int | None = None

    def __post_init__(self):
        if not self.parameters:
            raise ValueError("member parameters must be non-empty")

    @property
    def test_noise_seed(self) -> int:
        digest = hashlib.sha256(self.parameters).digest()
        return int.from_bytes(digest[:8], "little")

    def model(self):
        return model_from_bytes(self.parameters)


def train_member(
    noisy: Dataset,
    spec: BaseLearnerSpec,
    seed: int,
    collect_dp_audit: bool = False,
    index: int | None = None,
) -> TrainedEnsembleMember:
    """Deterministically train one ensemble member on its noisy dataset."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    audit = DPAudit() if (collect_dp_audit and spec.dp is not None) else None
    model = train_model(noisy, spec, rng, audit)
    return TrainedEnsembleMember(parameters=model.to_bytes(), dp_audit=audit, index=index)


def member_test_noise(
    member: TrainedEnsembleMember, sigma: float, feature_dim: int
) -> np.ndarray:
    """The member's deterministic test augmentation u_k ~ N(0, sigma^2 I).

    Drawn from numpy's PCG64 generator seeded by the parameter hash, so
    identical parameter bytes always produce the identical vector and any
    parameter change reseeds it completely.
    """
    rng = np.random.default_rng(np.random.PCG64(member.test_noise_seed))
    return sigma * rng.standard_normal(int(feature_dim))


class Ensemble:
    """Trained members plus cached deserialized models and test noises."""

    def __init__(self, members, failures: int = 0):
        self.members = list(members)
        if not self.members:
            raise ValueError("ensemble needs at least one trained member")
        self.failures = int(failures)
        self._models = None
        self._noise_cache = {}

    def __len__(self) -> int:
        return len(self.members)

    def models(self):
        if self._models is None:
            self._models = [m.model() for m in self.members]
        return self._models

    def test_noises(self, sigma: float, feature_dim: int) -> np.ndarray:
        key = (float(sigma), int(feature_dim))
        if key not in self._noise_cache:
            self._noise_cache[key] = np.stack(
                [member_test_noise(m, sigma, feature_dim) for m in self.members]
            )
        return self._noise_cache[key]

    def vote_counts(self, x: np.ndarray, sigma: float, class_count: int) -> np.ndarray:
        """Hard one-hot votes of every member on x + u_k, summed per class."""
        x = np.asarray(x, dtype=float).reshape(-1)
        noises = self.test_noises(sigma, x.size)
        counts = np.zeros(class_count, dtype=np.int64)
        for model, u in zip(self.models(), noises):
            counts[int(model.predict(x + u)[0])] += 1
        return counts


def _train_one(dataset, learner, config, index):
    noisy = sample_noisy_dataset(dataset, config.sigma, index, config.master_seed)
    seed_rng = _member_rng(config.master_seed, index, _TRAINING_STREAM)
    seed = int(seed_rng.integers(0, 2**63 - 1))
    try:
        return train_member(noisy, learner, seed, index=index)
    except TrainingDiverged as exc:
        return ("failed", index, str(exc))


def _member_filename(index: int) -> str:
    return f"member_{index:05d}.bin"


def _ensemble_meta(config: SmoothingConfig, learner: BaseLearnerSpec, dataset_hash) -> dict:
    return {
        "config": {
            "sigma": config.sigma,
            "ensemble_size": config.ensemble_size,
            "alpha": config.alpha,
            "master_seed": config.master_seed,
        },
        "learner": {
            "kind": learner.kind,
            "hidden_sizes": list(learner.hidden_sizes),
            "k": learner.k,
            "epochs": learner.epochs,
            "batch_size": learner.batch_size,
            "learning_rate": learner.learning_rate,
            "dp": None
            if learner.dp is None
            else {"clip_norm": learner.dp.clip_norm, "noise_multiplier": learner.dp.noise_multiplier},
        },
        "dataset_sha256": dataset_hash,
    }


def _prepare_checkpoint_dir(dirpath, meta: dict) -> dict:
    """Validate or initialize a checkpoint directory; return trained members."""
    os.makedirs(dirpath, exist_ok=True)
    meta_path = os.path.join(dirpath, "checkpoint.json")
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            existing = json.load(f)
        if existing != meta:
            raise PipelineError(
                f"checkpoint at {dirpath} was started with different settings; "
                "remove it or change the output directory"
            )
    else:
        with open(meta_path, "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
    members = {}
    for name in os.listdir(dirpath):
        if name.startswith("member_") and name.endswith(".bin"):
            index = int(name[len("member_") : -len(".bin")])
            with open(os.path.join(dirpath, name), "rb") as fh:
                members[index] = TrainedEnsembleMember(parameters=fh.read(), index=index)
    return members


def train_ensemble(
    dataset: Dataset,
    learner: BaseLearnerSpec,
    config: SmoothingConfig,
    workers: int = 1,
    checkpoint_dir=None,
    dataset_hash=None,
) -> Ensemble:
    """Train the N members (optionally in parallel; output is worker-count
    independent).  Aborts unless at least 90% of members trained.

    With ``checkpoint_dir`` every finished member is written to disk as it
    completes, and a rerun pointed at the same directory (and settings)
    trains only the members that are still missing, so interrupted long
    runs resume where they stopped.
    """
    n_jobs = max(1, int(workers))
    members = {}
    if checkpoint_dir is not None:
        meta = _ensemble_meta(
            config, learner, dataset_hash if dataset_hash is not None else dataset_sha256(dataset)
        )
        members = _prepare_checkpoint_dir(checkpoint_dir, meta)
    todo = [k for k in range(config.ensemble_size) if k not in members]
    failures = []
    batch_size = max(4 * n_jobs, 8)
    for start in range(0, len(todo), batch_size):
        batch = todo[start : start + batch_size]
        if n_jobs == 1:
            results = [_train_one(dataset, learner, config, k) for k in batch]
        else:
            results = Parallel(n_jobs=n_jobs)(
                delayed(_train_one)(dataset, learner, config, k) for k in batch
            )
        for r in results:
            if isinstance(r, TrainedEnsembleMember):
                members[r.index] = r
                if checkpoint_dir is not None:
                    with open(os.path.join(checkpoint_dir, _member_filename(r.index)), "wb") as f:
                        f.write(r.parameters)
            else:
                failures.append(r)
    if len(members) < math.ceil(MEMBER_SUCCESS_FLOOR * config.ensemble_size):
        detail = "; ".join(f"member {i}: {msg}" for _, i, msg in failures[:5])
        raise PipelineError(
            f"only {len(members)}/{config.ensemble_size} members trained ({detail})"
        )
    ordered = [members[k] for k in sorted(members)]
    return Ensemble(ordered, failures=len(failures))


def smoothed_predict(
    ensemble: Ensemble, x_test: np.ndarray, config: SmoothingConfig, class_count: int
) -> CertifiedPrediction:
    """Aggregate member votes into a certified prediction.

    Empirical top and runner-up vote frequencies are Hoeffding-corrected at
    the configured error rate; if the corrected bounds still separate, the
    prediction commits with the Gaussian radius at those bounds, otherwise
    it abstains.  The radius clamp is 1/(2N): Monte-Carlo estimates cannot
    resolve probabilities closer to 0 or 1 than that.
    """
    n_members = len(ensemble)
    if n_members < 2:
        raise ValueError("smoothed prediction needs at least two members")
    counts = ensemble.vote_counts(x_test, config.sigma, class_count)
    y_a = int(np.argmax(counts))
    p_hat_a = counts[y_a] / n_members
    rest = np.delete(counts, y_a)
    p_hat_b = float(rest.max()) / n_members
    p_a, p_b = hoeffding_bounds(p_hat_a, p_hat_b, n_members, config.alpha)
    if p_a <= p_b:
        return CertifiedPrediction(label=None, p_a=p_a, p_b=p_b, radius=None)
    radius = gaussian_radius(
        p_a, p_b, GaussianSmoothing(config.sigma), eps_clamp=1.0 / (2.0 * n_members)
    )
    return CertifiedPrediction(label=y_a, p_a=p_a, p_b=p_b, radius=radius)


def run_pipeline(
    poisoned,
    learner: BaseLearnerSpec,
    config: SmoothingConfig,
    test_features: np.ndarray,
    workers: int = 1,
    ensemble: Ensemble | None = None,
) -> tuple[list, Ensemble]:
    """End-to-end smoothing run: train N members once, then certify every
    test row.  Accepts a Dataset or a PoisonedDataset; pass a previously
    trained ``ensemble`` to resume without retraining."""
    dataset = poisoned.dataset if hasattr(poisoned, "dataset") else poisoned
    if ensemble is None:
        ensemble = train_ensemble(dataset, learner, config, workers=workers)
    test_features = np.atleast_2d(np.asarray(test_features, dtype=float))
    predictions = [
        smoothed_predict(ensemble, row, config, dataset.class_count) for row in test_features
    ]
    return predictions, ensemble


def save_ensemble(ensemble: Ensemble, dirpath, config: SmoothingConfig, learner: BaseLearnerSpec, dataset=None) -> None:
    """Persist one parameter file per member plus a JSON manifest.

    Files are named by each member's seed-schedule index, so a saved
    ensemble directory doubles as a valid training checkpoint.
    """
    os.makedirs(dirpath, exist_ok=True)
    member_files = []
    for i, member in enumerate(ensemble.members):
        name = _member_filename(member.index if member.index is not None else i)
        with open(os.path.join(dirpath, name), "wb") as f:
            f.write(member.parameters)
        member_files.append(name)
    meta = _ensemble_meta(config, learner, dataset_sha256(dataset) if dataset is not None else None)
    with open(os.path.join(dirpath, "checkpoint.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    manifest = dict(meta)
    manifest["failures"] = ensemble.failures
    manifest["member_files"] = member_files
    with open(os.path.join(dirpath, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_ensemble(dirpath) -> tuple[Ensemble, dict]:
    with open(os.path.join(dirpath, "manifest.json")) as f:
        manifest = json.load(f)
    members = []
    for name in manifest["member_files"]:
        index = int(name[len("member_") : -len(".bin")])
        with open(os.path.join(dirpath, name), "rb") as fh:
            members.append(TrainedEnsembleMember(parameters=fh.read(), index=index))
    return Ensemble(members, failures=manifest.get("failures", 0)), manifest


def manifest_to_specs(manifest: dict) -> tuple[SmoothingConfig, BaseLearnerSpec]:
    """Rebuild the config/learner pair recorded in an ensemble manifest."""
    cfg = manifest["config"]
    config = SmoothingConfig(
        sigma=cfg["sigma"],
        ensemble_size=cfg["ensemble_size"],
        alpha=cfg["alpha"],
        master_seed=cfg["master_seed"],
    )
    lrn = manifest["learner"]
    learner = BaseLearnerSpec(
        kind=lrn["kind"],
        hidden_sizes=tuple(lrn["hidden_sizes"]),
        k=lrn["k"],
        epochs=lrn["epochs"],
        batch_size=lrn["batch_size"],
        learning_rate=lrn["learning_rate"],
        dp=None if lrn["dp"] is None else DPConfig(**lrn["dp"]),
    )
    return config, learner
