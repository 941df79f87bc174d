"""Closed-form certified-robustness bounds for smoothed training.

Covers Gaussian and Uniform smoothing of the training features, the
disjoint-support impossibility check for compactly supported noise, and an
executable worst-case construction showing the Gaussian bound cannot be
improved in the binary case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .stats import check_probability, std_normal_cdf, std_normal_quantile

__all__ = [
    "GaussianSmoothing",
    "UniformSmoothing",
    "AttackMagnitude",
    "CertifiedPrediction",
    "CertifyOutcome",
    "WitnessReport",
    "gaussian_radius",
    "gaussian_radius_single_pattern",
    "uniform_certified",
    "certify_attack",
    "tightness_witness",
]


@dataclass(frozen=True)
class GaussianSmoothing:
    """Isotropic Gaussian training noise N(0, sigma^2 I) per training row."""

    sigma: float

    def __post_init__(self):
        s = float(self.sigma)
        if not (s > 0.0 and math.isfinite(s)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")


@dataclass(frozen=True)
class UniformSmoothing:
    """Coordinatewise Uniform[lower, upper] training noise per training row."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (float(self.upper) > float(self.lower)):
            raise ValueError(f"need upper > lower, got [{self.lower!r}, {self.upper!r}]")

    @property
    def width(self) -> float:
        return float(self.upper) - float(self.lower)


@dataclass(frozen=True)
class AttackMagnitude:
    """Size of a poisoning attack: the pattern vectors added to training rows.

    ``patterns`` holds distinct pattern vectors, ``multiplicities`` how many
    rows carry each one.  An empty attack (no poisoned rows) is legal and
    has total size 0.
    """

    patterns: tuple = ()
    multiplicities: tuple = ()
    norm_only: bool = False

    def __post_init__(self):
        if len(self.patterns) != len(self.multiplicities):
            raise ValueError("patterns and multiplicities must have equal length")
        pats = tuple(np.asarray(p, dtype=float) for p in self.patterns)
        for p in pats:
            if not np.all(np.isfinite(p)):
                raise ValueError("pattern coordinates must be finite")
        for m in self.multiplicities:
            if int(m) != m or m < 0:
                raise ValueError(f"multiplicity must be a nonnegative integer, got {m!r}")
        object.__setattr__(self, "patterns", pats)
        object.__setattr__(self, "multiplicities", tuple(int(m) for m in self.multiplicities))

    @classmethod
    def from_patterns(cls, patterns) -> "AttackMagnitude":
        """One entry per poisoned row, each with its own pattern vector."""
        pats = tuple(patterns)
        return cls(pats, (1,) * len(pats))

    @classmethod
    def from_shared_pattern(cls, pattern, poisoned_count: int) -> "AttackMagnitude":
        """A single pattern vector replicated across ``poisoned_count`` rows."""
        if poisoned_count == 0:
            return cls()
        return cls((pattern,), (int(poisoned_count),))

    @classmethod
    def from_norm(cls, pattern_norm: float, poisoned_count: int) -> "AttackMagnitude":
        """Summary form: only the shared pattern's L2 norm is known.

        Sufficient for the Gaussian certificate (which sees only the
        aggregate magnitude).  The Uniform certificate needs the actual
        coordinates; concentrating the norm on one coordinate would
        overstate its right-hand side, so uniform_certified rejects
        norm-only attacks instead of guessing a layout.
        """
        if pattern_norm < 0:
            raise ValueError("pattern_norm must be nonnegative")
        if poisoned_count == 0 or pattern_norm == 0.0:
            return cls()
        return cls((np.array([float(pattern_norm)]),), (int(poisoned_count),), norm_only=True)

    @property
    def poisoned_count(self) -> int:
        return sum(self.multiplicities)

    def total_l2(self) -> float:
        """Aggregate magnitude sqrt(sum_i ||delta_i||_2^2) over poisoned rows."""
        return math.sqrt(
            sum(m * float(np.dot(p, p)) for p, m in zip(self.patterns, self.multiplicities))
        )


@dataclass(frozen=True)
class CertifiedPrediction:
    """Outcome of one smoothed prediction.

    ``label is None`` means ABSTAIN, which happens exactly when the top-class
    lower bound does not beat the runner-up upper bound; a radius is present
    exactly when a label is.  ``exact_saturated`` marks radii computed after
    clamping exact probabilities of 0/1 (see gaussian_radius).
    """

    label: int | None
    p_a: float
    p_b: float
    radius: float | None
    exact_saturated: bool = False

    def __post_init__(self):
        check_probability(self.p_a, "p_a")
        check_probability(self.p_b, "p_b")
        if self.label is None:
            if self.radius is not None:
                raise ValueError("abstaining prediction cannot carry a radius")
            if self.p_a > self.p_b:
                raise ValueError("abstention requires p_a <= p_b")
        else:
            if self.radius is None or not self.radius > 0.0:
                raise ValueError("a committed prediction requires a positive radius")
            if not self.p_a > self.p_b:
                raise ValueError("a committed prediction requires p_a > p_b")

    @property
    def abstained(self) -> bool:
        return self.label is None


def _clamped_quantile_gap(p_a: float, p_b: float, eps_clamp: float) -> float:
    if not (0.0 < eps_clamp < 0.5):
        raise ValueError(f"eps_clamp must lie in (0, 0.5), got {eps_clamp!r}")
    p_a = min(p_a, 1.0 - eps_clamp)
    p_b = max(p_b, eps_clamp)
    if p_a <= p_b:
        return 0.0
    return std_normal_quantile(p_a) - std_normal_quantile(p_b)


def gaussian_radius(p_a, p_b, smoothing: GaussianSmoothing, eps_clamp: float = 1e-12) -> float:
    """Certified aggregate pattern budget under Gaussian training noise.

    Returns R = (sigma / 2) (PhiInv(p_a) - PhiInv(p_b)); an attack with
    sqrt(sum_i ||delta_i||^2) strictly below R cannot change the smoothed
    prediction.  Returns 0 when p_a <= p_b.  Probabilities of exactly 1 or 0
    are clamped by ``eps_clamp`` before the quantile so reports never carry
    infinities; callers flag such saturated radii separately.
    """
    p_a = check_probability(p_a, "p_a")
    p_b = check_probability(p_b, "p_b")
    if p_a <= p_b:
        return 0.0
    return 0.5 * smoothing.sigma * _clamped_quantile_gap(p_a, p_b, eps_clamp)


def gaussian_radius_single_pattern(
    p_a, p_b, smoothing: GaussianSmoothing, r: int, eps_clamp: float = 1e-12
) -> float:
    """Per-pattern L2 budget when one shared pattern poisons ``r`` rows.

    The aggregate budget splits evenly across the r copies, giving
    gaussian_radius(...) / sqrt(r) for each.
    """
    if int(r) != r or r < 1:
        raise ValueError(f"poisoned row count must be a positive integer, got {r!r}")
    return gaussian_radius(p_a, p_b, smoothing, eps_clamp) / math.sqrt(r)


def uniform_certified(p_a, p_b, smoothing: UniformSmoothing, attack: AttackMagnitude) -> bool:
    """Certification test under Uniform[lower, upper] training noise.

    Checks the strict inequality

        1 - (p_a - p_b)/2  <  prod_i prod_j (1 - |delta_ij| / width)_+

    over every poisoned row i and coordinate j.  Any coordinate at least as
    large as the noise support width zeroes the right side, so such attacks
    are never certifiable no matter how confident the classifier is.
    """
    p_a = check_probability(p_a, "p_a")
    p_b = check_probability(p_b, "p_b")
    if attack.norm_only:
        raise ValueError(
            "the uniform certificate needs per-coordinate pattern magnitudes; "
            "a norm-only attack summary cannot be checked soundly"
        )
    lhs = 1.0 - (p_a - p_b) / 2.0
    rhs = 1.0
    for pattern, mult in zip(attack.patterns, attack.multiplicities):
        factors = 1.0 - np.abs(pattern) / smoothing.width
        if np.any(factors <= 0.0):
            return False
        rhs *= float(np.prod(factors)) ** mult
    return lhs < rhs


@dataclass(frozen=True)
class CertifyOutcome:
    certified: bool
    reason: str

    def __bool__(self) -> bool:
        return self.certified


def certify_attack(pred: CertifiedPrediction, attack: AttackMagnitude, smoothing) -> CertifyOutcome:
    """Decide whether ``pred`` certifiably survives the given attack.

    Gaussian smoothing compares the aggregate attack magnitude against the
    prediction's radius (strict inequality: ties are not certified);
    Uniform smoothing delegates to uniform_certified.  Abstentions are
    never certified.
    """
    if pred.abstained:
        return CertifyOutcome(False, "abstain")
    if isinstance(smoothing, GaussianSmoothing):
        if attack.total_l2() < pred.radius:
            return CertifyOutcome(True, "attack-within-radius")
        return CertifyOutcome(False, "attack-exceeds-radius")
    if isinstance(smoothing, UniformSmoothing):
        if uniform_certified(pred.p_a, pred.p_b, smoothing, attack):
            return CertifyOutcome(True, "uniform-condition-met")
        return CertifyOutcome(False, "uniform-condition-violated")
    raise TypeError(f"unsupported smoothing family: {smoothing!r}")


@dataclass(frozen=True)
class WitnessReport:
    """Monte-Carlo evidence that the Gaussian radius is not improvable.

    ``origin_estimate`` is the constructed worst-case classifier's smoothed
    top-class probability on clean training features (must reproduce p_a);
    ``shifted_estimate`` is the same probability after shifting the training
    features by ``shift`` = overshoot x radius along the adversarial
    direction (must drop below 1/2: the prediction flips just past the
    certified radius).
    """

    p_a: float
    sigma: float
    overshoot: float
    mc_samples: int
    radius: float
    shift: float
    origin_estimate: float
    origin_stderr: float
    shifted_estimate: float
    shifted_stderr: float
    origin_consistent: bool
    prediction_flipped: bool
    degenerate: bool
    resolved: bool

    def contract_holds(self) -> bool:
        return self.origin_consistent and self.prediction_flipped


def tightness_witness(
    p_a, sigma: float, overshoot: float, mc_samples: int, seed: int
) -> WitnessReport:
    """Construct and sample the worst-case binary base classifier.

    In the binary Gaussian case (runner-up probability 1 - p_a) the optimal
    likelihood-ratio tests reduce, along the direction of the training-set
    shift, to a one-dimensional threshold at PhiInv(p_a) on the projected
    noise.  The induced classifier matches the class probabilities exactly
    at the origin, yet flips as soon as the shift exceeds the certified
    radius sigma * PhiInv(p_a); this routine estimates both smoothed
    probabilities by Monte Carlo.

    A report is always returned: if the overshoot is too small to resolve at
    this sample size the ``degenerate`` flag is set, and ``resolved`` records
    whether the standard errors are below 0.01.
    """
    p_a = check_probability(p_a, "p_a")
    if not 0.5 < p_a < 1.0:
        raise ValueError(f"binary witness needs 0.5 < p_a < 1, got {p_a!r}")
    if not overshoot > 1.0:
        raise ValueError(f"overshoot must exceed 1, got {overshoot!r}")
    if int(mc_samples) != mc_samples or mc_samples < 1:
        raise ValueError(f"mc_samples must be a positive integer, got {mc_samples!r}")
    smoothing = GaussianSmoothing(sigma)

    threshold = std_normal_quantile(p_a)
    radius = gaussian_radius(p_a, 1.0 - p_a, smoothing)
    shift = overshoot * radius

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(int(mc_samples))
    origin_estimate = float(np.mean(z < threshold))
    shifted_estimate = float(np.mean(z + shift / smoothing.sigma < threshold))

    m = int(mc_samples)
    origin_stderr = math.sqrt(p_a * (1.0 - p_a) / m)
    shifted_stderr = math.sqrt(
        max(shifted_estimate * (1.0 - shifted_estimate), 1.0 / m) / m
    )

    expected_shifted = float(std_normal_cdf((1.0 - overshoot) * threshold))
    resolution = 4.0 * math.sqrt(0.25 / m)
    degenerate = (0.5 - expected_shifted) < resolution

    return WitnessReport(
        p_a=p_a,
        sigma=smoothing.sigma,
        overshoot=float(overshoot),
        mc_samples=m,
        radius=radius,
        shift=shift,
        origin_estimate=origin_estimate,
        origin_stderr=origin_stderr,
        shifted_estimate=shifted_estimate,
        shifted_stderr=shifted_stderr,
        origin_consistent=abs(origin_estimate - p_a) <= 4.0 * origin_stderr,
        prediction_flipped=shifted_estimate < 0.5,
        degenerate=degenerate,
        resolved=max(origin_stderr, shifted_stderr) <= 0.01,
    )
