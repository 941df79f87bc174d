"""Exact evaluation of the Gaussian-smoothed K-NN classifier.

The K-NN classifier here measures similarity by quantized squared
Euclidean distance: distances fall into L buckets [0, b_1), [b_1, b_2),
..., [b_{L-1}, inf), bucket 0 being the most similar.  Rank ties are broken
toward the lower training index, which makes the neighbor order a strict
total order for every noise draw.

Under per-row Gaussian training noise the bucket of each training row is an
independent categorical variable whose cell masses are noncentral
chi-squared CDF differences, and the smoothed class probabilities
q(y | x, D) can be computed exactly: partition on the identity, bucket and
per-class tally of the K-th ranked row, count earlier/later same-bucket
competitors with a pair of running count distributions, and sum.  A plain
Monte-Carlo sampler over the same quantized classifier serves as the
validation oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import CertifiedPrediction, GaussianSmoothing, gaussian_radius
from .data import Dataset
from .stats import noncentral_chisq_cdf

__all__ = [
    "SimilarityModel",
    "BucketProbabilities",
    "DPTables",
    "build_similarity_model",
    "bucket_probabilities",
    "exact_class_probabilities",
    "knn_certify",
    "knn_monte_carlo_oracle",
    "tally_vectors",
]

EXACT_SATURATION_CLAMP = 1e-12


@dataclass(frozen=True)
class SimilarityModel:
    """Quantization of squared Euclidean distance into similarity levels.

    ``boundaries`` holds the L-1 finite cut points; the bucket beyond the
    last boundary is open-ended.  Only the ordering of levels ever enters
    the algorithm; ``levels`` records the conventional descending ranks
    L, L-1, ..., 1 for buckets 0..L-1.
    """

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("need at least one finite boundary (two levels)")
        if b[0] <= 0 or np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be positive and strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def level_count(self) -> int:
        return self.boundaries.size + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.level_count, 0, -1)

    def bucket_of(self, squared_distance) -> np.ndarray:
        """Bucket index (0 = most similar) for squared distances."""
        return np.searchsorted(self.boundaries, squared_distance, side="right")


def _max_squared_distance(train: Dataset, refs: np.ndarray) -> float:
    t_sq = np.einsum("ij,ij->i", train.features, train.features)
    best = 0.0
    for start in range(0, refs.shape[0], 256):
        block = refs[start : start + 256]
        r_sq = np.einsum("ij,ij->i", block, block)
        cross = block @ train.features.T
        sq = r_sq[:, None] + t_sq[None, :] - 2.0 * cross
        best = max(best, float(sq.max()))
    return max(best, 0.0)


def build_similarity_model(
    train: Dataset, reference, levels: int = 200, sigma: float = 0.0
) -> SimilarityModel:
    """Uniform bucket grid sized from the observed train-to-reference spread.

    The grid covers squared distances [0, m] with 1.5x headroom past the
    largest distance the smoothed evaluation can plausibly see; whatever
    falls beyond m lands in the open last bucket.  Pass the smoothing scale
    ``sigma``: noise inflates every squared distance by d*sigma^2 in
    expectation (plus a ~sqrt spread), so a grid fit to clean distances
    alone would push all smoothed mass into the last bucket and the
    quantized classifier would degenerate to index order.
    """
    if int(levels) != levels or levels < 2:
        raise ValueError(f"need at least 2 levels, got {levels!r}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    refs = reference.features if isinstance(reference, Dataset) else np.atleast_2d(
        np.asarray(reference, dtype=float)
    )
    if refs.shape[1] != train.d:
        raise ValueError(f"reference dimension {refs.shape[1]} != train dimension {train.d}")
    base = _max_squared_distance(train, refs)
    reach = base
    if sigma > 0.0:
        d = train.d
        lam_max = base / sigma**2
        reach = base + sigma**2 * (d + 4.0 * math.sqrt(2.0 * (d + 2.0 * lam_max)))
    m = 1.5 * reach
    if m <= 0.0:
        raise ValueError(
            "all training rows coincide with all reference points and there is "
            "no smoothing noise; distance quantization is degenerate"
        )
    return SimilarityModel(np.linspace(0.0, m, int(levels))[1:])


@dataclass(frozen=True)
class BucketProbabilities:
    """Per-row bucket distribution of a noise-smoothed training set.

    ``p[i, l]`` is the probability that row i lands in bucket l; each row
    sums to 1.  ``alpha[i, l]`` is the tail mass P(bucket of i >= l), i.e.
    the probability row i is *no more similar* than level l; alpha[:, 0] is
    identically 1 and the virtual alpha[:, L] is 0.
    """

    p: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.p.shape != self.alpha.shape or self.p.ndim != 2:
            raise ValueError("p and alpha must be equal-shape (n, L) matrices")

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def level_count(self) -> int:
        return self.p.shape[1]

    def strictly_closer(self) -> np.ndarray:
        """P(bucket of row i < l), the chance i beats level l outright."""
        return 1.0 - self.alpha

    def closer_or_tied(self) -> np.ndarray:
        """P(bucket of row i <= l); the last column is identically 1."""
        out = np.empty_like(self.alpha)
        out[:, :-1] = 1.0 - self.alpha[:, 1:]
        out[:, -1] = 1.0
        return out


def bucket_probabilities(
    train: Dataset, x: np.ndarray, sigma: float, model: SimilarityModel
) -> BucketProbabilities:
    """Exact bucket distribution of every training row around test point x.

    With noise N(0, sigma^2 I) on row x_i, ||x_i + noise - x||^2 / sigma^2
    is noncentral chi-squared with d degrees of freedom and noncentrality
    ||x_i - x||^2 / sigma^2, so bucket masses are CDF differences at the
    scaled boundaries.
    """
    smoothing = GaussianSmoothing(sigma)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != train.d:
        raise ValueError(f"test point dimension {x.size} != train dimension {train.d}")
    n, d = train.n, train.d
    grid = model.boundaries / smoothing.sigma**2
    diffs = train.features - x
    lam = np.einsum("ij,ij->i", diffs, diffs) / smoothing.sigma**2

    cdf = np.empty((n, grid.size))
    for i in range(n):
        cdf[i] = noncentral_chisq_cdf(grid, d, lam[i])
    np.maximum.accumulate(cdf, axis=1, out=cdf)  # guard tiny non-monotone float noise

    L = model.level_count
    p = np.empty((n, L))
    p[:, 0] = cdf[:, 0]
    p[:, 1 : L - 1] = np.diff(cdf, axis=1)
    p[:, L - 1] = 1.0 - cdf[:, -1]
    np.clip(p, 0.0, 1.0, out=p)

    alpha = np.empty((n, L))
    alpha[:, 0] = 1.0
    alpha[:, 1:] = 1.0 - cdf
    return BucketProbabilities(p=p, alpha=alpha)


def tally_vectors(k: int, class_count: int, winner: int | None = None):
    """All top-K per-class count vectors (summing to k), optionally filtered
    to those whose argmax (lowest class index on ties) equals ``winner``."""

    def compositions(remaining, parts):
        if parts == 1:
            yield (remaining,)
            return
        for head in range(remaining + 1):
            for rest in compositions(remaining - head, parts - 1):
                yield (head,) + rest

    for tally in compositions(int(k), int(class_count)):
        if winner is None or max(range(class_count), key=lambda c: (tally[c], -c)) == winner:
            yield tally


@dataclass(frozen=True)
class DPTables:
    """Count distributions for one class across all levels.

    ``later_strict[i, l, r]``: probability that exactly r later-indexed
    rows of the class land strictly below bucket l (beat level l outright).
    ``earlier_tied[i, l, r]``: the earlier-indexed analogue counting rows at
    bucket <= l (which also win against row i at bucket l, by the index tie
    rule).  Entries with r > K are truncated away; they can never matter
    for a top-K tally.
    """

    later_strict: np.ndarray
    earlier_tied: np.ndarray


def _count_scan(success: np.ndarray, k: int) -> np.ndarray:
    """Running Bernoulli-count distributions, truncated at count k.

    ``success`` is an (m, L) matrix of per-member success probabilities.
    Returns (m+1, L, k+1) where row t is the distribution of the number of
    successes among the first t members; row 0 is the unit mass at zero
    (matching the recursion base case).
    """
    m, L = success.shape
    out = np.zeros((m + 1, L, k + 1))
    out[0, :, 0] = 1.0
    for t in range(m):
        s = success[t][:, None]
        prev = out[t]
        nxt = out[t + 1]
        np.multiply(prev, 1.0 - s, out=nxt)
        nxt[:, 1:] += prev[:, :-1] * s
    if __debug__:
        assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-9
    return out


def _class_tables(probs: BucketProbabilities, members: np.ndarray, k: int) -> DPTables:
    strict = probs.strictly_closer()
    tied = probs.closer_or_tied()
    n = probs.n
    # scan the class subsequence once, then map every dataset row to the
    # number of class members strictly after / strictly before it
    suffix = _count_scan(strict[members][::-1], k)
    prefix = _count_scan(tied[members], k)
    later = members.size - np.searchsorted(members, np.arange(n), side="right")
    earlier = np.searchsorted(members, np.arange(n), side="left")
    return DPTables(later_strict=suffix[later], earlier_tied=prefix[earlier])


def _convolve_counts(tables: DPTables, k: int) -> np.ndarray:
    """conv[i, l, v] = P(exactly v same-class competitors beat row i at level l)."""
    r_tab, q_tab = tables.later_strict, tables.earlier_tied
    conv = np.zeros_like(r_tab)
    for v in range(k + 1):
        for r in range(v + 1):
            conv[:, :, v] += r_tab[:, :, r] * q_tab[:, :, v - r]
    return conv


def exact_class_probabilities(
    probs: BucketProbabilities, labels, k: int, class_count: int | None = None
) -> np.ndarray:
    """Exact smoothed K-NN class probabilities q(y | x, D).

    Sums, over every winning tally, boundary row i and level l, the
    probability that row i is the K-th ranked neighbor at level l while the
    per-class counts of rows ranked above it realize the tally.  Per-class
    counts are conditionally independent given row i's level, so each term
    factorizes through the per-class tables.
    """
    labels = np.asarray(labels)
    n, L = probs.p.shape
    if labels.shape != (n,):
        raise ValueError("labels must match the bucket probability rows")
    if int(k) != k or not 1 <= k <= n:
        raise ValueError(f"k must be an integer in [1, {n}], got {k!r}")
    k = int(k)
    C = int(class_count) if class_count is not None else int(labels.max()) + 1

    conv = []
    is_class = []
    for c in range(C):
        members = np.flatnonzero(labels == c)
        conv.append(_convolve_counts(_class_tables(probs, members, k), k))
        is_class.append((labels == c)[:, None])

    q = np.zeros(C)
    for y in range(C):
        for tally in tally_vectors(k, C, winner=y):
            term = probs.p.copy()
            for c in range(C):
                v = tally[c]
                beaten_by_others = conv[c][:, :, v]
                # rows of class c occupy one tally slot themselves
                beaten_by_same = conv[c][:, :, v - 1] if v >= 1 else 0.0
                term *= np.where(is_class[c], beaten_by_same, beaten_by_others)
            q[y] += float(term.sum())
    return np.clip(q, 0.0, 1.0)


def knn_certify(
    train: Dataset, x: np.ndarray, sigma: float, k: int, model: SimilarityModel
) -> CertifiedPrediction:
    """Certified prediction of the smoothed K-NN classifier at test point x.

    The top-two class probabilities are exact, so no confidence correction
    is applied; abstention happens only on an exact tie.  Saturated
    probabilities (an exact 1 or 0) are clamped by 1e-12 inside the radius
    and flagged via ``exact_saturated``.
    """
    if train.class_count < 2:
        raise ValueError("certification needs at least two classes")
    probs = bucket_probabilities(train, x, sigma, model)
    q = exact_class_probabilities(probs, train.labels, k, train.class_count)
    y_a = int(np.argmax(q))
    p_a = float(q[y_a])
    rest = np.delete(q, y_a)
    p_b = float(rest.max())
    if p_a == p_b:
        return CertifiedPrediction(label=None, p_a=p_a, p_b=p_b, radius=None)
    saturated = p_a >= 1.0 - EXACT_SATURATION_CLAMP or p_b <= EXACT_SATURATION_CLAMP
    radius = gaussian_radius(
        p_a, p_b, GaussianSmoothing(sigma), eps_clamp=EXACT_SATURATION_CLAMP
    )
    return CertifiedPrediction(
        label=y_a, p_a=p_a, p_b=p_b, radius=radius, exact_saturated=saturated
    )


def knn_monte_carlo_oracle(
    train: Dataset,
    x: np.ndarray,
    sigma: float,
    k: int,
    model: SimilarityModel,
    samples: int,
    seed: int,
) -> np.ndarray:
    """Empirical smoothed K-NN class frequencies under sampled training noise.

    Runs the plain quantized-similarity K-NN classifier (same bucket grid,
    same lower-index tie rule) on ``samples`` independent noisy copies of
    the training features and reports per-class prediction frequencies.
    Validation oracle for exact_class_probabilities; deliberately simple.
    """
    if int(samples) != samples or samples < 1:
        raise ValueError(f"samples must be a positive integer, got {samples!r}")
    if int(k) != k or not 1 <= k <= train.n:
        raise ValueError(f"k must be an integer in [1, {train.n}], got {k!r}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(-1)
    n, d, C = train.n, train.d, train.class_count
    rng = np.random.default_rng(seed)
    counts = np.zeros(C, dtype=np.int64)
    chunk = max(1, min(int(samples), int(2e7) // max(n * d, 1)))
    row_key = np.arange(n)

    done = 0
    while done < samples:
        b = min(chunk, int(samples) - done)
        noisy = train.features[None, :, :] + sigma * rng.standard_normal((b, n, d))
        diffs = noisy - x
        sq = np.einsum("bij,bij->bi", diffs, diffs)
        buckets = model.bucket_of(sq)
        # lower index wins inside a bucket: compose an unambiguous sort key
        order = np.argsort(buckets * n + row_key, axis=1)[:, :k]
        top_labels = train.labels[order]
        tallies = np.zeros((b, C), dtype=np.int64)
        np.add.at(tallies, (np.repeat(np.arange(b), k), top_labels.ravel()), 1)
        preds = np.argmax(tallies, axis=1)
        counts += np.bincount(preds, minlength=C)
        done += b
    return counts / float(samples)
