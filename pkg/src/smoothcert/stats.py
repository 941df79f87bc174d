"""Statistical primitives shared by every certification routine.

Everything here is pure and reentrant: no global state, safe to call from
any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "check_probability",
    "std_normal_cdf",
    "std_normal_quantile",
    "NoncentralChiSq",
    "noncentral_chisq_cdf",
    "hoeffding_bounds",
    "hoeffding_offset",
]


def check_probability(value, name: str = "probability") -> float:
    """Validate and return a probability as a plain float.

    Raises ValueError unless 0 <= value <= 1 (NaN rejected).
    """
    v = float(value)
    if not (0.0 <= v <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return v


def std_normal_cdf(x):
    """Standard normal CDF.

    Backed by the erf-based scipy routine; max error is a few ulp, far
    below the 1e-12 budget the certification formulas need.  Accepts
    scalars or arrays.
    """
    return special.ndtr(x)


def std_normal_quantile(p) -> float:
    """Inverse standard normal CDF on the open interval (0, 1).

    p = 0 and p = 1 map to infinities and are rejected; callers that need
    saturated probabilities must clamp first (see certify.gaussian_radius).
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile argument must lie strictly inside (0, 1), got {p!r}")
    return float(special.ndtri(p))


@dataclass(frozen=True)
class NoncentralChiSq:
    """Noncentral chi-squared distribution with ``dof`` degrees of freedom.

    ``noncentrality`` is the standard lambda parameter (sum of squared
    means of the underlying normals).
    """

    dof: int
    noncentrality: float

    def __post_init__(self):
        if int(self.dof) != self.dof or self.dof < 1:
            raise ValueError(f"dof must be a positive integer, got {self.dof!r}")
        lam = float(self.noncentrality)
        if not (lam >= 0.0 and math.isfinite(lam)):
            raise ValueError(f"noncentrality must be finite and >= 0, got {self.noncentrality!r}")

    def cdf(self, x):
        return noncentral_chisq_cdf(x, self.dof, self.noncentrality)


def _poisson_window(h: float, tol: float) -> tuple[int, int]:
    """Index window [lo, hi] around the Poisson(h) mode holding >= 1 - tol mass."""
    half = 10.0 * math.sqrt(h) + 20.0
    while True:
        lo = max(0, int(math.floor(h - half)))
        hi = int(math.ceil(h + half))
        # P(J < lo) + P(J > hi) for J ~ Poisson(h), via gamma identities.
        outside = special.gammainc(hi + 1, h)
        if lo > 0:
            outside += special.gammaincc(lo, h)
        if outside <= tol:
            return lo, hi
        half *= 1.5


# Bernoulli-number coefficients of the Stirling series for log Gamma.
_STIRLING_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
)


def _log_gamma_mass(a, t):
    """log( t^a e^-t / Gamma(a+1) ) with small *absolute* error for any a.

    The naive expression loses ~a*log(t)*eps absolute accuracy to
    cancellation once a is large (the terms grow like 1e7 while the result
    stays O(1)), which would poison the mixture series at big
    noncentrality.  For a >= 30 the Stirling form

        a*(log1p(u) - u) - log(2 pi a)/2 - theta(a),   u = (t - a)/a

    keeps every intermediate the same size as the result.  Vectorized over
    ``t`` (array) for scalar a; t must be positive.
    """
    a = float(a)
    t = np.asarray(t, dtype=float)
    if a < 30.0:
        return a * np.log(t) - t - math.lgamma(a + 1.0)
    u = (t - a) / a
    theta = 0.0
    for i, coeff in enumerate(_STIRLING_COEFFS):
        theta += coeff / a ** (2 * i + 1)
    return a * (np.log1p(u) - u) - 0.5 * math.log(2.0 * math.pi * a) - theta


def noncentral_chisq_cdf(x, dof: int, noncentrality: float, tol: float = 1e-12):
    """CDF of the noncentral chi-squared distribution.

    Evaluates the Poisson mixture of central chi-squared CDFs

        F(x) = sum_j  Poisson(lambda/2)(j) * P(dof/2 + j, x/2)

    truncated to a window centered on the Poisson mode so that the
    discarded mass (and hence the truncation error) is below ``tol``.
    The central CDFs inside the window are generated by the downward
    recurrence P(a+1, t) = P(a, t) - t^a e^-t / Gamma(a+1), anchored at
    the mode, which keeps the evaluation stable for noncentrality up to
    1e6 while vectorizing over ``x``.

    ``x`` may be a scalar or array of nonnegative reals; the return
    matches its shape.
    """
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof!r}")
    lam = float(noncentrality)
    if not (lam >= 0.0 and math.isfinite(lam)):
        raise ValueError(f"noncentrality must be finite and >= 0, got {noncentrality!r}")

    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    t = np.atleast_1d(x_arr).ravel() / 2.0
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("x must be finite and >= 0")

    k = dof / 2.0
    if lam == 0.0:
        out = special.gammainc(k, t)
    else:
        out = np.zeros_like(t)
        pos = t > 0
        if np.any(pos):
            out[pos] = _mixture_cdf(k, lam, t[pos], tol)

    out = np.clip(out, 0.0, 1.0)
    if scalar:
        return float(out[0])
    return out.reshape(x_arr.shape)


def _mixture_cdf(k: float, lam: float, t: np.ndarray, tol: float) -> np.ndarray:
    """Poisson-mixture series over strictly positive half-points t = x/2.

    Exponents of the Poisson weights and of the central-CDF step terms are
    assembled from a Stirling-stabilized anchor at the Poisson mode plus
    ratio cumsums; once the window gets wide (huge noncentrality) the
    cumsums and dot products run in extended precision, keeping the
    absolute error near 1e-13 even at noncentrality 1e6 (where the window
    spans ~1e4 terms).  Narrow windows stay in fast float64.
    """
    h = lam / 2.0
    lo, hi = _poisson_window(h, tol / 2.0)
    ld = np.longdouble if hi - lo > 512 else np.float64
    js = np.arange(lo, hi + 1)
    mode = min(max(int(h), lo), hi)
    m = mode - lo

    # Poisson weights: stable anchor at the mode, ratio w_{j+1}/w_j = h/(j+1).
    log_h = np.log(np.asarray(h, dtype=ld))
    log_w = np.empty(js.size, dtype=ld)
    log_w[m] = float(_log_gamma_mass(mode, np.array(h)))
    if m + 1 < js.size:
        up_steps = log_h - np.log((js[m:-1] + 1).astype(ld))
        log_w[m + 1 :] = log_w[m] + np.cumsum(up_steps)
    if m > 0:
        down_steps = np.log(js[1 : m + 1].astype(ld)) - log_h
        log_w[:m] = log_w[m] + np.cumsum(down_steps[::-1])[::-1]
    w = np.exp(log_w)

    g_mode = special.gammainc(k + mode, t)
    acc = w[m] * g_mode.astype(ld)

    if js.size > 1:
        # Step terms D_j(t) = t^(k+j) e^-t / Gamma(k+j+1) for j = lo..hi-1
        # satisfy G_{j+1} = G_j - D_j; their log-ratios to the anchor row
        # are (j - mode) log t - sum of log(k + m + 1) factors.
        a_js = js[:-1]
        log_t = np.log(t.astype(ld))
        anchor_idx = min(m, a_js.size - 1)
        anchor_j = a_js[anchor_idx]
        ratio_c = np.zeros(a_js.size, dtype=ld)
        if anchor_idx + 1 < a_js.size:
            steps = np.log(k + (a_js[anchor_idx:-1] + 1).astype(ld))
            ratio_c[anchor_idx + 1 :] = np.cumsum(steps)
        if anchor_idx > 0:
            steps = np.log(k + a_js[1 : anchor_idx + 1].astype(ld))
            ratio_c[:anchor_idx] = -np.cumsum(steps[::-1])[::-1]
        log_d_anchor = _log_gamma_mass(k + anchor_j, t).astype(ld)
        delta = np.outer((a_js - anchor_j).astype(ld), log_t) - ratio_c[:, None]
        d = np.exp((log_d_anchor[None, :] + delta).astype(float)).astype(ld)

        # accumulate outward from the mode so rounding stays ~sqrt(h)*eps
        if m < js.size - 1:
            up = np.cumsum(d[m:], axis=0)
            acc = acc + w[m + 1 :] @ (g_mode[None, :] - up)
        if m > 0:
            down = np.cumsum(d[:m][::-1], axis=0)[::-1]
            acc = acc + w[:m] @ (g_mode[None, :] + down)
    return acc.astype(float)


def hoeffding_offset(n: int, alpha: float) -> float:
    """Two-sided Hoeffding confidence offset sqrt(ln(1/alpha) / (2 N))."""
    if int(n) != n or n < 1:
        raise ValueError(f"sample count must be a positive integer, got {n!r}")
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie strictly inside (0, 1), got {alpha!r}")
    return math.sqrt(math.log(1.0 / alpha) / (2.0 * n))


def hoeffding_bounds(p_hat_a, p_hat_b, n: int, alpha: float) -> tuple[float, float]:
    """Confidence-corrected (lower bound on top vote, upper bound on runner-up).

    Given empirical vote frequencies from ``n`` independent classifiers,
    returns

        p_a = max(0, p_hat_a - eps),   p_b = min(1, p_hat_b + eps)

    with eps = sqrt(ln(1/alpha) / (2 n)), each side holding with
    probability at least 1 - alpha.  The interval width shrinks as
    1/sqrt(n).
    """
    p_hat_a = check_probability(p_hat_a, "p_hat_a")
    p_hat_b = check_probability(p_hat_b, "p_hat_b")
    eps = hoeffding_offset(n, alpha)
    return max(0.0, p_hat_a - eps), min(1.0, p_hat_b + eps)
