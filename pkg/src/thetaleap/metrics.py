"""Statistical evaluation: empirical laws, KL divergence, bootstrap CIs,
plug-in noise floor, and log-log convergence-order fits.

KL against an empirical law with empty cells is reported as a flagged
infinity rather than smoothed; an optional additive-smoothing mode exists
but is off by default since the plug-in estimator is the quantity of
interest here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctmc import ProbabilityVector
from .errors import ConfigError, DataError, NumericalError

BOOTSTRAP_DEFAULT_RESAMPLES = 1000
BOOTSTRAP_DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Counts over [0, S); frequencies are counts / total."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        c.flags.writeable = False
        if c.ndim != 1 or c.size < 1:
            raise DataError("counts must be a nonempty 1-D array")
        if np.any(c < 0):
            raise DataError("counts must be nonnegative")
        if c.sum() < 1:
            raise DataError("empirical distribution needs at least one sample")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.total


@dataclass(frozen=True)
class KLReport:
    """Plug-in KL estimate with a percentile bootstrap interval."""

    estimate: float
    ci_lo: float
    ci_hi: float
    level: float
    n_resamples: int
    n_samples: int
    n_infinite_resamples: int = 0

    @property
    def has_infinite_resamples(self) -> bool:
        return self.n_infinite_resamples > 0


@dataclass(frozen=True)
class ConvergenceFit:
    """OLS fit of log KL against log N; order of convergence is -slope."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def order(self) -> float:
        return -self.slope


def empirical_distribution(samples: np.ndarray, n_states: int) -> EmpiricalDistribution:
    """Exact counts of integer samples over [0, n_states)."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise DataError("need at least one sample")
    if np.any(samples < 0) or np.any(samples >= n_states):
        raise DataError(f"samples must lie in [0, {n_states})")
    return EmpiricalDistribution(np.bincount(samples, minlength=n_states))


def _as_probs(q) -> np.ndarray:
    if isinstance(q, EmpiricalDistribution):
        return q.frequencies
    if isinstance(q, ProbabilityVector):
        return q.probs
    return np.asarray(q, dtype=float)


def kl_divergence(p, q, smoothing: float = 0.0) -> float:
    """Plug-in KL divergence sum_i p_i log(p_i / q_i) in nats.

    Returns inf when q lacks mass somewhere p has it.  ``smoothing`` adds
    that many pseudo-counts per cell of q before normalizing (off by
    default).
    """
    pv = _as_probs(p)
    qv = _as_probs(q)
    if pv.shape != qv.shape:
        raise DataError(f"shape mismatch: {pv.shape} vs {qv.shape}")
    if smoothing > 0.0:
        qv = (qv + smoothing) / (1.0 + smoothing * qv.size)
    support = pv > 0.0
    if np.any(qv[support] == 0.0):
        return math.inf
    return float(np.sum(pv[support] * np.log(pv[support] / qv[support])))


def noise_floor(n_samples: int, support: int) -> float:
    """First-order bias (support-1)/(2M) of the plug-in KL estimator at p = q."""
    if n_samples < 1 or support < 2:
        raise ConfigError("need n_samples >= 1 and support >= 2")
    return (support - 1) / (2.0 * n_samples)


def bootstrap_kl_ci(
    samples,
    p0: ProbabilityVector,
    n_resamples: int = BOOTSTRAP_DEFAULT_RESAMPLES,
    level: float = BOOTSTRAP_DEFAULT_LEVEL,
    rng: np.random.Generator | None = None,
) -> KLReport:
    """Percentile bootstrap interval for the plug-in KL estimate.

    ``samples`` may be raw integer draws or an EmpiricalDistribution.
    Resampling M draws with replacement is done as one multinomial draw over
    the observed frequencies per resample.  Infinite resample KLs are
    counted and excluded from the percentile computation.
    """
    if n_resamples < 2:
        raise ConfigError(f"need at least 2 resamples, got {n_resamples}")
    if not (0.0 < level < 1.0):
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    if rng is None:
        rng = np.random.default_rng(0)
    emp = (
        samples
        if isinstance(samples, EmpiricalDistribution)
        else empirical_distribution(np.asarray(samples), p0.n_states)
    )
    m = emp.total
    estimate = kl_divergence(p0, emp)
    freqs = emp.frequencies
    draws = rng.multinomial(m, freqs, size=n_resamples)
    kls = np.empty(n_resamples)
    for b in range(n_resamples):
        kls[b] = kl_divergence(p0, draws[b] / m)
    finite = np.isfinite(kls)
    n_inf = int(n_resamples - finite.sum())
    if not finite.any():
        return KLReport(estimate, math.inf, math.inf, level, n_resamples, m, n_inf)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(kls[finite], [tail, 1.0 - tail])
    # percentile intervals should bracket the plug-in estimate up to
    # resampling noise: one resample standard error plus the (support-1)/(2M)
    # first-order bias that resampling re-adds on top of the estimate
    slack = float(kls[finite].std()) + noise_floor(m, p0.n_states)
    if math.isfinite(estimate) and not (lo - slack <= estimate <= hi + slack):
        raise NumericalError(
            f"bootstrap interval [{lo:.6g}, {hi:.6g}] does not bracket the "
            f"estimate {estimate:.6g} within the resampling slack {slack:.3g}"
        )
    return KLReport(estimate, float(lo), float(hi), level, n_resamples, m, n_inf)


def fit_loglog_slope(points, min_steps: int | None = None) -> ConvergenceFit:
    """Least-squares slope of log KL vs log N over (N, KL) pairs.

    ``min_steps`` drops points below a step-count threshold (used to exclude
    the pre-asymptotic regime); at least two points must survive.
    """
    kept = [(n, kl) for n, kl in points if min_steps is None or n >= min_steps]
    if len(kept) < 2:
        raise DataError(f"need at least 2 points to fit, got {len(kept)}")
    n_arr = np.array([n for n, _ in kept], dtype=float)
    kl_arr = np.array([kl for _, kl in kept], dtype=float)
    if np.any(kl_arr <= 0.0) or not np.all(np.isfinite(kl_arr)):
        raise ConfigError("log-log fit needs finite positive KL values")
    x = np.log(n_arr)
    y = np.log(kl_arr)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return ConvergenceFit(float(slope), float(intercept), min(1.0, max(0.0, r2)), len(kept))
