"""Sampler schemes for reverse-time jump processes.

Implements single-state steps for five methods: Euler (linearized
categorical), tau-leaping, uniformization (exact via thinning), and the
two-stage theta-RK-2 and theta-Trapezoidal schemes.  Batched trajectory
execution lives in :mod:`thetaleap.engine`; the step functions here are the
reference semantics and are what the engine must agree with in distribution.

Jump bookkeeping: a drawn update is rejected outright if any coordinate
draws more than one jump, which keeps every accepted update well-posed.
Extrapolated intensities are clamped at zero by default; clamping events are
counted so the positive fraction can be reported.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .ctmc import IntensityMap, StateSpaceSpec
from .errors import BoundViolationError, ConfigError, NumericalError, StepSizeError

METHODS = ("euler", "tau-leaping", "uniformization", "theta-rk2", "theta-trapezoidal")
CLAMP_AT_ZERO = "clamp-at-zero"
ERROR_ON_NEGATIVE = "error-on-negative"

# Relative slack when checking a dominating bound against observed totals.
BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Reverse-time discretization 0 = s_0 < ... < s_N = T - delta.

    ``rho[n] = (1 - theta) s_n + theta s_{n+1}`` are the section points at
    which two-stage methods evaluate the intermediate intensity.
    """

    points: np.ndarray
    theta: float
    horizon: float
    early_stop: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.flags.writeable = False
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigError("grid needs at least one interval")
        if pts[0] != 0.0 or np.any(np.diff(pts) <= 0):
            raise ConfigError("grid points must start at 0 and increase strictly")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        object.__setattr__(self, "points", pts)

    @property
    def n_intervals(self) -> int:
        return self.points.size - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def rho(self) -> np.ndarray:
        return self.points[:-1] + self.theta * self.deltas

    @property
    def kappa(self) -> float:
        """Largest step size."""
        return float(self.deltas.max())


def make_time_grid(
    T: float, delta: float, N: int, theta: float, schedule: str = "uniform"
) -> TimeGrid:
    """Uniform grid over [0, T - delta] with N steps and theta-section points."""
    if not (0.0 <= delta < T):
        raise ConfigError(f"need 0 <= delta < T, got delta={delta}, T={T}")
    if N < 1:
        raise ConfigError(f"need at least one step, got N={N}")
    if not (0.0 < theta <= 1.0):
        raise ConfigError(f"theta must lie in (0, 1], got {theta}")
    if schedule != "uniform":
        raise ConfigError(f"unknown schedule {schedule!r}")
    return TimeGrid(np.linspace(0.0, T - delta, N + 1), theta, T, delta)


def alpha_coefficients(theta: float) -> tuple[float, float]:
    """Extrapolation weights (alpha1, alpha2) with alpha1 - alpha2 = 1.

    alpha1 = 1 / (2 theta (1 - theta)) and
    alpha2 = ((1 - theta)^2 + theta^2) / (2 theta (1 - theta)); both diverge
    at theta in {0, 1}, where the trapezoidal split degenerates.
    """
    if not (0.0 < theta < 1.0):
        raise ConfigError(f"alpha coefficients need theta in (0, 1), got {theta}")
    denom = 2.0 * theta * (1.0 - theta)
    a1 = 1.0 / denom
    a2 = ((1.0 - theta) ** 2 + theta**2) / denom
    return a1, a2


@dataclass
class StepTelemetry:
    """Counters accumulated over one or many step updates.

    ``nfe`` counts intensity-oracle evaluations.  ``attempted_updates`` and
    ``drawn_jumps`` are bookkeeping beyond the core counters: the former
    normalizes rejection rates, the latter exposes pre-rejection Poisson
    counts for distributional checks.
    """

    nfe: int = 0
    rejected_steps: int = 0
    negative_intensity_events: int = 0
    total_intensity_terms: int = 0
    attempted_updates: int = 0
    drawn_jumps: int = 0
    final_fill_evals: int = 0

    @property
    def positivity_fraction(self) -> float:
        if self.total_intensity_terms == 0:
            return 1.0
        return 1.0 - self.negative_intensity_events / self.total_intensity_terms

    @property
    def rejection_fraction(self) -> float:
        if self.attempted_updates == 0:
            return 0.0
        return self.rejected_steps / self.attempted_updates

    def merge(self, other: "StepTelemetry") -> None:
        self.nfe += other.nfe
        self.rejected_steps += other.rejected_steps
        self.negative_intensity_events += other.negative_intensity_events
        self.total_intensity_terms += other.total_intensity_terms
        self.attempted_updates += other.attempted_updates
        self.drawn_jumps += other.drawn_jumps
        self.final_fill_evals += other.final_fill_evals


@runtime_checkable
class IntensityOracle(Protocol):
    """Callable contract supplying reverse-process intensities.

    ``rates(s, y)`` returns the intensity map at reverse time s out of state
    y.  ``total_bound(s_lo, s_hi)`` returns a constant dominating the total
    intensity over the window, as required by uniformization; oracles that
    cannot provide one should raise :class:`ConfigError`.
    """

    def rates(self, s: float, y) -> IntensityMap: ...

    def total_bound(self, s_lo: float, s_hi: float) -> float: ...


@dataclass(frozen=True)
class SolverConfig:
    """Method selection plus everything needed to reproduce a run."""

    method: str
    grid: TimeGrid
    seed: int
    clamp_policy: str = CLAMP_AT_ZERO

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.clamp_policy not in (CLAMP_AT_ZERO, ERROR_ON_NEGATIVE):
            raise ConfigError(f"unknown clamp policy {self.clamp_policy!r}")
        theta = self.grid.theta
        if self.method == "theta-trapezoidal" and not (0.0 < theta < 1.0):
            raise ConfigError(
                "theta-trapezoidal needs theta in (0, 1); the extrapolation "
                "weights are undefined at theta = 1"
            )
        if self.method == "theta-rk2" and theta > 0.5:
            warnings.warn(
                f"theta-rk2 with theta={theta} > 1/2: second-order accuracy is "
                "only guaranteed for theta <= 1/2",
                stacklevel=2,
            )


def _jump_coordinate(nu) -> int:
    return nu[0] if isinstance(nu, tuple) else 0


def _apply_jump(y, nu, space: StateSpaceSpec | None):
    if isinstance(nu, tuple):
        coord, val = nu
        out = list(y)
        out[coord] = val
        return tuple(out)
    target = y + nu
    if space is not None and space.periodic:
        target %= space.S
    return target


def tau_leaping_step(y, mu: IntensityMap, dt: float, rng: np.random.Generator, space=None):
    """One frozen-intensity leap: Poisson counts per jump, capped at one per coordinate.

    Any coordinate drawing two or more jumps voids the whole update (the
    state is returned unchanged and the rejection recorded); otherwise every
    coordinate with a single drawn jump is applied.
    """
    if dt <= 0:
        raise ConfigError(f"step size must be positive, got {dt}")
    tel = StepTelemetry(attempted_updates=1)
    per_coord: dict[int, list] = {}
    for nu, rate in mu.rates.items():
        if rate == 0.0:
            continue
        k = rng.poisson(rate * dt)
        tel.drawn_jumps += int(k)
        if k > 0:
            per_coord.setdefault(_jump_coordinate(nu), []).append((nu, int(k)))
    for jumps in per_coord.values():
        if sum(k for _, k in jumps) > 1:
            tel.rejected_steps += 1
            return y, tel
    for jumps in per_coord.values():
        y = _apply_jump(y, jumps[0][0], space)
    return y, tel


def euler_step(y, mu: IntensityMap, dt: float, rng: np.random.Generator, space=None):
    """Single categorical draw from linearized transition probabilities."""
    if dt <= 0:
        raise ConfigError(f"step size must be positive, got {dt}")
    jumps = [(nu, rate * dt) for nu, rate in mu.rates.items() if rate > 0.0]
    total = sum(p for _, p in jumps)
    if total >= 1.0:
        raise StepSizeError(
            f"total transition probability {total:.6g} >= 1; reduce the step size"
        )
    tel = StepTelemetry(attempted_updates=1)
    u = rng.random()
    acc = 0.0
    for nu, p in jumps:
        acc += p
        if u < acc:
            tel.drawn_jumps += 1
            return _apply_jump(y, nu, space), tel
    return y, tel


def _combine_rk2(mu0: IntensityMap, mustar: IntensityMap, theta: float, clamp: str, tel):
    w1 = 1.0 - 1.0 / (2.0 * theta)
    w2 = 1.0 / (2.0 * theta)
    combined = {}
    for nu, r0 in mu0.rates.items():
        if r0 <= 0.0:
            continue  # jumps not available from the current state are excluded
        val = w1 * r0 + w2 * mustar.rates.get(nu, 0.0)
        tel.total_intensity_terms += 1
        if val < 0.0:
            tel.negative_intensity_events += 1
            if clamp == ERROR_ON_NEGATIVE:
                raise NumericalError(f"negative combined intensity {val:.6g} for jump {nu}")
            val = 0.0
        combined[nu] = val
    return IntensityMap(combined)


def _combine_trapezoidal(mu0: IntensityMap, mustar: IntensityMap, theta: float, clamp: str, tel):
    a1, a2 = alpha_coefficients(theta)
    combined = {}
    for nu in set(mu0.rates) | set(mustar.rates):
        r0 = mu0.rates.get(nu, 0.0)
        rs = mustar.rates.get(nu, 0.0)
        if r0 <= 0.0 and rs <= 0.0:
            continue
        val = a1 * rs - a2 * r0
        tel.total_intensity_terms += 1
        if val < 0.0:
            tel.negative_intensity_events += 1
            if clamp == ERROR_ON_NEGATIVE:
                raise NumericalError(f"negative extrapolated intensity {val:.6g} for jump {nu}")
            val = 0.0
        combined[nu] = val
    return IntensityMap(combined)


def theta_rk2_step(
    y,
    n: int,
    grid: TimeGrid,
    oracle: IntensityOracle,
    clamp: str = CLAMP_AT_ZERO,
    *,
    rng: np.random.Generator,
    space: StateSpaceSpec | None = None,
):
    """Two-stage interpolation step over interval n.

    Stage one leaps a fractional step theta*Delta to probe the intensity at
    the section point; stage two re-leaps the full interval from the original
    state with the weighted intensity, restricted to jumps available there.
    """
    rng1, rng2 = rng.spawn(2)
    theta = grid.theta
    dt = grid.deltas[n]
    tel = StepTelemetry(nfe=1)
    mu0 = oracle.rates(grid.points[n], y)
    ystar, tel1 = tau_leaping_step(y, mu0, theta * dt, rng1, space)
    tel.merge(tel1)
    mustar = oracle.rates(grid.rho[n], ystar)
    tel.nfe += 1
    combined = _combine_rk2(mu0, mustar, theta, clamp, tel)
    out, tel2 = tau_leaping_step(y, combined, dt, rng2, space)
    tel.merge(tel2)
    return out, tel


def theta_trapezoidal_step(
    y,
    n: int,
    grid: TimeGrid,
    oracle: IntensityOracle,
    clamp: str = CLAMP_AT_ZERO,
    *,
    rng: np.random.Generator,
    space: StateSpaceSpec | None = None,
):
    """Two-stage extrapolation step over interval n.

    Stage one is identical to theta-RK-2; stage two continues *from the
    intermediate state* over the remaining (1-theta)*Delta with the
    extrapolated intensity (alpha1 mu* - alpha2 mu)_+.
    """
    if not (0.0 < grid.theta < 1.0):
        raise ConfigError("theta-trapezoidal needs theta in (0, 1)")
    rng1, rng2 = rng.spawn(2)
    theta = grid.theta
    dt = grid.deltas[n]
    tel = StepTelemetry(nfe=1)
    mu0 = oracle.rates(grid.points[n], y)
    ystar, tel1 = tau_leaping_step(y, mu0, theta * dt, rng1, space)
    tel.merge(tel1)
    mustar = oracle.rates(grid.rho[n], ystar)
    tel.nfe += 1
    combined = _combine_trapezoidal(mu0, mustar, theta, clamp, tel)
    out, tel2 = tau_leaping_step(ystar, combined, (1.0 - theta) * dt, rng2, space)
    tel.merge(tel2)
    return out, tel


def uniformization_sample(
    oracle: IntensityOracle,
    window: tuple[float, float],
    y0,
    rng: np.random.Generator,
    space: StateSpaceSpec | None = None,
):
    """Exact simulation over a window by thinning a dominating Poisson clock.

    Candidate times arrive at rate ``total_bound``; each candidate either
    applies one jump (with probability rate/bound) or nothing.  The declared
    bound is checked against every observed total; a violation is an error,
    never silently clipped.
    """
    s_lo, s_hi = window
    if not s_hi > s_lo:
        raise ConfigError(f"window must have positive length, got {window}")
    bound = float(oracle.total_bound(s_lo, s_hi))
    if not (np.isfinite(bound) and bound >= 0.0):
        raise ConfigError(f"dominating bound must be finite and nonnegative, got {bound}")
    tel = StepTelemetry()
    y = y0
    n_candidates = rng.poisson(bound * (s_hi - s_lo))
    if n_candidates == 0:
        return y, tel
    times = np.sort(rng.random(n_candidates)) * (s_hi - s_lo) + s_lo
    for s in times:
        mu = oracle.rates(float(s), y)
        tel.nfe += 1
        total = mu.total()
        if total > bound * (1.0 + BOUND_RTOL):
            raise BoundViolationError(
                f"total intensity {total:.6g} exceeds declared bound {bound:.6g} "
                f"at reverse time {s:.6g}"
            )
        u = rng.random() * bound
        if u >= total:
            continue  # thinned: no jump at this candidate
        acc = 0.0
        for nu, rate in mu.rates.items():
            acc += rate
            if u < acc:
                y = _apply_jump(y, nu, space)
                tel.drawn_jumps += 1
                break
    return y, tel


def run_sampler(config: SolverConfig, model, n_samples: int, workers: int = 1, collect_nfe: bool = False):
    """Sample ``n_samples`` independent trajectories through the grid.

    Results are bit-reproducible from (seed, n_samples) alone: randomness is
    keyed by fixed-size trajectory chunks, so the worker count only affects
    wall time.  Returns ``(samples, telemetry)`` (plus per-trajectory NFE
    counts when ``collect_nfe`` is set, as used by the exact-check study).
    """
    from . import engine

    if n_samples < 1:
        raise ConfigError(f"need at least one trajectory, got {n_samples}")
    return engine.run_batches(config, model, n_samples, workers=workers, collect_nfe=collect_nfe)
