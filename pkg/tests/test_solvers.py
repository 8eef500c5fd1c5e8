import numpy as np
import pytest

from thetaleap.ctmc import IntensityMap, StateSpaceSpec
from thetaleap.errors import BoundViolationError, ConfigError, NumericalError, StepSizeError
from thetaleap.solvers import (
    ERROR_ON_NEGATIVE,
    SolverConfig,
    alpha_coefficients,
    euler_step,
    make_time_grid,
    tau_leaping_step,
    theta_rk2_step,
    theta_trapezoidal_step,
    uniformization_sample,
)

from kernel_oracle import two_state_marginal


class ConstantOracle:
    """State-independent, time-independent intensity over given jumps."""

    def __init__(self, rates, bound=None):
        self._rates = dict(rates)
        self._bound = bound if bound is not None else sum(rates.values())

    def rates(self, s, y):
        return IntensityMap(dict(self._rates))

    def total_bound(self, s_lo, s_hi):
        return self._bound


class TwoStateOracle:
    """Forward 2-state chain (rates a: 0->1, b: 1->0) as a jump oracle."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def rates(self, s, y):
        return IntensityMap({1: self.a} if y == 0 else {-1: self.b})

    def total_bound(self, s_lo, s_hi):
        return max(self.a, self.b)


# time grids


def test_make_time_grid_arithmetic_example():
    g = make_time_grid(12.0, 0.0, 4, 0.5)
    assert np.array_equal(g.points, [0.0, 3.0, 6.0, 9.0, 12.0])
    assert np.array_equal(g.rho, [1.5, 4.5, 7.5, 10.5])
    assert g.kappa == 3.0


def test_make_time_grid_theta_one_sections_at_right_endpoint():
    g = make_time_grid(2.0, 0.0, 4, 1.0)
    assert np.allclose(g.rho, g.points[1:])


def test_make_time_grid_single_interval():
    g = make_time_grid(1.0, 1e-3, 1, 0.5)
    assert g.n_intervals == 1
    assert np.allclose(g.points, [0.0, 1.0 - 1e-3])


def test_make_time_grid_section_point_identity():
    g = make_time_grid(7.3, 0.1, 9, 0.37)
    assert np.abs((g.rho - g.points[:-1]) - 0.37 * g.deltas).max() < 1e-15
    assert np.all(g.rho > g.points[:-1]) and np.all(g.rho <= g.points[1:])


def test_make_time_grid_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        make_time_grid(1.0, 1.0, 4, 0.5)  # delta == T
    with pytest.raises(ConfigError):
        make_time_grid(1.0, 0.0, 0, 0.5)
    with pytest.raises(ConfigError):
        make_time_grid(1.0, 0.0, 4, 0.0)
    with pytest.raises(ConfigError):
        make_time_grid(1.0, 0.0, 4, 0.5, schedule="geometric")


# alpha coefficients


def test_alpha_values_half_and_third():
    assert alpha_coefficients(0.5) == (2.0, 1.0)
    a1, a2 = alpha_coefficients(1 / 3)
    assert abs(a1 - 2.25) < 1e-14 and abs(a2 - 1.25) < 1e-14


def test_alpha_identity_random_thetas():
    rng = np.random.default_rng(0)
    for theta in rng.uniform(0.01, 0.99, size=1000):
        a1, a2 = alpha_coefficients(theta)
        assert abs((a1 - a2) - 1.0) < 1e-12


def test_alpha_rejects_endpoints():
    for theta in (0.0, 1.0):
        with pytest.raises(ConfigError):
            alpha_coefficients(theta)


# tau-leaping


def test_tau_leap_zero_rates_never_moves():
    rng = np.random.default_rng(1)
    y, tel = tau_leaping_step(3, IntensityMap({}), 0.5, rng)
    assert y == 3 and tel.rejected_steps == 0


def test_tau_leap_single_jump_probabilities():
    # P(applied) = lam*e^-lam, P(reject) = 1 - e^-lam (1+lam) at lam = 0.1
    lam = 0.1
    n = 200_000
    rng = np.random.default_rng(2)
    applied = rejected = 0
    for _ in range(n):
        y, tel = tau_leaping_step(0, IntensityMap({1: 1.0}), lam, rng)
        applied += y == 1
        rejected += tel.rejected_steps
    p_apply = lam * np.exp(-lam)
    p_reject = 1 - np.exp(-lam) * (1 + lam)
    for freq, p in ((applied / n, p_apply), (rejected / n, p_reject)):
        se = np.sqrt(p * (1 - p) / n)
        assert abs(freq - p) < 4 * se


def test_tau_leap_rejects_multijump_per_coordinate():
    # two jump types on one coordinate with enormous rates: always >= 2 draws
    rng = np.random.default_rng(3)
    mu = IntensityMap({(0, 1): 50.0, (0, 2): 50.0})
    y, tel = tau_leaping_step((0,), mu, 1.0, rng)
    assert y == (0,) and tel.rejected_steps == 1


def test_tau_leap_applies_at_most_one_jump_per_coordinate():
    rng = np.random.default_rng(4)
    mu = IntensityMap({(0, 1): 0.8, (1, 1): 0.8})
    for _ in range(500):
        start = (0, 0)
        y, tel = tau_leaping_step(start, mu, 1.0, rng)
        changed = sum(a != b for a, b in zip(y, start))
        if tel.rejected_steps:
            assert y == start
        else:
            assert changed <= 2  # at most one change per coordinate
            assert all(v in (0, 1) for v in y)


def test_tau_leap_periodic_wrap():
    space = StateSpaceSpec(d=1, S=5, periodic=True)
    rng = np.random.default_rng(5)
    moved = False
    for _ in range(200):
        y, tel = tau_leaping_step(4, IntensityMap({1: 3.0}), 0.3, rng, space=space)
        assert y in (4, 0)
        moved |= y == 0
    assert moved


# euler


def test_euler_zero_rates_stays():
    rng = np.random.default_rng(6)
    y, _ = euler_step(2, IntensityMap({}), 1.0, rng)
    assert y == 2


def test_euler_jump_probability():
    rng = np.random.default_rng(7)
    n = 100_000
    jumps = sum(euler_step(0, IntensityMap({1: 0.25}), 1.0, rng)[0] for _ in range(n))
    se = np.sqrt(0.25 * 0.75 / n)
    assert abs(jumps / n - 0.25) < 4 * se


def test_euler_step_too_large():
    rng = np.random.default_rng(8)
    with pytest.raises(StepSizeError):
        euler_step(0, IntensityMap({1: 2.0}), 1.0, rng)


def test_euler_vs_tau_leap_total_variation_is_second_order():
    # Exact one-step laws on a single jump: tau applies with lam*e^-lam,
    # euler with lam; their TV gap lam(1-e^-lam) ~= lam^2 shows up in the
    # empirical frequencies.
    lam = 0.2
    n = 200_000
    rng = np.random.default_rng(9)
    tau_jumps = sum(
        tau_leaping_step(0, IntensityMap({1: 1.0}), lam, rng)[0] for _ in range(n)
    )
    eul_jumps = sum(euler_step(0, IntensityMap({1: 1.0}), lam, rng)[0] for _ in range(n))
    gap = eul_jumps / n - tau_jumps / n
    expected_gap = lam * (1 - np.exp(-lam))  # = lam^2 + O(lam^3)
    se = np.sqrt(2 * lam / n)
    assert abs(gap - expected_gap) < 4 * se
    assert expected_gap < lam**2 * 1.1


# two-stage steps


def test_two_stage_zero_intensity_is_identity():
    grid = make_time_grid(1.0, 0.0, 4, 0.5)
    oracle = ConstantOracle({})
    rng = np.random.default_rng(10)
    for step in (theta_rk2_step, theta_trapezoidal_step):
        y, tel = step(7, 0, grid, oracle, rng=rng)
        assert y == 7
        assert tel.nfe == 2


def test_rk2_half_theta_uses_intermediate_intensity_only():
    # with theta=1/2 the stage-2 weights are (0, 1); a jump whose rate
    # vanishes at the section point can never fire in stage 2
    class Vanishing:
        def rates(self, s, y):
            return IntensityMap({1: 2.0 if s < 0.25 else 0.0})

    grid = make_time_grid(1.0, 0.0, 2, 0.5)
    rng = np.random.default_rng(11)
    outcomes = set()
    for _ in range(200):
        y, _ = theta_rk2_step(0, 0, grid, Vanishing(), rng=rng)
        outcomes.add(y)
    assert outcomes == {0}  # stage 2 weight on mu_{s_n} is zero; mu* is zero


def test_trapezoidal_constant_intensity_total_counts_poisson():
    # alpha1 - alpha2 = 1 makes the two-stage draw Poisson(mu * dt) overall
    mu, dt, theta = 0.8, 1.0, 0.3
    grid = make_time_grid(dt, 0.0, 1, theta)
    oracle = ConstantOracle({1: mu})
    space = StateSpaceSpec(d=1, S=1000, periodic=True)
    rng = np.random.default_rng(12)
    n = 30_000
    counts = np.zeros(n, dtype=int)
    for i in range(n):
        _, tel = theta_trapezoidal_step(0, 0, grid, oracle, rng=rng, space=space)
        counts[i] = tel.drawn_jumps
    lam = mu * dt
    mean, var = counts.mean(), counts.var()
    assert abs(mean - lam) < 4 * np.sqrt(lam / n)
    assert abs(var - lam) < 5 * np.sqrt(2 * lam**2 / n) + 0.01


def test_trapezoidal_rejects_theta_one():
    grid = make_time_grid(1.0, 0.0, 2, 1.0)
    with pytest.raises(ConfigError):
        theta_trapezoidal_step(0, 0, grid, ConstantOracle({1: 0.5}), rng=np.random.default_rng(0))


def test_negative_intensity_clamping_and_telemetry():
    # stage-1 rate large, section-point rate zero: trapezoidal extrapolation
    # alpha1*0 - alpha2*mu is negative and must be clamped, not drawn
    class Decaying:
        def rates(self, s, y):
            return IntensityMap({1: 1.0 if s < 0.1 else 0.0})

    grid = make_time_grid(1.0, 0.0, 2, 0.5)
    rng = np.random.default_rng(13)
    saw_negative = False
    for _ in range(100):
        y, tel = theta_trapezoidal_step(0, 0, grid, Decaying(), rng=rng)
        saw_negative |= tel.negative_intensity_events > 0
        assert tel.total_intensity_terms >= tel.negative_intensity_events
    assert saw_negative


def test_error_on_negative_policy_raises():
    class Decaying:
        def rates(self, s, y):
            return IntensityMap({1: 1.0 if s < 0.1 else 0.0})

    grid = make_time_grid(1.0, 0.0, 2, 0.5)
    with pytest.raises(NumericalError):
        for _ in range(100):
            theta_trapezoidal_step(
                0, 0, grid, Decaying(), clamp=ERROR_ON_NEGATIVE, rng=np.random.default_rng(14)
            )


def test_solver_config_validation_and_warning():
    grid = make_time_grid(1.0, 0.0, 2, 0.8)
    with pytest.raises(ConfigError):
        SolverConfig("unknown-method", grid, seed=0)
    with pytest.raises(ConfigError):
        SolverConfig("theta-trapezoidal", make_time_grid(1.0, 0.0, 2, 1.0), seed=0)
    with pytest.warns(UserWarning):
        SolverConfig("theta-rk2", grid, seed=0)


# uniformization


def test_uniformization_two_state_matches_analytic_marginal():
    a, b = 0.3, 0.7
    oracle = TwoStateOracle(a, b)
    rng = np.random.default_rng(15)
    n = 100_000
    firsts = 0
    for _ in range(n):
        y, _ = uniformization_sample(oracle, (0.0, 1.0), 0, rng)
        firsts += y == 0
    want = two_state_marginal(1.0, a, b, 1.0)[0]
    se = np.sqrt(want * (1 - want) / n)
    assert abs(firsts / n - want) < 3 * se


def test_uniformization_candidate_count_mean():
    lam = 2.0
    oracle = ConstantOracle({1: lam}, bound=lam)
    space = StateSpaceSpec(d=1, S=10**6, periodic=True)
    rng = np.random.default_rng(16)
    n = 20_000
    nfe = jumps = 0
    for _ in range(n):
        y, tel = uniformization_sample(oracle, (0.0, 1.5), 0, rng, space=space)
        nfe += tel.nfe
        jumps += y
    assert abs(nfe / n - lam * 1.5) < 4 * np.sqrt(lam * 1.5 / n)
    assert abs(jumps / n - lam * 1.5) < 4 * np.sqrt(lam * 1.5 / n)


def test_uniformization_bound_violation_raises():
    oracle = ConstantOracle({1: 2.0}, bound=1.0)  # declared bound is a lie
    with pytest.raises(BoundViolationError):
        for _ in range(50):
            uniformization_sample(oracle, (0.0, 1.0), 0, np.random.default_rng(17))
