"""Independent oracles used by the tests.

The sampler schemes on the 1-D toy admit exact one-step transition kernels:
with frozen per-target rates r_w and the one-jump-per-update rule, the
probability of landing on w is r_w * dt * exp(-lam * dt) and the rest of the
mass stays.  Composing these 15x15 kernels gives the scheme's *exact*
terminal distribution, against which empirical sampler output is checked.
These formulas are derived here from first principles (Poisson thinning),
not imported from the library under test.
"""

import numpy as np

ALPHA = {
    "a1": lambda th: 1.0 / (2.0 * th * (1.0 - th)),
    "a2": lambda th: ((1.0 - th) ** 2 + th**2) / (2.0 * th * (1.0 - th)),
}


def toy_reverse_rates(p0: np.ndarray, horizon: float, s) -> np.ndarray:
    """rate[y, w] of the exact reverse toy process at reverse time s."""
    S = p0.size
    t = horizon - s
    pt = (1.0 - np.exp(-t)) / S + np.exp(-t) * p0
    r = pt[None, :] / (S * pt[:, None])
    np.fill_diagonal(r, 0.0)
    return r


def leap_kernel(rates: np.ndarray, dt: float) -> np.ndarray:
    """Exact one-update kernel of a frozen-rate leap with whole-update rejection."""
    S = rates.shape[0]
    lam = rates.sum(axis=1)
    k = rates * dt * np.exp(-lam * dt)[:, None]
    k[np.arange(S), np.arange(S)] = 1.0 - lam * dt * np.exp(-lam * dt)
    return k


def _leap_row(rates_row: np.ndarray, dt: float, start: int) -> np.ndarray:
    lam = rates_row.sum()
    row = rates_row * dt * np.exp(-lam * dt)
    row[start] = 0.0
    row[start] = 1.0 - row.sum()
    return row


def scheme_kernel(method: str, rates_at, s: float, rho: float, dt: float, theta: float) -> np.ndarray:
    """Exact one-interval kernel of tau-leaping or a two-stage scheme.

    ``rates_at(s)`` must return the (S, S) rate table at reverse time s.
    Two-stage kernels marginalize over the intermediate state reached by the
    stage-one leap.
    """
    mu0 = rates_at(s)
    S = mu0.shape[0]
    if method == "tau-leaping":
        return leap_kernel(mu0, dt)
    mur = rates_at(rho)
    k1 = leap_kernel(mu0, theta * dt)
    out = np.zeros((S, S))
    for y in range(S):
        for ystar in range(S):
            p1 = k1[y, ystar]
            if p1 == 0.0:
                continue
            if method == "theta-rk2":
                combo = (1.0 - 0.5 / theta) * mu0[y] + (0.5 / theta) * mur[ystar]
                combo = np.where(mu0[y] > 0, np.maximum(combo, 0.0), 0.0)
                out[y] += p1 * _leap_row(combo, dt, y)
            elif method == "theta-trapezoidal":
                a1, a2 = ALPHA["a1"](theta), ALPHA["a2"](theta)
                combo = np.maximum(a1 * mur[ystar] - a2 * mu0[y], 0.0)
                out[y] += p1 * _leap_row(combo, (1.0 - theta) * dt, ystar)
            else:
                raise ValueError(method)
    return out


def exact_scheme_distribution(
    method: str, p0: np.ndarray, horizon: float, n_steps: int, theta: float
) -> np.ndarray:
    """Exact terminal law of a scheme on the toy, starting from uniform."""
    S = p0.size
    pts = np.linspace(0.0, horizon, n_steps + 1)
    q = np.full(S, 1.0 / S)
    for n in range(n_steps):
        s, dt = pts[n], pts[n + 1] - pts[n]
        k = scheme_kernel(
            method,
            lambda u: toy_reverse_rates(p0, horizon, u),
            s,
            s + theta * dt,
            dt,
            theta,
        )
        q = q @ k
    return q


def brute_force_conditionals(table: np.ndarray, tokens: np.ndarray, mask_token: int) -> np.ndarray:
    """Per-position conditionals by plain nested enumeration over completions."""
    d = table.ndim
    S = table.shape[0]
    out = np.zeros((d, S))
    total = 0.0
    weights = np.zeros((d, S))
    for flat in range(S**d):
        x = np.unravel_index(flat, table.shape)
        if any(tokens[l] != mask_token and tokens[l] != x[l] for l in range(d)):
            continue
        p = table[x]
        total += p
        for l in range(d):
            weights[l, x[l]] += p
    if total <= 0:
        raise ZeroDivisionError("context has no mass")
    for l in range(d):
        if tokens[l] == mask_token:
            out[l] = weights[l] / total
        else:
            out[l, tokens[l]] = 1.0
    return out


def two_state_marginal(p0_first: float, a: float, b: float, t: float) -> np.ndarray:
    """Hand eigen-solution of the 2-state chain with rates a (0->1), b (1->0)."""
    pi0 = b / (a + b)
    p_first = pi0 + (p0_first - pi0) * np.exp(-(a + b) * t)
    return np.array([p_first, 1.0 - p_first])
