"""Independent reference implementations used only by the tests.

Each one takes a different route from the library code: brute-force loops,
generic numeric minimizers or arbitrary-precision arithmetic.
"""

import itertools
import math

import mpmath
import numpy as np
from scipy.optimize import minimize


def budget_double_loop(rewards, transitions):
    """Variation budgets with explicit loops over episodes and pairs."""
    b_r = b_p = 0.0
    for k in range(len(rewards) - 1):
        sup_r = sup_p = 0.0
        s_n, a_n = rewards[k].shape
        for s in range(s_n):
            for a in range(a_n):
                sup_r = max(sup_r, abs(rewards[k + 1][s, a] - rewards[k][s, a]))
                l1 = sum(abs(transitions[k + 1][s, a, t] - transitions[k][s, a, t]) for t in range(s_n))
                sup_p = max(sup_p, l1)
        b_r += sup_r
        b_p += sup_p
    return b_r, b_p


def ridge_objective_minimizer(samples, lam, n_states):
    """Minimize sum_i (x_r - r_i)^2 + lam x_r^2 and the one-hot transition analogue numerically.

    samples: list of (reward, next_state) observed at one (s, a).
    """
    rs = np.array([r for r, _ in samples], dtype=float)
    one_hot = np.eye(n_states)[[s2 for _, s2 in samples]].reshape(len(samples), n_states)

    def f_r(x):
        d = x[0] - rs
        return float(d @ d + lam * x[0] ** 2), np.array([2.0 * d.sum() + 2.0 * lam * x[0]])

    def f_p(x):
        d = x[None, :] - one_hot
        return float(lam * (x @ x) + np.sum(d**2)), 2.0 * lam * x + 2.0 * d.sum(axis=0)

    opts = {"gtol": 1e-11}
    r_hat = minimize(f_r, np.zeros(1), jac=True, method="BFGS", options=opts).x[0]
    p_hat = minimize(f_p, np.zeros(n_states), jac=True, method="BFGS", options=opts).x
    return r_hat, p_hat


def h_step_value(transition, reward, gamma, horizon, policy_fn, s0):
    """Recursive enumeration of action and next-state branches (no dynamic programming table)."""

    def rec(h, s):
        if h == horizon:
            return 0.0
        out = 0.0
        for a, pa in enumerate(policy_fn(h, s)):
            if pa == 0:
                continue
            cont = sum(transition[s, a, t] * rec(h + 1, t) for t in range(reward.shape[0]))
            out += pa * (reward[s, a] + gamma * cont)
        return out

    return rec(0, s0)


def best_deterministic_value(transition, reward, gamma, horizon, s0):
    """Max over all nonstationary deterministic policies via exhaustive search."""
    s_n, a_n = reward.shape
    best = -math.inf
    for table in itertools.product(range(a_n), repeat=s_n * horizon):
        tab = np.array(table).reshape(horizon, s_n)

        def pol(h, s, tab=tab):
            e = np.zeros(a_n)
            e[tab[h, s]] = 1.0
            return e

        best = max(best, h_step_value(transition, reward, gamma, horizon, pol, s0))
    return best


def stationary_policy_values(transition, reward, gamma):
    """Infinite-horizon values of every deterministic stationary policy, by linear solves."""
    s_n, a_n = reward.shape
    out = []
    for acts in itertools.product(range(a_n), repeat=s_n):
        p = np.array([transition[s, acts[s]] for s in range(s_n)])
        r = np.array([reward[s, acts[s]] for s in range(s_n)])
        out.append((acts, np.linalg.solve(np.eye(s_n) - gamma * p, r)))
    return out


def lambert_mp(x, branch):
    return float(mpmath.lambertw(mpmath.mpf(x), 0 if branch == "principal" else -1).real)
