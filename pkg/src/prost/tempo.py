"""Training tempo: how many policy iterations to run between interactions."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable

import numpy as np


class TempoError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    eta: float = 0.05  # NPG step size
    tau: float = 0.1  # entropy weight
    gamma: float = 0.9
    lam: float = 1.0  # ridge regularizer of the forecaster
    beta: float = 0.1  # exploration-bonus scale
    delta: float = 0.0  # sup-norm error of the soft Q evaluation
    epsilon: float = 1.0  # target accuracy for the tempo conditions
    p: float = 0.1  # failure probability of the regret bound
    horizon: int = 10
    total_time: float = 300.0
    r_max: float = 1.0
    r_tilde_max: float | None = None  # defaults to r_max
    n_actions: int = 2
    n_states: int = 4
    conf_delta: float = 0.1  # confidence level inside the bonus and window constants
    log_policy_cap: float = math.log(1e3)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise TempoError("gamma must lie in (0, 1)")
        if self.tau < 0:
            raise TempoError("tau must be >= 0")
        if self.eta <= 0 or (self.tau > 0 and self.eta > (1.0 - self.gamma) / self.tau * (1 + 1e-12)):
            raise TempoError("eta must lie in (0, (1-gamma)/tau]")
        if self.lam < 1:
            raise TempoError("lambda must be >= 1")
        if not 0.0 < self.p < 1.0:
            raise TempoError("confidence p must lie in (0, 1)")
        if not 0.0 < self.conf_delta < 1.0:
            raise TempoError("conf_delta must lie in (0, 1)")
        if self.delta < 0:
            raise TempoError("delta must be >= 0")
        if self.epsilon <= 0:
            raise TempoError("epsilon must be > 0")
        if self.beta < 0:
            raise TempoError("beta must be >= 0")
        if self.horizon < 1 or self.n_actions < 1 or self.n_states < 1:
            raise TempoError("horizon and table sizes must be positive")
        if self.total_time <= 0:
            raise TempoError("total wall-clock time must be > 0")

    @property
    def r_tilde(self) -> float:
        return self.r_max if self.r_tilde_max is None else self.r_tilde_max

    @property
    def r_hat_max(self) -> float:
        return self.r_tilde + 2.0 * self.beta / math.sqrt(self.lam)

    @property
    def contraction(self) -> float:
        """1 - eta tau, the per-iteration contraction of the regularized NPG."""
        return 1.0 - self.eta * self.tau

    def worst_case_c1(self) -> float:
        """Initial-gap constant when the starting policy is unknown at planning time."""
        q_part = self.r_hat_max * (1.0 + self.gamma) / (1.0 - self.gamma)
        return q_part + 2.0 * self.tau * (1.0 - self.eta * self.tau / (1.0 - self.gamma)) * self.log_policy_cap

    def replace(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ Lambert W

_INV_E = math.exp(-1.0)


def _branch_series(p: float) -> float:
    return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3 - 43.0 / 540.0 * p**4 + 769.0 / 17280.0 * p**5


def _halley(x: float, w: float, max_iter: int = 100) -> float:
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0:
            return w
        wp1 = w + 1.0
        if wp1 == 0.0:
            return w
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        # damp until the residual does not grow
        t = 1.0
        while t > 1e-6:
            w_new = w - t * step
            if abs(w_new * math.exp(w_new) - x) <= abs(f):
                break
            t *= 0.5
        else:
            return w
        if abs(w_new - w) <= 1e-16 * max(1.0, abs(w_new)):
            return w_new
        w = w_new
    return w


def lambert_w(x: float, branch: str = "principal") -> float:
    """Real Lambert W: the w with w exp(w) = x on the principal or lower branch."""
    x = float(x)
    if x < -_INV_E:
        if x > -_INV_E - 1e-15:
            x = -_INV_E
        else:
            raise TempoError(f"Lambert W undefined for x = {x} < -1/e")
    if branch == "principal":
        if x == 0.0:
            return 0.0
        if x == -_INV_E:
            return -1.0
        if x < -0.3:
            w = _branch_series(math.sqrt(2.0 * (math.e * x + 1.0)))
        elif x < 3.0:
            w = math.log1p(x) * (1.0 - math.log1p(math.log1p(x)) / (2.0 + math.log1p(x))) if x > 0 else x * (1 - x)
        else:
            l1 = math.log(x)
            l2 = math.log(l1)
            w = l1 - l2 + l2 / l1
        return _halley(x, w)
    if branch == "lower":
        if x >= 0.0:
            raise TempoError("lower branch is defined only on [-1/e, 0)")
        if x == -_INV_E:
            return -1.0
        if x < -0.25:
            w = _branch_series(-math.sqrt(2.0 * (math.e * x + 1.0)))
        else:
            l1 = math.log(-x)
            w = l1 - math.log(-l1)
        return _halley(x, w)
    raise TempoError(f"unknown branch {branch!r}")


# ------------------------------------------------------- feasible tempos


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class TempoSets:
    n_min: int  # smallest tempo in the optimization-side set
    n_max: int  # largest tempo in the forecaster-side set, K - 1
    conditions: tuple
    c1: float

    @property
    def empty(self) -> bool:
        return self.n_min > self.n_max

    def candidates(self) -> list[int]:
        return list(range(self.n_min, self.n_max + 1))


def min_iterations(c1: float, eps: float, eta: float, tau: float, gamma: float) -> int:
    """ceil(log(C1 (gamma + 2) / eps) / (eta tau)) + 1, or 1 when the log is nonpositive."""
    lg = math.log(c1 * (gamma + 2.0) / eps) if c1 > 0 else -math.inf
    if lg <= 0:
        return 1
    return int(math.ceil(lg / (eta * tau) - 1e-12)) + 1


def tau_ceiling(gamma: float, eps: float, n_actions: int) -> float:
    if n_actions < 2:
        return math.inf
    return (1.0 - gamma) * eps / (2.0 * math.log(n_actions))


def horizon_floor(gamma: float, eps: float, r_hat_max: float) -> float:
    return math.log(2.0 * r_hat_max / ((1.0 - gamma) * eps)) / (1.0 - gamma)


def delta_ceiling(gamma: float, eps: float, eta: float, tau: float) -> float:
    return eps / ((gamma + 2.0) * (2.0 / (1.0 - gamma)) * (1.0 + gamma / (eta * tau)))


def tempo_conditions(hp: HyperParams, eps: float) -> tuple:
    g = hp.gamma
    out = []
    if hp.tau > 0:
        out.append(Condition("delta", hp.delta, delta_ceiling(g, eps, hp.eta, hp.tau), hp.delta <= delta_ceiling(g, eps, hp.eta, hp.tau)))
    h_min = horizon_floor(g, eps, hp.r_hat_max)
    out.append(Condition("horizon", h_min, float(hp.horizon), hp.horizon >= h_min))
    t_max = tau_ceiling(g, eps, hp.n_actions)
    out.append(Condition("tau", hp.tau, t_max, hp.tau <= t_max))
    return tuple(out)


def feasible_tempo_set(hp: HyperParams, eps: float, k: int, c1: float | None = None) -> TempoSets:
    """Tempo bounds: n_min from the NPG accuracy target, n_max = K - 1."""
    if eps <= 0:
        raise TempoError("epsilon must be > 0")
    if hp.tau <= 0:
        raise TempoError("tempo sets need an entropy-regularized step (tau > 0)")
    c1 = hp.worst_case_c1() if c1 is None else c1
    n_min = min_iterations(c1, eps, hp.eta, hp.tau, hp.gamma)
    return TempoSets(n_min=n_min, n_max=k - 1, conditions=tempo_conditions(hp, eps), c1=c1)


# ------------------------------------------------------------ closed forms


def tempo_constants(hp: HyperParams, alpha: float, c_i_unit: float, c1: float, k: int) -> tuple[float, float]:
    """(k_env, k_agent): alpha^2 C_I[B(1)] and log(1/(1-eta tau)) C1 (K-1)(gamma+2)."""
    k_env = alpha**2 * c_i_unit
    k_agent = math.log(1.0 / hp.contraction) * c1 * (k - 1) * (hp.gamma + 2.0)
    return k_env, k_agent


def surrogate_bound(delta: float, alpha: float, k_env: float, k_agent: float, eta_tau: float) -> float:
    """Smooth stand-in for the two bound terms whose stationary points the closed forms solve."""
    rho = 1.0 - eta_tau
    env = k_env * delta**alpha / alpha if alpha > 0 else 0.0
    return env + k_agent * rho ** (delta - 1.0) / math.log(1.0 / rho)


@dataclass(frozen=True)
class ClosedForm:
    delta_pi: float
    case_id: str
    one_iteration: bool = False
    branch: str | None = None


def tempo_closed_form(alpha_max: float, hp: HyperParams, k_env: float, k_agent: float, total_time: float | None = None) -> ClosedForm:
    """Real-valued optimal tempo for the three drift regimes."""
    T = hp.total_time if total_time is None else total_time
    if alpha_max < 0:
        raise TempoError("drifting constant must be >= 0")
    if alpha_max == 0:
        return ClosedForm(float(T), "case1")
    eta_tau = hp.eta * hp.tau
    if not 0.0 < eta_tau < 1.0:
        raise TempoError("closed forms need 0 < eta tau < 1")
    rho = 1.0 - eta_tau
    if alpha_max == 1:
        if k_env <= 0 or k_agent <= 0:
            raise TempoError("k_env and k_agent must be > 0")
        ratio = k_env / k_agent
        return ClosedForm(math.log(ratio) / math.log(rho) + 1.0, "case2")
    x = -math.log(rho) / (alpha_max - 1.0)
    if x > 0:
        # the stationary point sits below one iteration: one iteration is enough
        return ClosedForm(1.0, "case3", one_iteration=True, branch="principal")
    if x < -_INV_E:
        raise TempoError("no stationary point: Lambert argument below -1/e")
    best = None
    for branch in ("principal", "lower"):
        d = math.exp(-lambert_w(x, branch))
        if d < 1.0:
            continue
        val = surrogate_bound(d, alpha_max, k_env, k_agent, eta_tau) if k_env > 0 and k_agent > 0 else 0.0
        if best is None or val < best[0]:
            best = (val, d, branch)
    if best is None:
        return ClosedForm(1.0, "case3", one_iteration=True)
    return ClosedForm(best[1], "case3", branch=best[2])


def tempo_numeric(bound_fn: Callable[[int], float], candidates: Iterable[int]) -> int:
    """Exhaustive integer argmin; ties go to the smallest tempo."""
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise TempoError("empty candidate set")
    best, best_val = None, math.inf
    for c in cands:
        v = float(bound_fn(c))
        if not math.isfinite(v):
            raise TempoError(f"bound is not finite at tempo {c}")
        if v < best_val:
            best, best_val = c, v
    return best


# ------------------------------------------------------------------ plans


@dataclass(frozen=True)
class TempoPlan:
    delta_pi_star: int
    k_star: int
    times: tuple
    case_id: str = "numeric"
    k_env: float = math.nan
    k_agent: float = math.nan
    bound_at_star: float = math.nan
    notes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.times) == 0:
            raise TempoError("a plan needs at least one interaction")
        gaps = np.diff(self.times)
        if np.any(np.abs(gaps - self.delta_pi_star) > 1e-9):
            raise TempoError("interaction times must have a constant gap")

    @property
    def n_interactions(self) -> int:
        return len(self.times)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "delta_pi_star": self.delta_pi_star,
            "k_star": self.k_star,
            "times": [float(t) for t in self.times],
            "case_id": self.case_id,
            "k_env": clean(self.k_env),
            "k_agent": clean(self.k_agent),
            "bound_at_star": clean(self.bound_at_star),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TempoPlan":
        def num(v):
            return math.nan if v is None else float(v)

        return cls(
            delta_pi_star=int(d["delta_pi_star"]),
            k_star=int(d["k_star"]),
            times=tuple(float(t) for t in d["times"]),
            case_id=d.get("case_id", "numeric"),
            k_env=num(d.get("k_env")),
            k_agent=num(d.get("k_agent")),
            bound_at_star=num(d.get("bound_at_star")),
            notes=tuple(d.get("notes", ())),
        )


def make_plan(total_time: float, delta_pi: int, t1: float | None = None, **meta) -> TempoPlan:
    """Interaction times t1 + delta_pi (k - 1), generated while they stay <= T.

    K* = floor(T / delta_pi) is recorded alongside; the number of generated
    times can exceed it by one when t1 < delta_pi. t1 defaults to delta_pi.
    """
    if delta_pi < 1:
        raise TempoError("tempo must be >= 1")
    if delta_pi > total_time:
        raise TempoError(f"tempo {delta_pi} exceeds the wall-clock horizon {total_time}: no interaction fits")
    t1 = float(delta_pi) if t1 is None else float(t1)
    if not 0.0 <= t1 <= total_time:
        raise TempoError("first interaction time must lie in [0, T]")
    n = int(math.floor((total_time - t1) / delta_pi + 1e-12)) + 1
    times = tuple(t1 + delta_pi * i for i in range(n))
    k_star = int(math.floor(total_time / delta_pi + 1e-12))
    return TempoPlan(delta_pi_star=int(delta_pi), k_star=k_star, times=times, **meta)
