"""Time-elapsing tabular environments.

An environment is a base MDP plus a scalar drift o(t) and a modulation
rule that turns (base, o) into the MDP in force at wall-clock time t.
Budgets measure how much consecutive snapshots differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROW_TOL = 1e-12
SINE_PERIOD = 37


class EnvError(ValueError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MdpSnapshot:
    """One tabular MDP <S, A, H, P, R, gamma> frozen at a wall-clock time."""

    transition: np.ndarray
    reward: np.ndarray
    horizon: int
    gamma: float
    stochasticity_class: str = "exact"

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[:2] != r.shape:
            raise EnvError(f"shape mismatch: P{p.shape} R{r.shape}")
        if self.horizon < 1:
            raise EnvError("horizon must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise EnvError("gamma must lie in (0, 1)")
        if not np.all(np.isfinite(r)):
            raise EnvError("rewards must be finite")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise EnvError("transition entries must lie in [0, 1]")
        rows = p.sum(axis=2)
        if self.stochasticity_class == "exact":
            if np.max(np.abs(rows - 1.0)) > ROW_TOL:
                raise EnvError("transition rows must sum to 1")
        elif self.stochasticity_class == "sub_stochastic":
            if np.max(rows) > 1.0 + ROW_TOL:
                raise EnvError("sub-stochastic rows must sum to <= 1")
        else:
            raise EnvError(f"unknown stochasticity class {self.stochasticity_class!r}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def replace(self, **changes) -> "MdpSnapshot":
        fields = dict(
            transition=self.transition,
            reward=self.reward,
            horizon=self.horizon,
            gamma=self.gamma,
            stochasticity_class=self.stochasticity_class,
        )
        fields.update(changes)
        return MdpSnapshot(**fields)

    def same_as(self, other: "MdpSnapshot") -> bool:
        return (
            self.horizon == other.horizon
            and self.gamma == other.gamma
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
        )


# ---------------------------------------------------------------- drift


@dataclass(frozen=True, eq=False)
class DriftSeries:
    clean: np.ndarray
    noisy: np.ndarray
    noise_bound: float = 0.0

    def __post_init__(self):
        c = _frozen(self.clean)
        n = _frozen(self.noisy)
        object.__setattr__(self, "clean", c)
        object.__setattr__(self, "noisy", n)
        if c.shape != n.shape or c.ndim != 1:
            raise EnvError("clean and noisy series must be 1-d and equal length")
        if self.noise_bound < 0:
            raise EnvError("noise bound must be >= 0")
        if c.size and np.max(np.abs(n - c)) > self.noise_bound:
            raise EnvError("noisy series leaves the noise band")

    @classmethod
    def from_clean(cls, values) -> "DriftSeries":
        v = np.asarray(values, dtype=np.float64)
        return cls(clean=v, noisy=v, noise_bound=0.0)

    def __len__(self) -> int:
        return int(self.clean.size)


def sine_drift(speed: int, k: float) -> float:
    """o_k = sin(2 pi speed k / 37)."""
    if k < 0:
        raise EnvError("episode index must be >= 0")
    return math.sin(2.0 * math.pi * speed * k / SINE_PERIOD)


def sine_series(speed: int, ks: Iterable[float]) -> DriftSeries:
    return DriftSeries.from_clean([sine_drift(speed, k) for k in ks])


def load_drift_series(path) -> DriftSeries:
    """Read one real per line; '#' lines and blanks are skipped.

    Values are divided by max |value| so they land in [-1, 1]; an all-zero
    series is returned unchanged.
    """
    path = Path(path)
    if not path.exists():
        raise EnvError(f"drift file not found: {path}")
    values = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise EnvError(f"{path}: line {lineno}: cannot parse {line!r}") from None
    if not values:
        raise EnvError(f"{path}: empty drift series")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise EnvError(f"{path}: non-finite value in drift series")
    scale = np.max(np.abs(arr))
    if scale > 0:
        arr = arr / scale
    return DriftSeries.from_clean(arr)


def corrupt(series: DriftSeries, b: float, rng: np.random.Generator) -> DriftSeries:
    """Add Unif[-b, b] noise to the clean series."""
    if b < 0:
        raise EnvError("noise bound must be >= 0")
    if b == 0:
        return DriftSeries(series.clean, series.clean, 0.0)
    noise = rng.uniform(-b, b, size=series.clean.shape)
    noisy = series.clean + noise
    # rounding in the sum can push a sample just past the band; pull it back
    out = np.abs(noisy - series.clean) > b
    while np.any(out):
        noisy[out] = np.nextafter(noisy[out], series.clean[out])
        out = np.abs(noisy - series.clean) > b
    return DriftSeries(series.clean, noisy, float(b))


# -------------------------------------------------------- drift sources


@dataclass(frozen=True)
class SineSource:
    speed: int = 1

    def value(self, t: float) -> float:
        return sine_drift(self.speed, t)


@dataclass(frozen=True, eq=False)
class FileSource:
    """Series sampled at integer wall-clock seconds, linear in between."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def value(self, t: float) -> float:
        n = self.values.size
        if t < 0 or t > n - 1:
            raise EnvError(f"time {t} outside the drift file range [0, {n - 1}]")
        lo = int(math.floor(t))
        hi = min(lo + 1, n - 1)
        frac = t - lo
        return float((1.0 - frac) * self.values[lo] + frac * self.values[hi])


@dataclass(frozen=True)
class AngleSource:
    """Goal angle 2 pi t / period (the goal reacher's drift)."""

    period: float = 2500.0

    def value(self, t: float) -> float:
        return 2.0 * math.pi * t / self.period


# ---------------------------------------------------------- modulation


@dataclass(frozen=True, eq=False)
class RewardScaling:
    """R_t = mask * o_t * Rbar + (1 - mask) * Rbar.

    With ``transition_mix > 0`` the transition also drifts:
    P_t = (1 - m) P0 + m P1 with m = transition_mix * (1 + o_t) / 2.
    """

    mask: np.ndarray
    transition_mix: float = 0.0
    alt_transition: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen(self.mask))
        if self.alt_transition is not None:
            object.__setattr__(self, "alt_transition", _frozen(self.alt_transition))
        if self.transition_mix and self.alt_transition is None:
            raise EnvError("transition_mix needs an alt_transition")

    @property
    def drifts_transition(self) -> bool:
        return bool(self.transition_mix)

    def apply(self, base: MdpSnapshot, o: float) -> MdpSnapshot:
        r = base.reward * (self.mask * o + (1.0 - self.mask))
        p = base.transition
        if self.transition_mix:
            m = self.transition_mix * (1.0 + float(np.clip(o, -1.0, 1.0))) / 2.0
            p = (1.0 - m) * base.transition + m * self.alt_transition
            p = p / p.sum(axis=2, keepdims=True)
        return base.replace(transition=p, reward=r)

    def lipschitz(self, base: MdpSnapshot) -> float:
        """Largest |Rbar| on the drifting component."""
        drifting = np.abs(base.reward) * (self.mask != 0)
        return float(drifting.max()) if drifting.size else 0.0


@dataclass(frozen=True)
class ReacherConfig:
    grid: int = 10
    n_actions: int = 8
    horizon: int = 13
    gamma: float = 0.99
    goal_reward: float = 6.0
    step_reward: float = -0.5
    radius: float = 0.9
    period: float = 2500.0
    p_slip: float = 0.1
    box_width: float = 0.05


@dataclass(frozen=True, eq=False)
class GoalPlacement:
    """Rebuilds the reward around the cell holding the goal at angle o."""

    cfg: ReacherConfig

    drifts_transition = False

    def apply(self, base: MdpSnapshot, o: float) -> MdpSnapshot:
        goal = reacher_goal_cell(o, self.cfg)
        return base.replace(reward=reacher_reward(base.transition, goal, self.cfg))

    def lipschitz(self, base: MdpSnapshot) -> float:
        return self.cfg.goal_reward - self.cfg.step_reward


@dataclass(frozen=True, eq=False)
class EnvDefinition:
    base: MdpSnapshot
    drift: object
    modulation: object
    wall_clock_horizon: float
    initial_state: int = 0
    name: str = "env"

    def drift_at(self, t: float) -> float:
        return self.drift.value(t)

    def check_time(self, t: float):
        if not 0.0 <= t <= self.wall_clock_horizon:
            raise EnvError(f"time {t} outside [0, {self.wall_clock_horizon}]")

    @property
    def r_max(self) -> float:
        """Bound on |R_t| over all t (modulation keeps |o| <= 1 for sine/file)."""
        if isinstance(self.modulation, GoalPlacement):
            c = self.modulation.cfg
            return max(abs(c.goal_reward), abs(c.step_reward))
        return float(np.max(np.abs(self.base.reward)))


def snapshot_at(env: EnvDefinition, t: float) -> MdpSnapshot:
    env.check_time(t)
    return env.modulation.apply(env.base, env.drift_at(t))


def structural_snapshot(env: EnvDefinition, o: float) -> MdpSnapshot:
    if not math.isfinite(o):
        raise EnvError("drift value must be finite")
    return env.modulation.apply(env.base, o)


# ------------------------------------------------------------- factories


def chain_transition(n_states: int, slip: float) -> np.ndarray:
    """Action 0 moves left, action 1 moves right; with prob. slip the agent stays."""
    p = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        left, right = max(s - 1, 0), min(s + 1, n_states - 1)
        p[s, 0, left] += 1.0 - slip
        p[s, 0, s] += slip
        p[s, 1, right] += 1.0 - slip
        p[s, 1, s] += slip
    return p


def sine_chain(
    speed: int = 1,
    n_states: int = 4,
    horizon: int = 10,
    gamma: float = 0.9,
    slip: float = 0.1,
    back_reward: float = 0.1,
    wall_clock_horizon: float = 1000.0,
    initial_state: int = 0,
    transition_mix: float = 0.0,
) -> EnvDefinition:
    """Chain whose 'forward' reward is scaled by a sine drift.

    Forward (action 1) pays ((s+1)/n)^2 * o_t; back (action 0) pays a fixed
    ``back_reward`` at the left end only.  A positive drift pulls the agent
    to the right end, a negative one sends it home.
    """
    if n_states < 2:
        raise EnvError("chain needs at least 2 states")
    p = chain_transition(n_states, slip)
    r = np.zeros((n_states, 2))
    r[:, 1] = ((np.arange(n_states) + 1.0) / n_states) ** 2
    r[0, 0] = back_reward
    mask = np.zeros_like(r)
    mask[:, 1] = 1.0
    alt = None
    if transition_mix:
        alt = chain_transition(n_states, min(1.0, slip + 0.5))
    base = MdpSnapshot(p, r, horizon, gamma)
    return EnvDefinition(
        base=base,
        drift=SineSource(speed),
        modulation=RewardScaling(mask, transition_mix, alt),
        wall_clock_horizon=wall_clock_horizon,
        initial_state=initial_state,
        name=f"sine_chain(speed={speed})",
    )


def file_chain(path, **kwargs) -> EnvDefinition:
    series = load_drift_series(path)
    env = sine_chain(**kwargs)
    horizon = float(len(series) - 1)
    return EnvDefinition(
        base=env.base,
        drift=FileSource(series.clean),
        modulation=env.modulation,
        wall_clock_horizon=min(env.wall_clock_horizon, horizon),
        initial_state=env.initial_state,
        name=f"file_chain({Path(path).name})",
    )


# ---------------------------------------------------------- goal reacher

def _compass(n_actions: int) -> np.ndarray:
    angles = np.pi * np.arange(n_actions) / (n_actions / 2)
    return np.rint(np.stack([np.cos(angles), np.sin(angles)], axis=1)).astype(int)


def reacher_cell(x: float, y: float, grid: int = 10) -> tuple[int, int]:
    """Half-open cells [lo, lo + w) over [-1, 1]; the last cell is closed."""
    width = 2.0 / grid
    ix = min(max(int(math.floor((x + 1.0) / width)), 0), grid - 1)
    iy = min(max(int(math.floor((y + 1.0) / width)), 0), grid - 1)
    return ix, iy


def reacher_goal_center(angle: float, cfg: ReacherConfig) -> tuple[float, float]:
    return cfg.radius * math.cos(angle), cfg.radius * math.sin(angle)


def reacher_goal_cell(angle: float, cfg: ReacherConfig) -> int:
    ix, iy = reacher_cell(*reacher_goal_center(angle, cfg), cfg.grid)
    return ix + cfg.grid * iy


def reacher_transition(cfg: ReacherConfig) -> np.ndarray:
    g = cfg.grid
    n = g * g
    moves = _compass(cfg.n_actions)
    p = np.zeros((n, cfg.n_actions, n))
    for s in range(n):
        ix, iy = s % g, s // g
        targets = []
        for dx, dy in moves:
            jx = min(max(ix + dx, 0), g - 1)
            jy = min(max(iy + dy, 0), g - 1)
            targets.append(jx + g * jy)
        for a, target in enumerate(targets):
            p[s, a, target] += 1.0 - cfg.p_slip
            for other in targets:
                p[s, a, other] += cfg.p_slip / len(targets)
    return p


def reacher_reward(transition: np.ndarray, goal: int, cfg: ReacherConfig) -> np.ndarray:
    """Expected reward: goal_reward on landing in the goal cell, step_reward otherwise."""
    hit = transition[:, :, goal]
    return hit * cfg.goal_reward + (1.0 - hit) * cfg.step_reward


def goal_reacher(cfg: ReacherConfig = ReacherConfig(), wall_clock_horizon: float = 2500.0) -> EnvDefinition:
    p = reacher_transition(cfg)
    base = MdpSnapshot(p, reacher_reward(p, reacher_goal_cell(0.0, cfg), cfg), cfg.horizon, cfg.gamma)
    ix, iy = reacher_cell(0.0, 0.0, cfg.grid)
    return EnvDefinition(
        base=base,
        drift=AngleSource(cfg.period),
        modulation=GoalPlacement(cfg),
        wall_clock_horizon=wall_clock_horizon,
        initial_state=ix + cfg.grid * iy,
        name=f"goal_reacher(period={cfg.period:g})",
    )


def goal_reacher_snapshot(k: float, cfg: ReacherConfig = ReacherConfig()) -> MdpSnapshot:
    if k < 0:
        raise EnvError("episode index must be >= 0")
    env = goal_reacher(cfg, wall_clock_horizon=max(float(k), 1.0))
    return snapshot_at(env, k)


# --------------------------------------------------------------- budgets


def variation_budget(snapshots: Sequence[MdpSnapshot]) -> tuple[float, float]:
    """(B_r, B_p): summed sup-norm reward change and sup L1 transition change."""
    if len(snapshots) < 2:
        raise EnvError("need at least two snapshots")
    shape = snapshots[0].transition.shape
    b_r = b_p = 0.0
    for prev, nxt in zip(snapshots[:-1], snapshots[1:]):
        if nxt.transition.shape != shape:
            raise EnvError("snapshot shapes differ")
        b_r += float(np.max(np.abs(nxt.reward - prev.reward)))
        b_p += float(np.max(np.abs(nxt.transition - prev.transition).sum(axis=2)))
    return b_r, b_p


def scalar_budget(series) -> float:
    values = series.clean if isinstance(series, DriftSeries) else np.asarray(series, dtype=np.float64)
    if values.size < 2:
        raise EnvError("need at least two values")
    return float(np.sum(np.abs(np.diff(values))))


def local_reward_budget(snapshots: Sequence[MdpSnapshot], lo: int, hi: int) -> float:
    """sum_{j=lo}^{hi-1} sup |R_{j+1} - R_j| over 0-based snapshot indices."""
    total = 0.0
    for j in range(max(lo, 0), hi):
        total += float(np.max(np.abs(snapshots[j + 1].reward - snapshots[j].reward)))
    return total


def fit_drifting_constants(
    samples_r: Mapping[float, float], samples_p: Mapping[float, float] | None = None
) -> tuple[float, float]:
    """Least-squares slope of log B against log c, clamped at zero.

    A budget that is identically zero has no growth and gets alpha = 0.
    """

    def slope(samples):
        if samples is None:
            return 0.0
        if len(samples) < 2:
            raise EnvError("need at least two samples")
        c = np.array(list(samples.keys()), dtype=np.float64)
        b = np.array(list(samples.values()), dtype=np.float64)
        if np.all(b == 0):
            return 0.0
        if np.any(b <= 0) or np.any(c <= 0):
            raise EnvError("budgets and scales must be positive")
        x, y = np.log(c), np.log(b)
        x = x - x.mean()
        if not np.any(x):
            raise EnvError("need at least two distinct scales")
        return max(0.0, float(np.dot(x, y - y.mean()) / np.dot(x, x)))

    return slope(samples_r), slope(samples_p)


@dataclass(frozen=True)
class BudgetProfile:
    b_r: dict = field(default_factory=dict)
    b_p: dict = field(default_factory=dict)
    scalar: dict = field(default_factory=dict)
    alpha_r: float = 0.0
    alpha_p: float = 0.0

    @property
    def b_unit(self) -> tuple[float, float]:
        d0 = min(self.b_r)
        return self.b_r[d0], self.b_p[d0]

    def extrapolate(self, delta: float) -> tuple[float, float]:
        """B(delta) <= delta^alpha B(1)."""
        br1, bp1 = self.b_unit
        return br1 * delta**self.alpha_r, bp1 * delta**self.alpha_p

    def to_csv(self) -> str:
        lines = ["delta_pi,b_r,b_p,scalar_budget"]
        for d in sorted(self.b_r):
            lines.append(f"{d:g},{self.b_r[d]!r},{self.b_p[d]!r},{self.scalar.get(d, float('nan'))!r}")
        return "\n".join(lines) + "\n"


def budget_profile(env: EnvDefinition, deltas: Sequence[int], n_episodes: int) -> BudgetProfile:
    """Budgets over n_episodes interactions spaced delta apart (t_k = delta * k)."""
    b_r, b_p, sc = {}, {}, {}
    for d in deltas:
        times = [d * k for k in range(1, n_episodes + 1)]
        if times[-1] > env.wall_clock_horizon:
            raise EnvError(f"delta {d} x {n_episodes} episodes exceeds the wall-clock horizon")
        snaps = [snapshot_at(env, t) for t in times]
        b_r[d], b_p[d] = variation_budget(snaps)
        sc[d] = scalar_budget([env.drift_at(t) for t in times])
    d0 = min(deltas)

    def fit(b):
        # a budget that is zero at some tempos only is fitted on its positive part
        pos = {d / d0: v for d, v in b.items() if v > 0}
        if len(pos) < 2:
            return 0.0
        return fit_drifting_constants(pos)[0]

    return BudgetProfile(b_r, b_p, sc, fit(b_r), fit(b_p))
