"""Sweep the number of policy iterations per interaction and compare with the bound's choice.

Prints the mean last-10-episode gap per tempo across seeds, the tempo that
minimizes the regret ceiling for the fitted budget profile, and writes
plotdata.csv for the gap curves.
"""

import argparse

import numpy as np

from prost.harness import EnvConfig, ForecasterConfig, PlanConfig, RunConfig, build_env, export, sweep, sync_hp
from prost.nonstat_env import budget_profile
from prost.regret_bounds import regret_bound
from prost.tempo import HyperParams, tempo_numeric


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--speed", type=int, default=1)
    ap.add_argument("--episodes", type=int, default=40)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--max-tempo", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/tempo_sweep")
    args = ap.parse_args()

    base = RunConfig(
        env=EnvConfig(speed=args.speed, n_states=4, wall_clock_horizon=args.episodes * args.max_tempo),
        hp=HyperParams(eta=1.0, tau=0.1, gamma=0.9, beta=0.01, horizon=10),
        plan=PlanConfig(n_episodes=args.episodes),
        forecaster=ForecasterConfig(kind="scalar_f_plus_structural_g", window=None, warmup=1, scalar_window=5),
        drift_noise=0.01,
    )
    tempos = list(range(1, args.max_tempo + 1))
    res = sweep(base, {"plan.delta_pi": tempos}, n_seeds=args.seeds, workers=args.workers)
    by_tempo = {}
    for rec in res.records:
        by_tempo.setdefault(rec.plan["delta_pi_star"], []).append(rec.aggregates["mean_gap_last"])
    for d in tempos:
        print(f"tempo {d}: mean last-10 gap {np.mean(by_tempo[d]):.4f}")
    best = min(by_tempo, key=lambda d: np.mean(by_tempo[d]))

    env = build_env(base)
    hp = sync_hp(base, env)
    profile = budget_profile(env, tempos, args.episodes)
    predicted = tempo_numeric(lambda d: regret_bound(hp, profile, args.episodes, d, 5).total_bound, tempos)
    print(f"empirical best tempo {best}, bound minimizer {predicted}")
    for p in export(res.records, "plotdata", args.out):
        print(p)


if __name__ == "__main__":
    main()
