"""Run the forecasting agent and the baselines on the sine chain and print a summary table."""

import argparse
import logging

from prost.harness import export, load_config, record_bound, run_baseline, run_prost_t

BASELINES = ("reactive_model", "full_history", "oracle_future", "online_q_finetune")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/sine_chain.yaml")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    base = load_config(args.config)
    out = args.out or base.output_dir
    print(f"{'agent':<20}{'seed':>5}{'cum_regret':>14}{'v_pi_last':>12}{'bound':>14}")
    for seed in range(args.seeds):
        cfg = base.with_overrides({"seed": seed})
        records = [run_prost_t(cfg)] + [run_baseline(cfg, k) for k in BASELINES]
        for rec in records:
            agg = rec.aggregates
            bound = record_bound(rec).total_bound if rec.agent == "prost_t" else float("nan")
            print(f"{rec.agent:<20}{seed:>5}{agg['cum_regret']:>14.4f}{agg['mean_v_pi_last']:>12.4f}{bound:>14.2f}")
        export(records, "csv", out)


if __name__ == "__main__":
    main()
