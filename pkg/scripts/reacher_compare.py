"""Proactive vs reactive planning on the rotating-goal reacher."""

import argparse

import numpy as np

from prost.harness import export, load_config, run_baseline, run_prost_t


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/reacher.yaml")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    base = load_config(args.config)
    rows = []
    records = []
    for seed in range(args.seeds):
        cfg = base.with_overrides({"seed": seed})
        recs = {"prost_t": run_prost_t(cfg)}
        for kind in ("reactive_model", "oracle_future"):
            recs[kind] = run_baseline(cfg, kind)
        records += list(recs.values())
        rows.append({k: r.aggregates["mean_v_pi_last"] for k, r in recs.items()})
        print(f"seed {seed}: " + "  ".join(f"{k}={v:.3f}" for k, v in rows[-1].items()))
    wins = sum(r["prost_t"] > r["reactive_model"] for r in rows)
    print(f"proactive beats reactive on {wins}/{len(rows)} seeds")
    for k in rows[0]:
        print(f"{k:<16} mean {np.mean([r[k] for r in rows]):.3f}")
    export(records, "plotdata", base.output_dir)


if __name__ == "__main__":
    main()
