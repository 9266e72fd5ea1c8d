#!/usr/bin/env python3
"""Communication-round savings from Stage-I pretraining.

For each seed, runs the pretrained pipeline and the no-pretrain ablation,
and reports the supervised rounds each needs to reach 90% of its own final
accuracy, plus the cumulative uplink symbol count C_train.
"""

import argparse
import dataclasses
import json

import numpy as np

from semcom import harness


def r90(curve):
    target = 0.9 * curve[-1]
    return next(i + 1 for i, a in enumerate(curve) if a >= target)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--out", help="results JSON")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    rows = []
    for seed in seeds:
        row = {"seed": seed}
        for name, flags in (("pretrained", {}), ("no_pretrain",
                                                 {"no_pretrain": True})):
            cfg = harness.ExperimentConfig(seed=seed, **flags)
            cfg.data = dataclasses.replace(cfg.data, seed=seed)
            cfg.pretrain = dataclasses.replace(cfg.pretrain, seed=seed)
            cfg.finetune = dataclasses.replace(cfg.finetune, seed=seed)
            cfg.channel = dataclasses.replace(cfg.channel, seed=seed)
            metrics, _ = harness.run_pipeline(cfg)
            row[name] = {"r90": r90(metrics.accuracy_curve),
                         "final_accuracy": metrics.final_accuracy,
                         "c_train": metrics.c_train}
        row["round_ratio"] = row["no_pretrain"]["r90"] / row["pretrained"]["r90"]
        rows.append(row)
        print(f"seed={seed} r90 pretrained={row['pretrained']['r90']} "
              f"no_pretrain={row['no_pretrain']['r90']} "
              f"ratio={row['round_ratio']:.2f}")

    ratios = [r["round_ratio"] for r in rows]
    print(f"median ratio = {float(np.median(ratios)):.2f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"rows": rows, "median_ratio": float(np.median(ratios))},
                      f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
