"""Command-line entry points for the pipeline stages and verification tools.

Exit codes: 0 success, 2 configuration/usage error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import channel as ch
from . import evidential as ev
from . import harness
from . import infobounds as ib
from . import nncore
from . import pretrain as pt
from . import retx
from . import synthdata as sd

log = logging.getLogger("semcom")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def _load_cfg(args):
    cfg = harness.load_config(args.config) if args.config \
        else harness.ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.data = dataclasses.replace(cfg.data, seed=args.seed)
        cfg.pretrain = dataclasses.replace(cfg.pretrain, seed=args.seed)
        cfg.finetune = dataclasses.replace(cfg.finetune, seed=args.seed)
        cfg.channel = dataclasses.replace(cfg.channel, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "snr_db", None) is not None:
        cfg.channel = dataclasses.replace(cfg.channel, snr_db=args.snr_db,
                                          snr_range=None)
    return cfg


def _dataset(cfg):
    (train, latents), _ = harness.make_splits(cfg)
    return train, latents


def cmd_gen_data(args):
    cfg = _load_cfg(args)
    data, _ = _dataset(cfg)
    sd.save_dataset(data, args.path, d=cfg.data.d)
    print(f"wrote {data.n} samples ({data.n_classes} classes) to {args.path}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _load_cfg(args)
    data, _ = _dataset(cfg)
    encoders, heads = harness.init_models(cfg)
    rows = []
    encoders = pt.pretrain(encoders, data, cfg.pretrain,
                           mode=cfg.pretrain_mode(), log_rows=rows)
    harness.save_checkpoint(encoders, heads, args.checkpoint)
    if args.loss_log:
        pt.write_loss_log(rows, args.loss_log)
    print(f"pretrained {cfg.pretrain.epochs} epochs "
          f"(mode={cfg.pretrain_mode()}) -> {args.checkpoint}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _load_cfg(args)
    data, _ = _dataset(cfg)
    if args.checkpoint_in:
        encoders, heads = harness.load_checkpoint(args.checkpoint_in)
    else:
        encoders, heads = harness.init_models(cfg)
    for t in range(cfg.finetune.epochs):
        encoders, heads, loss, acc, _ = ev.finetune_epoch(
            encoders, heads, data, cfg.channel, cfg.finetune, t)
        if args.verbose:
            print(f"epoch {t + 1}: loss={loss:.4f} train_acc={acc:.4f}")
    harness.save_checkpoint(encoders, heads, args.checkpoint)
    print(f"fine-tuned {cfg.finetune.epochs} epochs -> {args.checkpoint}")
    return EXIT_OK


def cmd_calibrate(args):
    cfg = _load_cfg(args)
    data, _ = _dataset(cfg)
    _, calib = harness.labeled_splits(cfg, data)
    encoders, heads = harness.load_checkpoint(args.checkpoint)
    us = retx.calibration_uncertainties(calib, encoders, heads, cfg.channel)
    try:
        u_lambda = retx.calibrate_threshold(us, args.alpha)
    except retx.CalibrationError as exc:
        log.warning("%s", exc)
        u_lambda = 1.0
    doc = {"u_lambda": u_lambda, "alpha": args.alpha, "n_calib": len(us)}
    with open(args.path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    print(f"u_lambda = {u_lambda:.6f} (alpha={args.alpha}) -> {args.path}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _load_cfg(args)
    encoders, heads = harness.load_checkpoint(args.checkpoint)
    data = sd.load_dataset(args.data) if args.data \
        else harness.make_splits(cfg)[1][0]
    policy = retx.RetxPolicy(u_lambda=args.u_lambda, n_max=args.n_max,
                             alpha=args.alpha)
    records = []
    n_correct = 0
    for i in range(data.n):
        res = retx.inference_episode(
            [data.x1[i], data.x2[i]], i, encoders, heads, cfg.channel, policy)
        records.extend(res.records)
        n_correct += int(res.predicted == data.labels[i])
    if args.trace:
        ch.trace_to_csv(records, args.trace)
    print(f"accuracy = {n_correct / data.n:.4f} over {data.n} samples, "
          f"{len(records)} transmissions")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    metrics, _ = harness.run_pipeline(cfg)
    print(json.dumps(dataclasses.asdict(metrics), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_mi_probe(args):
    cfg = _load_cfg(args)
    data, latents = _dataset(cfg)
    encoders, _ = harness.load_checkpoint(args.checkpoint)
    ks = cfg.pretrain.partition.k_shared
    out = {}
    for m, x in enumerate([data.x1, data.x2]):
        z, _ = nncore.forward(encoders[m], x)
        shared, unique = z[:, :ks], z[:, ks:]
        own = latents.w1 if m == 0 else latents.w2
        out[f"modality_{m}"] = {
            "I(shared; ws)": ib.mi_probe(shared, latents.ws, bins=args.bins),
            "I(unique; own)": ib.mi_probe(unique, own, bins=args.bins),
            "I(shared; own)": ib.mi_probe(shared, own, bins=args.bins),
            "I(unique; ws)": ib.mi_probe(unique, latents.ws, bins=args.bins),
        }
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.path:
        with open(args.path, "w") as f:
            json.dump(out, f, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_verify_bounds(args):
    rng = sd._rng(args.seed, 0xB0D)
    worst_identity = 0.0
    for i in range(args.chains):
        chain = ib.random_chain(rng)
        report = ib.verify_markov_identities(chain)
        worst_identity = max(
            worst_identity,
            max(abs(v["lhs"] - v["rhs"]) for v in report["identities"].values()))
    min_slack = float("inf")
    failures = 0
    for i in range(args.templates):
        template = ib.random_template(rng)
        try:
            rep = ib.sandwich_check(template)
            min_slack = min(min_slack, rep.upper_slack, rep.lower_slack)
        except ib.IdentityViolation as exc:
            failures += 1
            log.error("template %d: %s", i, exc)
    print(f"chains: {args.chains} verified, worst identity residual "
          f"{worst_identity:.3e}")
    print(f"templates: {args.templates - failures}/{args.templates} passed, "
          f"min slack {min_slack:.3e}")
    return EXIT_OK if failures == 0 else EXIT_VERIFY


def cmd_sweep(args):
    cfg = _load_cfg(args)
    points = []
    for s in args.snrs.split(","):
        s = s.strip()
        points.append(s if s == "dynamic" else float(s))
    if "dynamic" in points and cfg.channel.snr_range is None:
        cfg.channel = dataclasses.replace(cfg.channel,
                                          snr_range=(args.lo, args.hi))
    accs, base = harness.snr_sweep(cfg, points, with_retx=args.with_retx)
    doc = {"accuracy_by_snr": accs, "train_final_accuracy": base.final_accuracy}
    print(json.dumps(doc, indent=2, sort_keys=True))
    if args.path:
        with open(args.path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="semcom",
        description="uncertainty-aware multi-modal semantic communication")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override all seeds")
        return p

    p = add("gen-data", cmd_gen_data, help="generate a synthetic dataset")
    p.add_argument("path", help="output dataset JSON")

    p = add("pretrain", cmd_pretrain, help="Stage I self-supervised training")
    p.add_argument("checkpoint", help="output checkpoint path")
    p.add_argument("--loss-log", help="per-epoch loss CSV")

    p = add("finetune", cmd_finetune, help="Stage II evidential fine-tuning")
    p.add_argument("checkpoint", help="output checkpoint path")
    p.add_argument("--checkpoint-in", help="Stage-I checkpoint to start from")
    p.add_argument("--snr-db", type=float, help="override channel SNR")
    p.add_argument("-v", "--verbose", action="store_true")

    p = add("calibrate", cmd_calibrate, help="Stage III threshold calibration")
    p.add_argument("checkpoint", help="trained checkpoint")
    p.add_argument("path", help="output threshold JSON")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--snr-db", type=float, help="override channel SNR")

    p = add("infer", cmd_infer, help="retransmission-driven inference")
    p.add_argument("checkpoint", help="trained checkpoint")
    p.add_argument("--data", help="dataset JSON (default: generated test set)")
    p.add_argument("--u-lambda", type=float, default=1.0)
    p.add_argument("--n-max", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--snr-db", type=float, help="override channel SNR")
    p.add_argument("--trace", help="transmission trace CSV")

    p = add("evaluate", cmd_evaluate, help="run the full three-stage pipeline")
    p.add_argument("--out", help="metrics output directory")
    p.add_argument("--snr-db", type=float, help="override channel SNR")

    p = add("mi-probe", cmd_mi_probe,
            help="binned MI between encoder features and latent factors")
    p.add_argument("checkpoint", help="encoder checkpoint")
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--path", help="output JSON")

    p = add("verify-bounds", cmd_verify_bounds,
            help="exact-enumeration check of the information bounds")
    p.add_argument("--chains", type=int, default=200)
    p.add_argument("--templates", type=int, default=50)
    p.set_defaults(seed=0)

    p = add("sweep", cmd_sweep, help="accuracy sweep over channel SNR")
    p.add_argument("--snrs", default="0,10,20,dynamic")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=20.0)
    p.add_argument("--with-retx", action="store_true")
    p.add_argument("--path", help="output JSON")

    return ap


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
