"""Experiment orchestration: configs, the three-stage pipeline driver,
baselines/ablations, communication-cost accounting, metrics, checkpoints.

One supervised fine-tuning epoch counts as one device--server communication
round; its payload is train_samples * M * symbols_per_block uplink symbols.
Stage I runs entirely on-device and contributes zero symbols.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import channel as ch
from . import evidential as ev
from . import nncore
from . import pretrain as pt
from . import retx
from . import synthdata as sd


@dataclass
class DataConfig:
    n_train: int = 2000     # unlabeled pool for Stage I
    n_label: int = 128      # labeled subset for Stage II (first rows)
    n_cal: int = 256        # held-out labeled rows for threshold calibration
    n_test: int = 1000
    d: int = 8
    n_classes: int = 4
    label_snr_db: float = 12.0
    view_dim: int = 48
    obs_noise_std: float | tuple = (0.6, 2.4)  # scalar or (lo, hi) pair
    obs_noise_mode: str = "per_sample"   # "static" | "per_sample" | "fade"
    shared_weight: float = 1.5
    unique_weight: float = 0.75
    seed: int = 0


@dataclass
class ModelConfig:
    k: int = 24
    hidden: tuple = (64, 48)
    head_hidden: int = 32


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: pt.PretrainConfig = field(default_factory=pt.PretrainConfig)
    finetune: ev.FinetuneConfig = field(default_factory=ev.FinetuneConfig)
    channel: ch.ChannelConfig = field(default_factory=ch.ChannelConfig)
    policy: retx.RetxPolicy = field(default_factory=retx.RetxPolicy)
    # ablation flags
    no_pretrain: bool = False
    intra_only: bool = False
    shared_only: bool = False
    ce_concat_baseline: bool = False
    no_retx: bool = False
    seed: int = 0
    out_dir: str | None = None

    def pretrain_mode(self):
        if self.intra_only:
            return "intra_only"
        if self.shared_only:
            return "shared_only"
        return "proposed"


def config_to_dict(cfg: ExperimentConfig):
    d = asdict(cfg)
    return d


def config_from_dict(d):
    def build(cls, sub):
        fields = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in sub.items():
            if k not in fields:
                raise ValueError(f"unknown config key {k!r} for {cls.__name__}")
            kw[k] = v
        return cls(**kw)

    d = dict(d)
    kw = {}
    if "data" in d:
        sub = d.pop("data")
        if isinstance(sub.get("obs_noise_std"), list):
            sub["obs_noise_std"] = tuple(sub["obs_noise_std"])
        kw["data"] = build(DataConfig, sub)
    if "model" in d:
        sub = d.pop("model")
        if "hidden" in sub:
            sub["hidden"] = tuple(np.atleast_1d(sub["hidden"]).tolist())
        kw["model"] = build(ModelConfig, sub)
    if "pretrain" in d:
        sub = d.pop("pretrain")
        if "partition" in sub and isinstance(sub["partition"], dict):
            sub["partition"] = pt.FeaturePartition(**sub["partition"])
        if "augment" in sub and isinstance(sub["augment"], dict):
            sub["augment"] = sd.AugmentConfig(**sub["augment"])
        kw["pretrain"] = build(pt.PretrainConfig, sub)
    if "finetune" in d:
        kw["finetune"] = build(ev.FinetuneConfig, d.pop("finetune"))
    if "channel" in d:
        sub = d.pop("channel")
        if sub.get("snr_range") is not None:
            sub["snr_range"] = tuple(sub["snr_range"])
        kw["channel"] = build(ch.ChannelConfig, sub)
    if "policy" in d:
        kw["policy"] = build(retx.RetxPolicy, d.pop("policy"))
    kw.update(d)
    return ExperimentConfig(**kw)


def load_config(path):
    with open(path) as f:
        return config_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# model construction / checkpoints
# ---------------------------------------------------------------------------


def make_splits(cfg: ExperimentConfig):
    """Train/test datasets of one task: shared mixers and label readout,
    disjoint latent draws."""
    dc = cfg.data
    train, lat_tr = sd.make_dataset(
        dc.n_train, dc.d, dc.n_classes, dc.seed, label_snr_db=dc.label_snr_db,
        view_dim=dc.view_dim, shared_weight=dc.shared_weight,
        unique_weight=dc.unique_weight, task_seed=dc.seed,
        obs_noise_std=dc.obs_noise_std, obs_noise_mode=dc.obs_noise_mode)
    test, lat_te = sd.make_dataset(
        dc.n_test, dc.d, dc.n_classes, dc.seed + 1,
        label_snr_db=dc.label_snr_db, view_dim=dc.view_dim,
        shared_weight=dc.shared_weight, unique_weight=dc.unique_weight,
        task_seed=dc.seed, obs_noise_std=dc.obs_noise_std,
        obs_noise_mode=dc.obs_noise_mode)
    return (train, lat_tr), (test, lat_te)


def init_models(cfg: ExperimentConfig):
    """Encoders and evidential heads seeded from cfg.seed."""
    rng = sd._rng(cfg.seed, 0x111717)
    dview = cfg.data.view_dim
    mc = cfg.model
    enc_widths = [dview, *mc.hidden, mc.k]
    encoders = [nncore.init_mlp(enc_widths, rng) for _ in range(2)]
    heads = [nncore.init_mlp([mc.k, mc.head_hidden, cfg.data.n_classes], rng)
             for _ in range(2)]
    return encoders, heads


def save_checkpoint(encoders, heads, path):
    doc = {
        "version": nncore.CHECKPOINT_VERSION,
        "encoders": [nncore.params_to_dict(p) for p in encoders],
        "heads": [nncore.params_to_dict(p) for p in heads],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path, expect_enc_widths=None, expect_head_widths=None):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    encoders = [nncore.params_from_dict(p, expect_enc_widths)
                for p in doc["encoders"]]
    heads = [nncore.params_from_dict(p, expect_head_widths)
             for p in doc["heads"]]
    return encoders, heads


# ---------------------------------------------------------------------------
# metrics / accounting
# ---------------------------------------------------------------------------

def symbols_per_block(k):
    return (k + 1) // 2


@dataclass
class RunMetrics:
    accuracy_curve: list
    final_accuracy: float
    eval_accuracy: float
    retx_ratio: float
    symbols_per_sample: float
    c_train: int
    rounds: int
    u_lambda: float | None
    per_modality: dict
    rounds_to_target: dict = field(default_factory=dict)


def rounds_to_target(curve, targets):
    """First 1-based round index reaching each target; None if never."""
    out = {}
    for tgt in targets:
        hit = next((i + 1 for i, a in enumerate(curve) if a >= tgt), None)
        out[f"{tgt:g}"] = hit
    return out


# ---------------------------------------------------------------------------
# cross-entropy concat baseline (no opinions, no retransmission)
# ---------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def ce_batch(encoders, head, xs, y_onehot, deltas):
    """Cross-entropy over a softmax head on concatenated received features.

    Returns (loss, enc_grads, head_grad, n_correct)."""
    feats, tapes = [], []
    for m in range(len(encoders)):
        z, tape = nncore.forward(encoders[m], xs[m])
        feats.append(z + deltas[m])
        tapes.append(tape)
    concat = np.hstack(feats)
    logits, tape_h = nncore.forward(head, concat)
    p = softmax(logits)
    b = logits.shape[0]
    loss = float(-np.sum(y_onehot * np.log(np.clip(p, 1e-300, None))))
    d_logits = p - y_onehot
    gh, d_concat = nncore.backward(head, tape_h, d_logits)
    enc_grads = []
    k = feats[0].shape[1]
    for m in range(len(encoders)):
        ge, _ = nncore.backward(encoders[m], tapes[m],
                                d_concat[:, m * k:(m + 1) * k])
        enc_grads.append(ge)
    correct = int((p.argmax(axis=1) == y_onehot.argmax(axis=1)).sum())
    return loss, enc_grads, gh, correct


def ce_epoch(encoders, head, data, channel_cfg, cfg: ev.FinetuneConfig, t):
    rng = sd._rng(cfg.seed, 0xCE, t)
    order = rng.permutation(data.n)
    xs_all = [data.x1, data.x2]
    encoders = [p.copy() for p in encoders]
    head = head.copy()
    eye = np.eye(data.n_classes)
    total_loss = 0.0
    correct = seen = 0
    for bi, start in enumerate(range(0, data.n - cfg.batch_size + 1,
                                     cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        xs = [x[idx] for x in xs_all]
        deltas = []
        for m in range(len(encoders)):
            z, _ = nncore.forward(encoders[m], xs[m])
            z_hat = ch.send_features_batch(z, channel_cfg,
                                           rng_key=(cfg.seed, t, bi, m))
            deltas.append(z_hat - z)
        loss, eg, hg, c = ce_batch(encoders, head, xs, eye[data.labels[idx]],
                                   deltas)
        encoders = [nncore.sgd_step(p, g, cfg.lr) for p, g in zip(encoders, eg)]
        head = nncore.sgd_step(head, hg, cfg.lr)
        total_loss += loss
        correct += c
        seen += len(idx)
    return encoders, head, total_loss / max(seen, 1), correct / max(seen, 1)


def ce_predict(encoders, head, data, channel_cfg, rng_key):
    xs_all = [data.x1, data.x2]
    feats = []
    for m in range(len(encoders)):
        z, _ = nncore.forward(encoders[m], xs_all[m])
        feats.append(ch.send_features_batch(z, channel_cfg,
                                            rng_key=tuple(rng_key) + (m,)))
    logits, _ = nncore.forward(head, np.hstack(feats))
    return logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

def labeled_splits(cfg: ExperimentConfig, train):
    """Fine-tuning rows [0:n_label] and held-out calibration rows
    [n_label:n_label+n_cal] of the training set."""
    nl, nc = cfg.data.n_label, cfg.data.n_cal
    if nl + nc > cfg.data.n_train:
        raise ValueError("n_label + n_cal exceeds n_train")
    labeled = sd.SyntheticDataset(
        train.x1[:nl], train.x2[:nl], train.labels[:nl],
        train.n_classes, train.seed)
    calib = sd.SyntheticDataset(
        train.x1[nl:nl + nc], train.x2[nl:nl + nc], train.labels[nl:nl + nc],
        train.n_classes, train.seed)
    return labeled, calib


def eval_accuracy(encoders, heads, data, channel_cfg, rng_key):
    preds, _, _, _ = ev.predict_batch(encoders, heads, [data.x1, data.x2],
                                      channel_cfg, rng_key)
    return float((preds == data.labels).mean())


def run_pipeline(cfg: ExperimentConfig, eval_channel=None, quiet=True):
    """Execute Stage I / II / III per the config; returns (RunMetrics,
    trained params).  Writes metrics to cfg.out_dir when set."""
    (train, _), (test, _) = make_splits(cfg)
    labeled, calib = labeled_splits(cfg, train)
    eval_channel = eval_channel or cfg.channel

    encoders, heads = init_models(cfg)

    # The concat baseline is trained end to end by cross-entropy; it does
    # not get the Stage-I initialization.
    if not cfg.no_pretrain and not cfg.ce_concat_baseline:
        encoders = pt.pretrain(encoders, train, cfg.pretrain,
                               mode=cfg.pretrain_mode())

    m_count = len(encoders)
    block = symbols_per_block(cfg.model.k)
    curve = []

    if cfg.ce_concat_baseline:
        rng = sd._rng(cfg.seed, 0xCEBA5E)
        head = nncore.init_mlp(
            [m_count * cfg.model.k, cfg.model.head_hidden,
             cfg.data.n_classes], rng)
        for t in range(cfg.finetune.epochs):
            encoders, head, _, _ = ce_epoch(encoders, head, labeled,
                                            cfg.channel, cfg.finetune, t)
            preds = ce_predict(encoders, head, test, eval_channel,
                               rng_key=(cfg.seed, 0xEA1))
            curve.append(float((preds == test.labels).mean()))
        final_acc = curve[-1]
        preds = ce_predict(encoders, head, test, eval_channel,
                           rng_key=(cfg.seed, 0xEA2))
        metrics = RunMetrics(
            accuracy_curve=curve, final_accuracy=final_acc,
            eval_accuracy=float((preds == test.labels).mean()),
            retx_ratio=0.0,
            symbols_per_sample=m_count * block,
            c_train=cfg.finetune.epochs * labeled.n * m_count * block,
            rounds=cfg.finetune.epochs, u_lambda=None, per_modality={})
        _write_outputs(cfg, metrics)
        return metrics, (encoders, [head])

    for t in range(cfg.finetune.epochs):
        encoders, heads, loss, acc, stats = ev.finetune_epoch(
            encoders, heads, labeled, cfg.channel, cfg.finetune, t)
        curve.append(eval_accuracy(encoders, heads, test, eval_channel,
                                   rng_key=(cfg.seed, 0xEA1)))

    # Stage III calibration on held-out labeled rows under the eval channel;
    # uncertainties on the fine-tuning rows themselves run low (the heads
    # fit them), which would set the threshold too tight at deployment.
    us = retx.calibration_uncertainties(calib, encoders, heads, eval_channel)
    try:
        u_lambda = retx.calibrate_threshold(us, cfg.policy.alpha)
    except retx.CalibrationError:
        u_lambda = 1.0
    n_max = 0 if cfg.no_retx else cfg.policy.n_max
    policy = retx.RetxPolicy(u_lambda=u_lambda, n_max=n_max,
                             alpha=cfg.policy.alpha)

    report = retx.evaluate(test, encoders, heads, eval_channel, policy)
    metrics = RunMetrics(
        accuracy_curve=curve, final_accuracy=curve[-1],
        eval_accuracy=report["accuracy"],
        retx_ratio=report["retx_ratio"],
        symbols_per_sample=report["symbols_per_sample"],
        c_train=cfg.finetune.epochs * labeled.n * m_count * block,
        rounds=cfg.finetune.epochs, u_lambda=u_lambda,
        per_modality=report["per_modality"])
    _write_outputs(cfg, metrics)
    return metrics, (encoders, heads)


def snr_sweep(cfg: ExperimentConfig, snrs, with_retx=False):
    """Train once under cfg.channel, then evaluate at each SNR in `snrs`.

    `snrs` entries are either a number (fixed dB) or the string "dynamic"
    (uniform draw over cfg.channel.snr_range per sample).  Returns
    {label: accuracy} plus the base-run metrics.
    """
    base, (encoders, heads) = run_pipeline(cfg)
    (train, _), (test, _) = make_splits(cfg)
    out = {}
    for s in snrs:
        if s == "dynamic":
            if cfg.channel.snr_range is None:
                raise ValueError("dynamic sweep point needs channel.snr_range")
            eval_cfg = dataclasses.replace(cfg.channel)
            label = "dynamic"
        else:
            eval_cfg = dataclasses.replace(cfg.channel, snr_db=float(s),
                                           snr_range=None)
            label = f"{float(s):g}"
        if with_retx and not cfg.ce_concat_baseline:
            _, calib = labeled_splits(cfg, train)
            us = retx.calibration_uncertainties(calib, encoders, heads,
                                                eval_cfg)
            policy = retx.RetxPolicy(
                u_lambda=retx.calibrate_threshold(us, cfg.policy.alpha),
                n_max=cfg.policy.n_max, alpha=cfg.policy.alpha)
            rep = retx.evaluate(test, encoders, heads, eval_cfg, policy)
            out[label] = rep["accuracy"]
        elif cfg.ce_concat_baseline:
            preds = ce_predict(encoders, heads[0], test, eval_cfg,
                               rng_key=(cfg.seed, 0x5EE9))
            out[label] = float((preds == test.labels).mean())
        else:
            out[label] = eval_accuracy(encoders, heads, test, eval_cfg,
                                       rng_key=(cfg.seed, 0x5EE9))
    return out, base


def _write_outputs(cfg: ExperimentConfig, metrics: RunMetrics):
    if not cfg.out_dir:
        return
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w") as f:
        json.dump(asdict(metrics), f, indent=2, sort_keys=True)
    with open(os.path.join(cfg.out_dir, "accuracy_curve.csv"), "w") as f:
        f.write("round,test_accuracy\n")
        for i, a in enumerate(metrics.accuracy_curve):
            f.write(f"{i + 1},{a:.10g}\n")
