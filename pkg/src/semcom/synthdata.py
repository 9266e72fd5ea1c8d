"""Two-modality synthetic dataset with known shared/unique latent factors.

Latents w1, w2 (modality-unique) and ws (shared) are standard normal.
View m sees only its own unique factor plus the shared one, through a frozen
random affine map followed by tanh.  Labels are the argmax of a noisy random
linear-tanh readout of all latents.

All randomness goes through numpy's Philox counter-based generator so that a
fixed seed gives bit-identical data across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


from .nncore import keyed_rng as _rng


@dataclass
class LatentBatch:
    w1: np.ndarray
    w2: np.ndarray
    ws: np.ndarray

    def __post_init__(self):
        if not (self.w1.shape == self.w2.shape == self.ws.shape):
            raise ValueError("latent matrices must share dimensions")

    @property
    def n(self):
        return self.w1.shape[0]

    @property
    def d(self):
        return self.w1.shape[1]


@dataclass
class SyntheticDataset:
    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    n_classes: int
    seed: int

    def __post_init__(self):
        if not (self.x1.shape[0] == self.x2.shape[0] == self.labels.shape[0]):
            raise ValueError("row counts disagree")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.n_classes:
            raise ValueError("labels out of range")

    @property
    def n(self):
        return self.labels.shape[0]


@dataclass
class AugmentConfig:
    jitter_std: float = 0.1
    drop_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.jitter_std < 0:
            raise ValueError("jitter_std must be >= 0")
        if not 0 <= self.drop_prob < 1:
            raise ValueError("drop_prob must be in [0, 1)")


def gen_latents(n, d, seed):
    """i.i.d. standard-normal latent factors, deterministic for fixed seed."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    g = _rng(seed, 0xA11CE)
    w1 = g.standard_normal((n, d))
    w2 = g.standard_normal((n, d))
    ws = g.standard_normal((n, d))
    return LatentBatch(w1, w2, ws)


def _mixer(d_in, d_out, key):
    g = _rng(*key)
    a = g.standard_normal((d_in, d_out)) / math.sqrt(d_in)
    b = g.standard_normal(d_out) * 0.1
    return a, b


def mix_views(latents: LatentBatch, mixer_seed, view_dim=None,
              noise_std=0.0, noise_seed=0, noise_mode="static"):
    """x1 = tanh(A1 [w1, ws] + b1) + eps1, likewise x2.

    The affine maps are frozen by mixer_seed; x1 never sees w2 and vice
    versa.  eps_m is i.i.d. observation noise (independent across modalities
    and samples, keyed by noise_seed), representing sensor corruption that
    carries no label information.  noise_std may be a scalar or a pair
    (lo, hi); with noise_mode="static" the pair is per-modality
    (std1, std2), with "per_sample" each sample independently draws one
    modality at the hi level and the other at lo (randomly corrupted sensor).
    With noise_mode="fade" the pair is (floor, gain): both views get additive
    noise at the floor level and each sample independently attenuates one
    modality's signal by gain -- a weak / failing sensor, whose output is
    genuinely less informative rather than larger in magnitude.
    """
    if noise_mode not in ("static", "per_sample", "fade"):
        raise ValueError(f"unknown noise_mode: {noise_mode}")
    d = latents.d
    view_dim = view_dim or 2 * d
    a1, b1 = _mixer(2 * d, view_dim, (mixer_seed, 1))
    a2, b2 = _mixer(2 * d, view_dim, (mixer_seed, 2))
    x1 = np.tanh(np.hstack([latents.w1, latents.ws]) @ a1 + b1)
    x2 = np.tanh(np.hstack([latents.w2, latents.ws]) @ a2 + b2)
    lo, hi = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (2,))
    if noise_mode == "fade":
        if not 0 <= hi <= 1:
            raise ValueError("fade gain must be in [0, 1]")
        g = _rng(noise_seed, 0x0B5)
        corrupt = g.random(latents.n) < 0.5   # which modality fades
        x1 = np.where(corrupt[:, None], hi * x1, x1)
        x2 = np.where(corrupt[:, None], x2, hi * x2)
        if lo > 0:
            x1 = x1 + lo * g.standard_normal(x1.shape)
            x2 = x2 + lo * g.standard_normal(x2.shape)
    elif lo > 0 or hi > 0:
        g = _rng(noise_seed, 0x0B5)
        if noise_mode == "per_sample":
            corrupt = g.random(latents.n) < 0.5   # which modality gets hi
            std1 = np.where(corrupt, hi, lo)[:, None]
            std2 = np.where(corrupt, lo, hi)[:, None]
        else:
            std1, std2 = lo, hi
        x1 = x1 + std1 * g.standard_normal(x1.shape)
        x2 = x2 + std2 * g.standard_normal(x2.shape)
    return x1, x2


def gen_labels(latents: LatentBatch, label_snr_db, n_classes, seed,
               shared_weight=1.0, unique_weight=1.0):
    """Labels: argmax over classes of a noisy random linear-tanh readout.

    Readout input is [ws, w1, w2] with the unique blocks scaled by
    unique_weight (0 makes labels a function of the shared factor alone).
    label_snr_db = +inf disables the additive noise.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    d = latents.d
    g = _rng(seed, 0x1ABE1)
    r = g.standard_normal((3 * d, n_classes)) / math.sqrt(3 * d)
    feats = np.hstack([shared_weight * latents.ws,
                       unique_weight * latents.w1,
                       unique_weight * latents.w2])
    scores = np.tanh(feats @ r)
    if math.isfinite(label_snr_db):
        sig_pow = float(np.mean(scores ** 2))
        noise_std = math.sqrt(sig_pow * 10 ** (-label_snr_db / 10))
        scores = scores + noise_std * g.standard_normal(scores.shape)
    return scores.argmax(axis=1).astype(np.int64)


def make_dataset(n, d, n_classes, seed, label_snr_db=10.0, view_dim=None,
                 shared_weight=1.0, unique_weight=1.0, task_seed=None,
                 obs_noise_std=0.0, obs_noise_mode="static"):
    """Full generation pipeline.

    `seed` draws the latent samples; `task_seed` (default: same as seed)
    freezes the view mixers and the label readout, so train/test splits of
    one task use different seeds but a shared task_seed.
    """
    if task_seed is None:
        task_seed = seed
    latents = gen_latents(n, d, seed)
    x1, x2 = mix_views(latents, mixer_seed=task_seed, view_dim=view_dim,
                       noise_std=obs_noise_std, noise_seed=seed,
                       noise_mode=obs_noise_mode)
    labels = gen_labels(latents, label_snr_db, n_classes, task_seed,
                        shared_weight=shared_weight, unique_weight=unique_weight)
    return SyntheticDataset(x1, x2, labels, n_classes, seed), latents


def augment(x, cfg: AugmentConfig, call_id=0):
    """Gaussian jitter then independent coordinate dropout.

    call_id separates randomness between repeated calls under one config.
    """
    g = _rng(cfg.seed, 0xA6, call_id)
    out = x + cfg.jitter_std * g.standard_normal(x.shape)
    if cfg.drop_prob > 0:
        keep = g.random(x.shape) >= cfg.drop_prob
        out = out * keep
    return out


# ---------------------------------------------------------------------------
# JSON export/import: {seed, d, C, rows: [{x1, x2, y}]}
# ---------------------------------------------------------------------------

def save_dataset(ds: SyntheticDataset, path, d=None):
    doc = {
        "seed": ds.seed,
        "d": d if d is not None else ds.x1.shape[1] // 2,
        "C": ds.n_classes,
        "rows": [
            {"x1": ds.x1[i].tolist(), "x2": ds.x2[i].tolist(), "y": int(ds.labels[i])}
            for i in range(ds.n)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_dataset(path):
    with open(path) as f:
        doc = json.load(f)
    x1 = np.array([r["x1"] for r in doc["rows"]], dtype=np.float64)
    x2 = np.array([r["x2"] for r in doc["rows"]], dtype=np.float64)
    y = np.array([r["y"] for r in doc["rows"]], dtype=np.int64)
    return SyntheticDataset(x1, x2, y, doc["C"], doc["seed"])
