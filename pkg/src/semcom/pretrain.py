"""Stage I: local self-supervised pre-training.

Two losses on batch-wise normalized cross-correlation matrices:
  * intra-modal (per modality, between two augmented views): diagonal pulled
    to 1, off-diagonal decorrelated;
  * cross-modal (between modalities): the first k_shared dims form a shared
    block (pulled to identity), the remaining k_unique dims a unique block
    (pulled to zero).  Cross-block entries get the off-diagonal decorrelation
    penalty with weight lambda_uni -- any shared/unique correlation violates
    disentanglement.

Gradients are hand-derived and finite-difference checked in the test suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import keyed_rng
from .synthdata import AugmentConfig, SyntheticDataset, augment

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class FeaturePartition:
    k_shared: int = 8
    k_unique: int = 8

    def __post_init__(self):
        if self.k_shared < 1 or self.k_unique < 1:
            raise ValueError("both partition sizes must be >= 1")

    @property
    def k(self):
        return self.k_shared + self.k_unique


@dataclass
class PretrainConfig:
    lambda_m: float = 5e-3
    lambda_sha: float = 5e-3
    lambda_uni: float = 5e-3
    batch_size: int = 64
    epochs: int = 200
    lr: float = 0.05
    partition: FeaturePartition = field(
        default_factory=lambda: FeaturePartition(k_shared=8, k_unique=16))
    augment: AugmentConfig = field(
        default_factory=lambda: AugmentConfig(jitter_std=0.5, drop_prob=0.1))
    center: bool = False        # optional mean-centering ablation
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda_m, self.lambda_sha, self.lambda_uni) <= 0:
            raise ValueError("all lambdas must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")


def cross_correlation(za, zb, eps=EPS, center=False):
    """C[i,j] = sum_b za[b,i]*zb[b,j] / (||za[:,i]|| ||zb[:,j]|| + eps).

    Un-centered by default (matching the training objective); center=True
    subtracts batch means first, for ablation.
    """
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.shape != zb.shape:
        raise ValueError("shape mismatch")
    if za.shape[0] < 2:
        raise ValueError("need batch size >= 2")
    if center:
        za = za - za.mean(axis=0)
        zb = zb - zb.mean(axis=0)
    na = np.linalg.norm(za, axis=0)
    nb = np.linalg.norm(zb, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        log.warning("dead feature column in correlation input")
    return (za.T @ zb) / (np.outer(na, nb) + eps)


def _correlation_backward(za, zb, c, g, eps=EPS):
    """Backprop dL/dC -> (dL/dza, dL/dzb) for the un-centered correlation."""
    na = np.linalg.norm(za, axis=0)
    nb = np.linalg.norm(zb, axis=0)
    den = np.outer(na, nb) + eps
    m = g / den
    na_safe = np.where(na > 0, na, 1.0)
    nb_safe = np.where(nb > 0, nb, 1.0)
    # d/dza[b,i]: zb[b,j]/den - C_ij * nb_j * za[b,i] / (na_i * den)
    ra = (g * c * nb[None, :] / den).sum(axis=1) / na_safe
    rb = (g * c * na[:, None] / den).sum(axis=0) / nb_safe
    d_za = zb @ m.T - za * ra[None, :]
    d_zb = za @ m - zb * rb[None, :]
    return d_za, d_zb


def intra_loss(c, lambda_m):
    """Diagonal alignment + off-diagonal decorrelation. Returns (loss, dL/dC)."""
    if lambda_m <= 0:
        raise ValueError("lambda_m must be > 0")
    k = c.shape[0]
    diag = np.diag(c)
    off = c - np.diag(diag)
    loss = float(((1.0 - diag) ** 2).sum() + lambda_m * (off ** 2).sum())
    grad = 2.0 * lambda_m * off
    np.fill_diagonal(grad, -2.0 * (1.0 - diag))
    return loss, grad


def cross_loss(c, part: FeaturePartition, lambda_sha, lambda_uni):
    """Shared block -> identity, unique block -> zero, cross blocks -> zero.

    Returns (loss, dL/dC).
    """
    k = c.shape[0]
    if part.k != k:
        raise ValueError(f"partition {part.k} != correlation size {k}")
    ks = part.k_shared
    grad = np.zeros_like(c)

    sha = c[:ks, :ks]
    sha_diag = np.diag(sha)
    sha_off = sha - np.diag(sha_diag)
    l_sha = float(((1.0 - sha_diag) ** 2).sum() + lambda_sha * (sha_off ** 2).sum())
    g_sha = 2.0 * lambda_sha * sha_off
    np.fill_diagonal(g_sha, -2.0 * (1.0 - sha_diag))
    grad[:ks, :ks] = g_sha

    uni = c[ks:, ks:]
    uni_diag = np.diag(uni)
    uni_off = uni - np.diag(uni_diag)
    l_uni = float((uni_diag ** 2).sum() + lambda_uni * (uni_off ** 2).sum())
    g_uni = 2.0 * lambda_uni * uni_off
    np.fill_diagonal(g_uni, 2.0 * uni_diag)
    grad[ks:, ks:] = g_uni

    # cross-block shared/unique correlations: decorrelate with lambda_uni
    l_xblk = lambda_uni * float((c[:ks, ks:] ** 2).sum() + (c[ks:, :ks] ** 2).sum())
    grad[:ks, ks:] = 2.0 * lambda_uni * c[:ks, ks:]
    grad[ks:, :ks] = 2.0 * lambda_uni * c[ks:, :ks]

    return l_sha + l_uni + l_xblk, grad


def pretrain_batch_loss(encoders, x_views, cfg: PretrainConfig,
                        mode="proposed"):
    """Loss and encoder gradients for one minibatch.

    encoders: list of MlpParams, one per modality.
    x_views: list of (x, x_tilde) input pairs, one per modality.
    mode: "proposed" | "intra_only" | "shared_only" (unique block dropped).

    Returns (loss, [GradientSet per encoder], breakdown dict).
    """
    m_count = len(encoders)
    feats, tapes = [], []
    for p, (x, xt) in zip(encoders, x_views):
        z, tape_z = nncore.forward(p, x)
        zt, tape_zt = nncore.forward(p, xt)
        feats.append((z, zt))
        tapes.append((tape_z, tape_zt))

    grads_z = [[np.zeros_like(feats[m][0]), np.zeros_like(feats[m][1])]
               for m in range(m_count)]
    l_intra_total = 0.0
    for m in range(m_count):
        z, zt = feats[m]
        c = cross_correlation(z, zt, center=cfg.center)
        li, g_c = intra_loss(c, cfg.lambda_m)
        d_z, d_zt = _correlation_backward(z, zt, c, g_c)
        grads_z[m][0] += d_z
        grads_z[m][1] += d_zt
        l_intra_total += li

    l_cross_total = 0.0
    if mode != "intra_only":
        part = cfg.partition
        if mode == "shared_only":
            # disentanglement path disabled: only the shared block is trained
            def block_loss(c):
                ks = part.k_shared
                grad = np.zeros_like(c)
                sha = c[:ks, :ks]
                sd = np.diag(sha)
                so = sha - np.diag(sd)
                loss = float(((1 - sd) ** 2).sum()
                             + cfg.lambda_sha * (so ** 2).sum())
                g = 2.0 * cfg.lambda_sha * so
                np.fill_diagonal(g, -2.0 * (1 - sd))
                grad[:ks, :ks] = g
                return loss, grad
        else:
            def block_loss(c):
                return cross_loss(c, part, cfg.lambda_sha, cfg.lambda_uni)

        # ordered pairs (m, n), m != n, as written in the objective
        for m in range(m_count):
            for n in range(m_count):
                if n == m:
                    continue
                zm, zn = feats[m][0], feats[n][0]
                c = cross_correlation(zm, zn, center=cfg.center)
                lc, g_c = block_loss(c)
                d_zm, d_zn = _correlation_backward(zm, zn, c, g_c)
                grads_z[m][0] += d_zm
                grads_z[n][0] += d_zn
                l_cross_total += lc

    enc_grads = []
    for m in range(m_count):
        g1, _ = nncore.backward(encoders[m], tapes[m][0], grads_z[m][0])
        g2, _ = nncore.backward(encoders[m], tapes[m][1], grads_z[m][1])
        enc_grads.append(nncore.grad_add(g1, g2))

    total = l_intra_total + l_cross_total
    if not np.isfinite(total):
        raise nncore.NumericError(
            f"non-finite pretrain loss (intra={l_intra_total}, cross={l_cross_total})")
    return total, enc_grads, {"intra": l_intra_total, "cross": l_cross_total}


def pretrain_epoch(encoders, data: SyntheticDataset, cfg: PretrainConfig,
                   epoch=0, mode="proposed"):
    """One epoch of minibatch SGD; returns (updated encoders, mean losses)."""
    rng = keyed_rng(cfg.seed, 0xBA7C4, epoch)
    order = rng.permutation(data.n)
    xs = [data.x1, data.x2]
    encoders = [p.copy() for p in encoders]
    sums = {"intra": 0.0, "cross": 0.0}
    n_batches = 0
    for start in range(0, data.n - cfg.batch_size + 1, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        views = []
        for m, x in enumerate(xs):
            call = (epoch << 20) | (n_batches << 4) | m
            xb = x[idx]
            views.append((augment(xb, cfg.augment, call_id=2 * call),
                          augment(xb, cfg.augment, call_id=2 * call + 1)))
        loss, grads, parts = pretrain_batch_loss(encoders, views, cfg, mode)
        encoders = [nncore.sgd_step(p, g, cfg.lr)
                    for p, g in zip(encoders, grads)]
        sums["intra"] += parts["intra"]
        sums["cross"] += parts["cross"]
        n_batches += 1
    mean = {k: v / max(n_batches, 1) for k, v in sums.items()}
    mean["total"] = mean["intra"] + mean["cross"]
    return encoders, mean


def standardize_output(p, x, eps=EPS):
    """Rescale the final linear layer so each feature column has unit std
    on x.  The correlation losses are invariant to positive per-column
    scaling, so this changes nothing Stage I optimized for, but it leaves
    the features well-conditioned for a freshly initialized head.
    """
    z, _ = nncore.forward(p, x)
    std = z.std(axis=0)
    scale = 1.0 / np.maximum(std, eps)
    out = p.copy()
    out.weights[-1] = out.weights[-1] * scale[None, :]
    out.biases[-1] = out.biases[-1] * scale
    return out


def pretrain(encoders, data, cfg: PretrainConfig, mode="proposed",
             log_rows=None):
    """Run cfg.epochs of Stage-I training; optional per-epoch CSV rows.

    Ends with per-column feature standardization (see standardize_output).
    """
    for e in range(cfg.epochs):
        encoders, mean = pretrain_epoch(encoders, data, cfg, epoch=e, mode=mode)
        if log_rows is not None:
            log_rows.append((e, mean["intra"], mean["cross"], mean["total"]))
    xs = [data.x1, data.x2]
    return [standardize_output(p, x) for p, x in zip(encoders, xs)]


def write_loss_log(rows, path):
    with open(path, "w") as f:
        f.write("epoch,L_intra,L_cross,L_total\n")
        for e, li, lc, lt in rows:
            f.write(f"{e},{li:.10g},{lc:.10g},{lt:.10g}\n")
