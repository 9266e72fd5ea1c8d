"""Stage II: evidential heads, Dirichlet opinion algebra, reliability-aware
fusion, and the fine-tuning objective.

Evidence e >= 0 induces Dir(gamma = e + 1); belief b_c = e_c / S and
uncertainty u = C / S with S = sum(e) + C.  Two opinions combine via

    b_c = (b1_c u2 + b2_c u1) / (u1 + u2 - u1 u2)
    u   = u1 u2 / (u1 + u2 - u1 u2)

The fine-tuning loss per sample is the Dirichlet NLL (digamma form) plus an
annealed KL toward the uniform prior, applied to each modality's opinion and
to the fused opinion.  All gradients are hand-derived; the channel
perturbation is held constant during backprop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import nncore
from .nncore import digamma, keyed_rng, lgamma, trigamma

SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# opinion algebra
# ---------------------------------------------------------------------------

@dataclass
class Opinion:
    belief: np.ndarray
    uncertainty: float

    def __post_init__(self):
        self.belief = np.asarray(self.belief, dtype=np.float64)
        if np.any(self.belief < 0):
            raise ValueError("negative belief mass")
        if not 0 < self.uncertainty <= 1:
            raise ValueError("uncertainty must be in (0, 1]")
        total = self.belief.sum() + self.uncertainty
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"belief + uncertainty = {total} != 1")

    @property
    def n_classes(self):
        return self.belief.size

    @property
    def evidence(self):
        return self.n_classes * self.belief / self.uncertainty

    def predicted_class(self):
        return int(np.argmax(self.belief))  # ties -> lowest index


def vacuous(n_classes):
    return Opinion(np.zeros(n_classes), 1.0)


def evidence_from_logits(logits):
    """Non-negative activation: e_c = max(logit_c, 0)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    return np.maximum(logits, 0.0)


def opinion_from_evidence(e):
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("negative evidence")
    c = e.size
    s = e.sum() + c
    return Opinion(e / s, c / s)


def fuse(o1: Opinion, o2: Opinion):
    """Reliability-aware combination of two opinions."""
    if o1.n_classes != o2.n_classes:
        raise ValueError("class-count mismatch")
    u1, u2 = o1.uncertainty, o2.uncertainty
    # the vacuous opinion is the identity element; returning the other
    # operand keeps the identity law exact in floating point
    if u2 == 1.0:
        return Opinion(o1.belief.copy(), u1)
    if u1 == 1.0:
        return Opinion(o2.belief.copy(), u2)
    den = u1 + u2 - u1 * u2
    b = (o1.belief * u2 + o2.belief * u1) / den
    return Opinion(b, u1 * u2 / den)


def fuse_all(opinions):
    """Left fold of fuse over a non-empty sequence."""
    opinions = list(opinions)
    if not opinions:
        raise ValueError("empty opinion sequence")
    acc = opinions[0]
    for o in opinions[1:]:
        acc = fuse(acc, o)
    return acc


# ---------------------------------------------------------------------------
# losses (single sample)
# ---------------------------------------------------------------------------

def acc_loss(e, y_onehot):
    """Dirichlet NLL in digamma form. Returns (loss, dLoss/de)."""
    e = np.asarray(e, dtype=np.float64)
    y = np.asarray(y_onehot, dtype=np.float64)
    c = e.size
    s = e.sum() + c
    gamma = e + 1.0
    loss = float(np.sum(y * (digamma(s) - digamma(gamma))))
    grad = trigamma(s) - y * trigamma(gamma)
    return loss, grad


def masked_alpha(gamma, y_onehot):
    """gamma_tilde = y + (1 - y) * gamma: true-class entry pinned to 1."""
    gamma = np.asarray(gamma, dtype=np.float64)
    y = np.asarray(y_onehot, dtype=np.float64)
    return y + (1.0 - y) * gamma


def kl_uniform(gamma_t):
    """KL(Dir(gamma_t) || Dir(1)). Returns (kl, dKL/dgamma_t)."""
    gamma_t = np.asarray(gamma_t, dtype=np.float64)
    if np.any(gamma_t < 1.0 - 1e-12):
        raise ValueError("gamma_tilde entries must be >= 1")
    c = gamma_t.size
    s = gamma_t.sum()
    kl = float(lgamma(s) - np.sum(lgamma(gamma_t)) - lgamma(float(c))
               + np.sum((gamma_t - 1.0) * (digamma(gamma_t) - digamma(s))))
    grad = (gamma_t - 1.0) * trigamma(gamma_t) - (s - c) * trigamma(s)
    return kl, grad


def anneal_lambda(t, total, lam0, lam_max=1.0):
    """lambda_t = min(lam0 * exp(-(ln lam0 / T) t), lam_max): exponential
    ramp from lam0 at t=0 toward 1 at t=T, clipped at lam_max.  A cap below
    1 keeps the late-epoch KL pull from flattening evidence the expected
    cross-entropy has already earned."""
    if not 0 < lam0 < 1:
        raise ValueError("lambda_0 must be in (0, 1)")
    if not 0 <= t <= total:
        raise ValueError("epoch out of range")
    return min(lam0 * math.exp(-math.log(lam0) / total * t), lam_max)


# ---------------------------------------------------------------------------
# batched opinion math for training
# ---------------------------------------------------------------------------

def _batch_opinion(e):
    """e: (B, C) -> (belief (B, C), uncertainty (B,))."""
    c = e.shape[1]
    s = e.sum(axis=1) + c
    return e / s[:, None], c / s


def _batch_fuse(b1, u1, b2, u2):
    den = u1 + u2 - u1 * u2
    b = (b1 * u2[:, None] + b2 * u1[:, None]) / den[:, None]
    u = u1 * u2 / den
    # vacuous rows pass the other operand through exactly (identity law)
    vac2 = u2 == 1.0
    if np.any(vac2):
        b[vac2] = b1[vac2]
        u[vac2] = u1[vac2]
    vac1 = (u1 == 1.0) & ~vac2
    if np.any(vac1):
        b[vac1] = b2[vac1]
        u[vac1] = u2[vac1]
    return b, u


def _batch_fuse_backward(b1, u1, b2, u2, bf, uf, dbf, duf):
    """Reverse-mode partials of one fuse step."""
    den = u1 + u2 - u1 * u2
    db1 = dbf * (u2 / den)[:, None]
    db2 = dbf * (u1 / den)[:, None]
    du1 = (dbf * (b2 - bf * (1.0 - u2)[:, None])).sum(axis=1) / den \
        + duf * u2 ** 2 / den ** 2
    du2 = (dbf * (b1 - bf * (1.0 - u1)[:, None])).sum(axis=1) / den \
        + duf * u1 ** 2 / den ** 2
    return db1, du1, db2, du2


def _batch_acc_kl(e, y_onehot, lam):
    """Per-modality acc + lam*KL on a batch. Returns (loss_acc, loss_kl, de)."""
    b, c = e.shape
    s = e.sum(axis=1) + c
    gamma = e + 1.0
    acc = (y_onehot * (digamma(s)[:, None] - digamma(gamma))).sum()
    d_acc = trigamma(s)[:, None] - y_onehot * trigamma(gamma)

    gt = y_onehot + (1.0 - y_onehot) * gamma
    st = gt.sum(axis=1)
    kl = (lgamma(st) - lgamma(gt).sum(axis=1) - lgamma(float(c))
          + ((gt - 1.0) * (digamma(gt) - digamma(st)[:, None])).sum(axis=1)).sum()
    q = (gt - 1.0) * trigamma(gt) - ((st - c) * trigamma(st))[:, None]
    d_kl = (1.0 - y_onehot) * q
    return float(acc), float(kl), d_acc + lam * d_kl


def _fused_acc_kl(bf, uf, y_onehot, lam):
    """acc + lam*KL on the fused opinion; grads w.r.t. (bf, uf)."""
    b, c = bf.shape
    sf = c / uf
    ef = c * bf / uf[:, None]
    gamma = ef + 1.0
    acc = (y_onehot * (digamma(sf)[:, None] - digamma(gamma))).sum()
    dbf = -y_onehot * trigamma(gamma) * (c / uf)[:, None]
    duf = (-c / uf ** 2) * trigamma(sf) \
        + (c / uf ** 2) * (y_onehot * bf * trigamma(gamma)).sum(axis=1)

    gt = y_onehot + (1.0 - y_onehot) * gamma
    st = gt.sum(axis=1)
    kl = (lgamma(st) - lgamma(gt).sum(axis=1) - lgamma(float(c))
          + ((gt - 1.0) * (digamma(gt) - digamma(st)[:, None])).sum(axis=1)).sum()
    q = (1.0 - y_onehot) * ((gt - 1.0) * trigamma(gt)
                            - ((st - c) * trigamma(st))[:, None])
    dbf = dbf + lam * q * (c / uf)[:, None]
    duf = duf + lam * (q * (-c) * bf / (uf ** 2)[:, None]).sum(axis=1)
    return float(acc), float(kl), dbf, duf


def _evidence_grad_from_opinion_grad(e, db, du):
    """Chain (dL/db, dL/du) back to dL/de for b = e/S, u = C/S."""
    c = e.shape[1]
    s = e.sum(axis=1) + c
    inner = (db * e).sum(axis=1)
    return db / s[:, None] - ((inner + du * c) / s ** 2)[:, None]


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

@dataclass
class FinetuneConfig:
    lam0: float = 1e-2
    lam_max: float = 0.25       # cap on the annealed KL weight
    epochs: int = 80
    lr: float = 0.015
    lr_decay: float = 0.05      # lr_t = lr / (1 + lr_decay * t)
    encoder_lr_scale: float = 0.08  # encoders move slower than heads
    batch_size: int = 32
    train_fused_term: bool = True
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lam0 < 1:
            raise ValueError("lambda_0 must be in (0, 1)")
        if not self.lam0 <= self.lam_max <= 1:
            raise ValueError("lam_max must be in [lam0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def finetune_batch(encoders, heads, xs, y_onehot, deltas, lam,
                   train_fused=True):
    """Loss and gradients for one minibatch.

    xs: list of (B, D_m) inputs; deltas: list of (B, K) channel perturbations
    (held constant in the backward pass).
    Returns (loss, enc_grads, head_grads, stats).
    """
    m_count = len(encoders)
    z_hats, tapes_e, tapes_h, evidences, masks = [], [], [], [], []
    for m in range(m_count):
        z, tape_e = nncore.forward(encoders[m], xs[m])
        z_hat = z + deltas[m]
        logits, tape_h = nncore.forward(heads[m], z_hat)
        e = np.maximum(logits, 0.0)
        z_hats.append(z_hat)
        tapes_e.append(tape_e)
        tapes_h.append(tape_h)
        evidences.append(e)
        masks.append(logits > 0)

    total_acc = total_kl = 0.0
    d_es = []
    for m in range(m_count):
        acc, kl, de = _batch_acc_kl(evidences[m], y_onehot, lam)
        total_acc += acc
        total_kl += lam * kl
        d_es.append(de)

    beliefs, uncs = zip(*[_batch_opinion(e) for e in evidences])
    # left fold across modalities, keeping intermediates for the reverse pass
    fold_b, fold_u = [beliefs[0]], [uncs[0]]
    for m in range(1, m_count):
        b, u = _batch_fuse(fold_b[-1], fold_u[-1], beliefs[m], uncs[m])
        fold_b.append(b)
        fold_u.append(u)
    bf, uf = fold_b[-1], fold_u[-1]

    if train_fused:
        acc_f, kl_f, dbf, duf = _fused_acc_kl(bf, uf, y_onehot, lam)
        total_acc += acc_f
        total_kl += lam * kl_f
        for m in range(m_count - 1, 0, -1):
            db_acc, du_acc, db_m, du_m = _batch_fuse_backward(
                fold_b[m - 1], fold_u[m - 1], beliefs[m], uncs[m],
                fold_b[m], fold_u[m], dbf, duf)
            d_es[m] += _evidence_grad_from_opinion_grad(
                evidences[m], db_m, du_m)
            dbf, duf = db_acc, du_acc
        d_es[0] += _evidence_grad_from_opinion_grad(evidences[0], dbf, duf)

    enc_grads, head_grads = [], []
    for m in range(m_count):
        d_logits = d_es[m] * masks[m]
        gh, d_zhat = nncore.backward(heads[m], tapes_h[m], d_logits)
        ge, _ = nncore.backward(encoders[m], tapes_e[m], d_zhat)
        head_grads.append(gh)
        enc_grads.append(ge)

    loss = total_acc + total_kl
    if not np.isfinite(loss):
        raise nncore.NumericError(f"non-finite fine-tuning loss: {loss}")
    preds = np.argmax(bf, axis=1)
    stats = {
        "acc_loss": total_acc,
        "kl_loss": total_kl,
        "correct": int((preds == np.argmax(y_onehot, axis=1)).sum()),
        "mean_u": [float(u.mean()) for u in uncs],
        "dead_evidence_frac": float(np.mean([1.0 - m.mean() for m in masks])),
    }
    return loss, enc_grads, head_grads, stats


def finetune_epoch(encoders, heads, data, channel_cfg, cfg: FinetuneConfig, t):
    """One supervised epoch over the channel. Returns (encoders, heads,
    mean loss, train accuracy, stats)."""
    lam = anneal_lambda(t, cfg.epochs, cfg.lam0, cfg.lam_max)
    lr = cfg.lr / (1.0 + cfg.lr_decay * t)
    rng = keyed_rng(cfg.seed, 0xF17E, t)
    order = rng.permutation(data.n)
    xs_all = [data.x1, data.x2]
    encoders = [p.copy() for p in encoders]
    heads = [p.copy() for p in heads]
    eye = np.eye(data.n_classes)

    total_loss = 0.0
    total_correct = 0
    total_seen = 0
    agg = {"acc_loss": 0.0, "kl_loss": 0.0, "mean_u": None, "dead": 0.0}
    n_batches = 0
    for start in range(0, data.n - cfg.batch_size + 1, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        y_onehot = eye[data.labels[idx]]
        xs = [x[idx] for x in xs_all]
        deltas = []
        for m in range(len(encoders)):
            z, _ = nncore.forward(encoders[m], xs[m])
            z_hat = ch.send_features_batch(
                z, channel_cfg, rng_key=(cfg.seed, t, n_batches, m))
            deltas.append(z_hat - z)
        loss, enc_g, head_g, stats = finetune_batch(
            encoders, heads, xs, y_onehot, deltas, lam,
            train_fused=cfg.train_fused_term)
        encoders = [nncore.sgd_step(p, g, lr * cfg.encoder_lr_scale,
                                    cfg.weight_decay)
                    for p, g in zip(encoders, enc_g)]
        heads = [nncore.sgd_step(p, g, lr, cfg.weight_decay)
                 for p, g in zip(heads, head_g)]
        total_loss += loss
        total_correct += stats["correct"]
        total_seen += len(idx)
        agg["acc_loss"] += stats["acc_loss"]
        agg["kl_loss"] += stats["kl_loss"]
        mu = np.array(stats["mean_u"])
        agg["mean_u"] = mu if agg["mean_u"] is None else agg["mean_u"] + mu
        n_batches += 1

    mean_loss = total_loss / max(total_seen, 1)
    accuracy = total_correct / max(total_seen, 1)
    epoch_stats = {
        "lambda_t": lam,
        "loss_acc": agg["acc_loss"] / max(total_seen, 1),
        "loss_kl": agg["kl_loss"] / max(total_seen, 1),
        "mean_u": (agg["mean_u"] / max(n_batches, 1)).tolist()
        if agg["mean_u"] is not None else [],
    }
    return encoders, heads, mean_loss, accuracy, epoch_stats


def predict_batch(encoders, heads, xs, channel_cfg, rng_key):
    """One-shot transmission and fused prediction for a batch.

    Returns (predictions, fused beliefs, fused uncertainties,
    per-modality uncertainties)."""
    beliefs, uncs = [], []
    for m in range(len(encoders)):
        z, _ = nncore.forward(encoders[m], xs[m])
        z_hat = ch.send_features_batch(z, channel_cfg,
                                       rng_key=tuple(rng_key) + (m,))
        logits, _ = nncore.forward(heads[m], z_hat)
        b, u = _batch_opinion(np.maximum(logits, 0.0))
        beliefs.append(b)
        uncs.append(u)
    bf, uf = beliefs[0], uncs[0]
    for m in range(1, len(encoders)):
        bf, uf = _batch_fuse(bf, uf, beliefs[m], uncs[m])
    return np.argmax(bf, axis=1), bf, uf, uncs
