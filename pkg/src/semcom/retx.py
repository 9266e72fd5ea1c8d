"""Stage III: quantile-calibrated uncertainty threshold and the
retransmission-driven inference episode.

The threshold u_lambda is the nearest-rank (1-alpha)-quantile of predictive
uncertainty over correctly classified training samples.  At inference, each
modality transmits once; while the (intra-fused) uncertainty stays >=
u_lambda and the retry budget n_max is not exhausted, the same encoded
features are re-sent through a fresh channel draw and fused into the running
opinion.  Modalities are then combined by cross-modal fusion and the class is
the argmax of fused belief (ties -> lowest index).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import evidential as ev
from . import nncore


class CalibrationError(ValueError):
    """Raised when no calibration data is available."""


# Threshold just past the largest possible uncertainty: no opinion ever
# reaches it, so it means "never retransmit".  calibrate_threshold returns
# it when an atom of ties at u = 1.0 would otherwise break the guarantee.
U_NEVER = math.nextafter(1.0, math.inf)


@dataclass
class RetxPolicy:
    u_lambda: float = 1.0
    n_max: int = 3
    alpha: float = 0.2

    def __post_init__(self):
        if not 0 < self.u_lambda <= U_NEVER:
            raise ValueError("u_lambda must be in (0, 1] or U_NEVER")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")


@dataclass
class EpisodeResult:
    predicted: int
    fused: ev.Opinion
    attempts: list              # per-modality attempt counts (>= 1)
    symbols: int
    outages: int
    records: list = field(default_factory=list)


def calibrate_threshold(uncertainties, alpha):
    """Nearest-rank (1-alpha)-quantile: sorted ascending, 1-based index
    ceil((1-alpha) * n), clamped to [1, n].

    Ties are stepped over: if a tie block at the rank value would leave more
    than an alpha + 1/n fraction at or above the threshold (uncertainties
    have an atom at 1.0, where all evidence is zero), the threshold moves to
    the next distinct value, or just past the maximum when none exists, so
    the guarantee holds on the calibration values themselves."""
    values = sorted(float(u) for u in uncertainties)
    if not values:
        raise CalibrationError(
            "no correctly classified samples to calibrate on; "
            "fall back to u_lambda = 1 (always retransmit up to budget)")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    n = len(values)
    rank = min(max(math.ceil((1 - alpha) * n), 1), n)
    # first index of the tie block containing the rank value
    lo = bisect.bisect_left(values, values[rank - 1])
    if (n - lo) / n > alpha + 1.0 / n:
        hi = bisect.bisect_right(values, values[rank - 1])
        if hi < n:
            return values[hi]
        return math.nextafter(values[-1], math.inf)
    return values[rank - 1]


def decide_retx(u, policy: RetxPolicy):
    """1 iff u >= u_lambda (boundary inclusive)."""
    return int(u >= policy.u_lambda)


def _default_channel_fn(encoders, heads, channel_cfg):
    def channel_fn(z, sample_id, modality, attempt, snr_db=None):
        return ch.send_features(z, channel_cfg, sample_id, modality, attempt,
                                snr_db=snr_db)
    return channel_fn


def inference_episode(xs, sample_id, encoders, heads, channel_cfg,
                      policy: RetxPolicy, channel_fn=None, snr_db=None):
    """Run Stage III for one sample.

    xs: list of per-modality input rows.  channel_fn may be injected for
    scripted-channel tests; it must return (z_hat, TransmissionRecord).
    """
    if channel_fn is None:
        channel_fn = _default_channel_fn(encoders, heads, channel_cfg)
    if snr_db is None and channel_cfg is not None \
            and channel_cfg.snr_range is not None:
        snr_db = ch.sample_snr_db(channel_cfg, sample_id)

    m_count = len(encoders)
    opinions, attempts, records = [], [], []
    symbols = 0
    outages = 0
    for m in range(m_count):
        z, _ = nncore.forward(encoders[m], xs[m][None, :])
        z = z[0]

        def receive(attempt):
            z_hat, rec = channel_fn(z, sample_id, m, attempt, snr_db=snr_db)
            logits, _ = nncore.forward(heads[m], z_hat[None, :])
            return ev.opinion_from_evidence(
                ev.evidence_from_logits(logits[0])), rec

        opinion, rec = receive(0)
        records.append(rec)
        symbols += rec.n_symbols
        outages += int(rec.outage)
        n_attempts = 1
        while decide_retx(opinion.uncertainty, policy) \
                and n_attempts <= policy.n_max:
            fresh, rec = receive(n_attempts)
            records.append(rec)
            symbols += rec.n_symbols
            outages += int(rec.outage)
            opinion = ev.fuse(opinion, fresh)
            n_attempts += 1
        opinions.append(opinion)
        attempts.append(n_attempts)

    fused = ev.fuse_all(opinions)
    return EpisodeResult(fused.predicted_class(), fused, attempts, symbols,
                         outages, records)


def evaluate(data, encoders, heads, channel_cfg, policy: RetxPolicy,
             channel_fn=None):
    """Aggregate EpisodeResults over a dataset into summary metrics."""
    if data.n == 0:
        raise ValueError("empty dataset")
    xs_all = [data.x1, data.x2]
    m_count = len(encoders)
    correct = 0
    extra_attempts = 0
    symbols = 0
    retx_counts = np.zeros(m_count, dtype=np.int64)
    outages = 0
    for i in range(data.n):
        xs = [x[i] for x in xs_all]
        res = inference_episode(xs, i, encoders, heads, channel_cfg, policy,
                                channel_fn=channel_fn)
        correct += int(res.predicted == data.labels[i])
        extra = [a - 1 for a in res.attempts]
        extra_attempts += sum(extra)
        retx_counts += np.array(extra)
        symbols += res.symbols
        outages += res.outages
    # per-modality mean uncertainty in one vectorized pass
    _, _, _, uncs = ev.predict_batch(
        encoders, heads, xs_all, channel_cfg or ch.ChannelConfig(snr_db=math.inf),
        rng_key=(0xE7A1,))
    return {
        "accuracy": correct / data.n,
        "retx_ratio": extra_attempts / (m_count * data.n),
        "symbols_per_sample": symbols / data.n,
        "outages": outages,
        "per_modality": {
            str(m): {"mean_u": float(np.mean(uncs[m])),
                     "retx_count": int(retx_counts[m])}
            for m in range(m_count)
        },
    }


def calibration_uncertainties(data, encoders, heads, channel_cfg,
                              rng_key=(0xCA11B,), draws=5):
    """Per-modality uncertainties of correctly classified calibration samples,
    pooled, for threshold calibration.

    Each sample is sent through `draws` independent channel realizations;
    pooling them leaves the uncertainty marginal unchanged while steadying
    the quantile estimate on a small calibration set."""
    xs_all = [data.x1, data.x2]
    out = []
    for r in range(draws):
        preds, _, _, uncs = ev.predict_batch(encoders, heads, xs_all,
                                             channel_cfg,
                                             rng_key=(*rng_key, r))
        mask = preds == data.labels
        out.append(np.concatenate([u[mask] for u in uncs]))
    return np.concatenate(out)


def report_to_json(metrics, path):
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
