"""Flat-fading wireless link simulation for feature vectors.

A K-dim real feature is packed into ceil(K/2) complex symbols, normalized to
unit average power, sent through AWGN or Rayleigh fading (fresh h and noise
per transmission attempt), optionally equalized with perfect CSI, and
unpacked back with the recorded power scale.

Randomness is derived per call from (seed, sample_id, modality, attempt) so
retransmissions see fresh noise while the whole trace stays reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nncore import keyed_rng

DEEP_FADE_THRESHOLD = 1e-9


@dataclass
class ChannelConfig:
    model: str = "awgn"            # "awgn" or "rayleigh"
    snr_db: float = 10.0           # math.inf => noiseless
    snr_range: tuple | None = None # (lo, hi) dB for per-sample dynamic SNR
    seed: int = 0
    equalize: bool = True

    def __post_init__(self):
        if self.model not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel model: {self.model}")
        if self.snr_range is not None:
            lo, hi = self.snr_range
            if lo > hi:
                raise ValueError("snr_range lo > hi")


@dataclass
class SymbolBlock:
    symbols: np.ndarray            # complex128
    power_scale: float             # factor undone by from_symbols
    outage: bool = False


@dataclass
class TransmissionRecord:
    sample_id: int
    modality: int
    attempt: int
    snr_db: float
    model: str
    outage: bool
    n_symbols: int


def to_symbols(z):
    """Pack real vector into unit-average-power complex symbols."""
    z = np.asarray(z, dtype=np.float64)
    if z.size < 1:
        raise ValueError("empty feature vector")
    if z.size % 2:
        z = np.concatenate([z, [0.0]])
    sym = z[0::2] + 1j * z[1::2]
    power = float(np.mean(np.abs(sym) ** 2))
    scale = math.sqrt(power) if power > 0 else 1.0
    return SymbolBlock(sym / scale, scale)


def from_symbols(block: SymbolBlock, k):
    """Inverse of to_symbols, including the recorded power scale."""
    sym = block.symbols * block.power_scale
    if sym.size != (k + 1) // 2:
        raise ValueError("symbol block length inconsistent with K")
    out = np.empty(2 * sym.size)
    out[0::2] = sym.real
    out[1::2] = sym.imag
    return out[:k]


def _draw_snr_db(cfg: ChannelConfig, rng):
    if cfg.snr_range is not None:
        lo, hi = cfg.snr_range
        return float(lo + (hi - lo) * rng.random())
    return cfg.snr_db


def _attempt_rng(cfg, sample_id, modality, attempt):
    return keyed_rng(cfg.seed, sample_id, modality, attempt)


def transmit(block: SymbolBlock, cfg: ChannelConfig,
             sample_id=0, modality=0, attempt=0, snr_db=None):
    """One channel use: y = h*s + n, fresh (h, n) per attempt.

    snr_db overrides the config (used when a per-sample SNR was already
    drawn and must be shared across that sample's modalities/attempts).
    Returns (SymbolBlock, TransmissionRecord).
    """
    rng = _attempt_rng(cfg, sample_id, modality, attempt)
    s = _draw_snr_db(cfg, rng) if snr_db is None else snr_db
    sym = block.symbols
    outage = False

    if cfg.model == "rayleigh":
        h = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
    else:
        h = 1.0 + 0.0j

    if math.isinf(s):
        noise = np.zeros_like(sym)
    else:
        sigma2 = 10.0 ** (-s / 10.0)
        noise = math.sqrt(sigma2 / 2) * (
            rng.standard_normal(sym.size) + 1j * rng.standard_normal(sym.size))

    received = h * sym + noise
    if cfg.model == "rayleigh" and cfg.equalize:
        if abs(h) < DEEP_FADE_THRESHOLD:
            outage = True  # deep fade: equalization impossible, noise-only
            received = noise
        else:
            received = received / h

    out = SymbolBlock(received, block.power_scale, outage)
    rec = TransmissionRecord(sample_id, modality, attempt, s, cfg.model,
                             outage, sym.size)
    return out, rec


def send_features(z, cfg: ChannelConfig, sample_id=0, modality=0, attempt=0,
                  snr_db=None):
    """Convenience: to_symbols -> transmit -> from_symbols."""
    block = to_symbols(z)
    rx, rec = transmit(block, cfg, sample_id, modality, attempt, snr_db)
    z_hat = from_symbols(rx, np.asarray(z).size)
    return z_hat, rec


def send_features_batch(z, cfg: ChannelConfig, rng_key):
    """Vectorized feature transmission for a (B, K) batch.

    One RNG keyed by rng_key drives the whole batch: per-row SNR (dynamic
    mode), per-row fading coefficient, and i.i.d. noise.  Used by training
    loops; per-sample traces go through `send_features`.
    """
    z = np.asarray(z, dtype=np.float64)
    b, k = z.shape
    rng = keyed_rng(*rng_key)
    padded = z if k % 2 == 0 else np.hstack([z, np.zeros((b, 1))])
    sym = padded[:, 0::2] + 1j * padded[:, 1::2]
    n_sym = sym.shape[1]
    power = np.mean(np.abs(sym) ** 2, axis=1)
    scale = np.where(power > 0, np.sqrt(power), 1.0)
    sym = sym / scale[:, None]

    if cfg.snr_range is not None:
        lo, hi = cfg.snr_range
        snr = lo + (hi - lo) * rng.random(b)
    else:
        snr = np.full(b, cfg.snr_db)

    if cfg.model == "rayleigh":
        h = (rng.standard_normal(b) + 1j * rng.standard_normal(b)) / math.sqrt(2)
    else:
        h = np.ones(b, dtype=np.complex128)

    noiseless = np.isinf(snr)
    sigma2 = np.where(noiseless, 0.0, 10.0 ** (-snr / 10.0))
    noise = np.sqrt(sigma2 / 2)[:, None] * (
        rng.standard_normal((b, n_sym)) + 1j * rng.standard_normal((b, n_sym)))

    received = h[:, None] * sym + noise
    if cfg.model == "rayleigh" and cfg.equalize:
        deep = np.abs(h) < DEEP_FADE_THRESHOLD
        h_safe = np.where(deep, 1.0, h)
        received = np.where(deep[:, None], noise, received / h_safe[:, None])

    received = received * scale[:, None]
    out = np.empty((b, 2 * n_sym))
    out[:, 0::2] = received.real
    out[:, 1::2] = received.imag
    return out[:, :k]


def sample_snr_db(cfg: ChannelConfig, sample_id):
    """Per-sample SNR draw for dynamic-SNR mode (shared across modalities)."""
    rng = _attempt_rng(cfg, sample_id, 0xFFFF, 0)
    return _draw_snr_db(cfg, rng)


def trace_to_csv(records, path):
    with open(path, "w") as f:
        f.write("sample_id,modality,attempt,snr_db,model,outage_flag,symbols\n")
        for r in records:
            f.write(f"{r.sample_id},{r.modality},{r.attempt},{r.snr_db:.6g},"
                    f"{r.model},{int(r.outage)},{r.n_symbols}\n")
