"""Minimal deterministic numeric core: tiny MLPs with hand-written backprop,
plain SGD, and the special functions (digamma/trigamma/log-gamma) needed by
the Dirichlet losses.

Everything is float64 numpy. Parameters are treated as immutable values:
`sgd_step` returns a new parameter set.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np


def keyed_rng(*key):
    """Deterministic Philox generator from an integer key tuple."""
    return np.random.Generator(
        np.random.Philox(seed=np.random.SeedSequence([int(k) for k in key])))


class DimensionError(ValueError):
    """Shape mismatch between parameters and inputs."""


class NumericError(FloatingPointError):
    """Non-finite values encountered where finiteness is required."""


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

# Asymptotic series for psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n)),
# pushed to x >= 10 by the recurrence psi(x) = psi(x+1) - 1/x.
_DIGAMMA_COEFS = (
    -1.0 / 12.0, 1.0 / 120.0, -1.0 / 252.0, 1.0 / 240.0,
    -1.0 / 132.0, 691.0 / 32760.0, -1.0 / 12.0,
)

_TRIGAMMA_COEFS = (
    1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0,
    5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0,
)


def digamma(x):
    """Digamma function for x > 0 (scalar or array), abs error < 1e-10."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    result = np.zeros_like(x)
    # recurrence: psi(x) = psi(x + 1) - 1/x until x >= 10
    small = x < 10.0
    while np.any(small):
        result[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    term = inv2.copy()
    for c in _DIGAMMA_COEFS:
        series += c * term
        term *= inv2
    result += np.log(x) - 0.5 / x + series
    return float(result[0]) if scalar else result


def trigamma(x):
    """Trigamma (psi') for x > 0; derivative of `digamma`."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("trigamma requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    result = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        result[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
        small = x < 10.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    term = inv * inv2
    for c in _TRIGAMMA_COEFS:
        series += c * term
        term *= inv2
    result += inv + 0.5 * inv2 + series
    return float(result[0]) if scalar else result


def lgamma(x):
    """Natural log of the Gamma function for x > 0 (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("lgamma requires x > 0")
    if x.ndim == 0:
        return math.lgamma(float(x))
    return np.vectorize(math.lgamma)(x)


# ---------------------------------------------------------------------------
# MLP parameters
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights/biases of a fully-connected net; tanh hidden, linear output."""

    weights: list = field(default_factory=list)   # each (in, out) float64
    biases: list = field(default_factory=list)    # each (out,) float64

    @property
    def widths(self):
        if not self.weights:
            return []
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def with_flat(self, flat):
        """Rebuild params from a flat vector (same layout as `flatten`)."""
        out = self.copy()
        i = 0
        for arrs in (out.weights, out.biases):
            for k, a in enumerate(arrs):
                arrs[k] = flat[i:i + a.size].reshape(a.shape).copy()
                i += a.size
        if i != flat.size:
            raise DimensionError("flat vector size mismatch")
        return out


def init_mlp(widths, rng):
    """Random init: weights ~ N(0, 1/in_dim), zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((d_in, d_out)) / math.sqrt(d_in))
        biases.append(np.zeros(d_out))
    return MlpParams(weights, biases)


def forward(p: MlpParams, x):
    """Forward pass. Returns (output, tape); tape suffices for backward."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != p.weights[0].shape[0]:
        raise DimensionError(
            f"input width {x.shape[1]} != expected {p.weights[0].shape[0]}")
    activations = [x]
    h = x
    n_layers = len(p.weights)
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.tanh(h)
        activations.append(h)
    return h, activations


def backward(p: MlpParams, tape, upstream):
    """Gradients of sum(upstream * output) w.r.t. params and input.

    Returns (GradientSet as MlpParams-shaped container, dLoss/dInput).
    """
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if upstream.shape != tape[-1].shape:
        raise DimensionError("upstream shape mismatch with forward output")
    n_layers = len(p.weights)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    delta = upstream
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            # tape[i + 1] is the post-tanh activation
            delta = delta * (1.0 - tape[i + 1] ** 2)
        g_w[i] = tape[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        delta = delta @ p.weights[i].T
    return MlpParams(g_w, g_b), delta


def sgd_step(p: MlpParams, g: MlpParams, lr, weight_decay=0.0):
    """p' = p - lr * (g + weight_decay * p), elementwise."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    new_w, new_b = [], []
    for w, gw in zip(p.weights, g.weights):
        if not np.all(np.isfinite(gw)):
            raise NumericError("non-finite weight gradient")
        new_w.append(w - lr * (gw + weight_decay * w))
    for b, gb in zip(p.biases, g.biases):
        if not np.all(np.isfinite(gb)):
            raise NumericError("non-finite bias gradient")
        new_b.append(b - lr * gb)
    return MlpParams(new_w, new_b)


def grad_zeros_like(p: MlpParams):
    return MlpParams([np.zeros_like(w) for w in p.weights],
                     [np.zeros_like(b) for b in p.biases])


def grad_add(a: MlpParams, b: MlpParams):
    return MlpParams([x + y for x, y in zip(a.weights, b.weights)],
                     [x + y for x, y in zip(a.biases, b.biases)])


# ---------------------------------------------------------------------------
# checkpoint serialization (bit-exact round trip)
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _encode(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode(s, shape):
    raw = base64.b64decode(s.encode())
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if a.size != int(np.prod(shape)):
        raise ValueError("checkpoint array length mismatch")
    return a.reshape(shape)


def params_to_dict(p: MlpParams):
    return {
        "version": CHECKPOINT_VERSION,
        "widths": p.widths,
        "activation": "tanh-hidden/linear-out",
        "weights": [{"shape": list(w.shape), "data": _encode(w)} for w in p.weights],
        "biases": [{"shape": list(b.shape), "data": _encode(b)} for b in p.biases],
    }


def params_from_dict(d, expect_widths=None):
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {d.get('version')}")
    if expect_widths is not None and list(d["widths"]) != list(expect_widths):
        raise ValueError(
            f"architecture mismatch: checkpoint widths {d['widths']} "
            f"!= expected {list(expect_widths)}")
    weights = [_decode(e["data"], e["shape"]) for e in d["weights"]]
    biases = [_decode(e["data"], e["shape"]) for e in d["biases"]]
    return MlpParams(weights, biases)


def save_params(p: MlpParams, path):
    with open(path, "w") as f:
        json.dump(params_to_dict(p), f)


def load_params(path, expect_widths=None):
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    return params_from_dict(d, expect_widths)
