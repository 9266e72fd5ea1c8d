"""Exact-enumeration verification of the information-theoretic sandwich
bound on small discrete chains, plus binned MI probing of learned features.

The chain factorizes as  Xp <- Y -> X -> Z -> Zh  (augmented view Xp, latent
feature Z, channel output Zh).  All mutual informations are exact plug-in
sums in bits.  The encoder space for the sandwich search is every
deterministic map Z = f(X) up to the alphabet bound.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

ATOL = 1e-10

# joint axis order
AX_Y, AX_X, AX_XP, AX_Z, AX_ZH = 0, 1, 2, 3, 4


class IdentityViolation(AssertionError):
    """A Markov-chain identity failed; carries the identity's name."""

    def __init__(self, name, lhs, rhs):
        super().__init__(f"{name}: |{lhs} - {rhs}| = {abs(lhs - rhs):.3e}")
        self.identity = name


@dataclass
class DiscreteChain:
    p_y: np.ndarray             # (|Y|,)
    p_x_given_y: np.ndarray     # (|Y|, |X|)
    p_xp_given_y: np.ndarray    # (|Y|, |Xp|)
    p_z_given_x: np.ndarray     # (|X|, |Z|)
    p_zh_given_z: np.ndarray    # (|Z|, |Zh|)

    def __post_init__(self):
        for name, table, axis in (
                ("p_y", self.p_y, 0), ("p_x_given_y", self.p_x_given_y, 1),
                ("p_xp_given_y", self.p_xp_given_y, 1),
                ("p_z_given_x", self.p_z_given_x, 1),
                ("p_zh_given_z", self.p_zh_given_z, 1)):
            if np.any(table < 0):
                raise ValueError(f"{name} has negative entries")
            sums = table.sum(axis=axis)
            if not np.allclose(sums, 1.0, atol=1e-12):
                raise ValueError(f"{name} rows do not sum to 1")

    def joint(self):
        """Exact joint P(y, x, xp, z, zh) per the chain factorization."""
        j = np.einsum("y,yx,yp,xz,zh->yxpzh",
                      self.p_y, self.p_x_given_y, self.p_xp_given_y,
                      self.p_z_given_x, self.p_zh_given_z)
        return j


def _xlogx(p):
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy(p):
    return float(-_xlogx(np.asarray(p, dtype=np.float64)).sum())


def mutual_info(joint, group_a, group_b):
    """Exact I(A;B) in bits from an n-way joint table.

    group_a / group_b: disjoint tuples of axis indices.
    """
    joint = np.asarray(joint, dtype=np.float64)
    if np.any(joint < 0):
        raise ValueError("negative probabilities")
    group_a = tuple(np.atleast_1d(group_a))
    group_b = tuple(np.atleast_1d(group_b))
    keep = group_a + group_b
    drop = tuple(ax for ax in range(joint.ndim) if ax not in keep)
    p_ab = joint.sum(axis=drop) if drop else joint
    # after summing, axes are ordered by original index; flatten A vs B
    kept_sorted = tuple(sorted(keep))
    perm = [kept_sorted.index(ax) for ax in group_a + group_b]
    p_ab = np.transpose(p_ab, perm)
    na = int(np.prod(p_ab.shape[:len(group_a)]))
    p_ab = p_ab.reshape(na, -1)
    return mi_from_joint2d(p_ab)


def mi_from_joint2d(p_ab):
    p_ab = np.asarray(p_ab, dtype=np.float64)
    pa = p_ab.sum(axis=1)
    pb = p_ab.sum(axis=0)
    return float(_xlogx(p_ab).sum() - _xlogx(pa).sum() - _xlogx(pb).sum())


def conditional_mi(joint, group_a, group_b, group_c):
    """Exact I(A;B|C) = I(A;B,C) - I(A;C), in bits."""
    group_b = tuple(np.atleast_1d(group_b))
    group_c = tuple(np.atleast_1d(group_c))
    return mutual_info(joint, group_a, group_b + group_c) \
        - mutual_info(joint, group_a, group_c)


def verify_markov_identities(chain: DiscreteChain, atol=ATOL):
    """Check the chain-rule identities implied by the graphical model.

    Returns a report dict; raises IdentityViolation on failure.
    """
    j = chain.joint()
    checks = {}

    czy = conditional_mi(j, (AX_ZH,), (AX_XP,), (AX_Y,))
    checks["I(Zh;Xp|Y)=0"] = (czy, 0.0)
    cxy = conditional_mi(j, (AX_X,), (AX_XP,), (AX_Y,))
    checks["I(X;Xp|Y)=0"] = (cxy, 0.0)

    i_zh_y = mutual_info(j, (AX_ZH,), (AX_Y,))
    decomposed = mutual_info(j, (AX_ZH,), (AX_XP,)) \
        + conditional_mi(j, (AX_ZH,), (AX_Y,), (AX_XP,))
    checks["I(Zh;Y)=I(Zh;Xp)+I(Zh;Y|Xp)"] = (i_zh_y, decomposed)

    i_x_xp = mutual_info(j, (AX_X,), (AX_XP,))
    i_xy = mutual_info(j, (AX_X,), (AX_Y,))
    aug_gap = conditional_mi(j, (AX_X,), (AX_Y,), (AX_XP,))
    checks["I(X;Xp)=I(X;Y)-I(X;Y|Xp)"] = (i_x_xp, i_xy - aug_gap)

    # data processing along Y -> X -> Z -> Zh
    i_zy = mutual_info(j, (AX_Z,), (AX_Y,))
    if i_zh_y > i_zy + atol or i_zy > i_xy + atol:
        raise IdentityViolation("DPI I(Zh;Y)<=I(Z;Y)<=I(X;Y)", i_zh_y, i_xy)

    for name, (lhs, rhs) in checks.items():
        if abs(lhs - rhs) > atol:
            raise IdentityViolation(name, lhs, rhs)

    return {
        "identities": {k: {"lhs": v[0], "rhs": v[1]} for k, v in checks.items()},
        "I(X;Y)": i_xy,
        "I(Zh;Y)": i_zh_y,
        "augmentation_gap": aug_gap,
        "channel_loss": mutual_info(j, (AX_Z,), (AX_XP,))
        - mutual_info(j, (AX_ZH,), (AX_XP,)),
    }


# ---------------------------------------------------------------------------
# exhaustive encoder search for the sandwich bound
# ---------------------------------------------------------------------------

@dataclass
class ChainTemplate:
    """A chain without the encoder: P(Y), P(X|Y), P(Xp|Y), channel P(Zh|Z)."""
    p_y: np.ndarray
    p_x_given_y: np.ndarray
    p_xp_given_y: np.ndarray
    p_zh_given_z: np.ndarray

    @property
    def nx(self):
        return self.p_x_given_y.shape[1]

    @property
    def nz(self):
        return self.p_zh_given_z.shape[0]


@dataclass
class MiReport:
    i_xy: float
    i_xy_given_xp: float        # augmentation gap
    eps_c: float                # channel loss of the SSL-optimal encoder
    i_zh_ssl_y: float
    i_zh_sup_y: float
    lower_bound: float
    upper_slack: float          # I(X;Y) - I(Zh_ssl;Y) >= 0
    lower_slack: float          # I(Zh_ssl;Y) - lower_bound >= 0
    sup_equality_gap: float     # |I(Zh_sup;Y) - I(X;Y)| under a clean channel
    ssl_encoder: tuple
    sup_encoder: tuple


def _encoder_stats(template: ChainTemplate, f, channel):
    """For Z = f(X) and kernel channel (|Z| x |Zh|): MI values and H(Zh|Y)."""
    p_y = template.p_y
    q_f = channel[np.asarray(f)]                  # (|X|, |Zh|)
    p_zh_given_y = template.p_x_given_y @ q_f     # (|Y|, |Zh|)
    # I(Zh; Xp): p(xp, zh) = sum_y p(y) p(xp|y) p(zh|y)
    p_xp_zh = np.einsum("y,yp,yh->ph", p_y, template.p_xp_given_y, p_zh_given_y)
    i_zh_xp = mi_from_joint2d(p_xp_zh)
    p_y_zh = p_y[:, None] * p_zh_given_y
    i_zh_y = mi_from_joint2d(p_y_zh)
    h_zh_given_y = entropy(p_y_zh) - entropy(p_y)
    return i_zh_xp, i_zh_y, h_zh_given_y


def sandwich_check(template: ChainTemplate, atol=1e-9, strict=True):
    """Brute-force the SSL and supervised optimal deterministic encoders and
    verify the sandwich bound.  With strict=True, raises IdentityViolation
    when a slack goes negative beyond atol."""
    nx, nz = template.nx, template.nz
    if nx > 5 or nz > nx:
        raise ValueError("alphabet bound exceeded (|X| <= 5, |Z| <= |X|)")

    identity_channel = np.eye(nz)
    p_y = template.p_y
    # reference quantities, independent of the encoder
    p_x_y = p_y[:, None] * template.p_x_given_y
    i_xy = mi_from_joint2d(p_x_y)
    p_x_xp = np.einsum("y,yx,yp->xp", p_y, template.p_x_given_y,
                       template.p_xp_given_y)
    i_x_xp = mi_from_joint2d(p_x_xp)
    aug_gap = i_xy - i_x_xp   # exact under the chain (identity xy-identity)

    best_ssl = None   # maximize I(Zh;Xp), tie-break min H(Zh|Y)
    best_sup = None   # maximize I(Z;Y) over a clean channel
    best_ref = None   # maximize pre-channel I(Z;Xp): channel-loss reference
    for f in itertools.product(range(nz), repeat=nx):
        i_zh_xp, i_zh_y, h_zh_y = _encoder_stats(template, f, template.p_zh_given_z)
        # clean-channel quantities: Zh = Z
        i_z_xp, i_z_y, h_z_y = _encoder_stats(template, f, identity_channel)
        if best_ssl is None or i_zh_xp > best_ssl[0] + atol or (
                abs(i_zh_xp - best_ssl[0]) <= atol and h_zh_y < best_ssl[1] - atol):
            best_ssl = (i_zh_xp, h_zh_y, i_zh_y, f)
        if best_sup is None or i_z_y > best_sup[0] + atol or (
                abs(i_z_y - best_sup[0]) <= atol and h_z_y < best_sup[1] - atol):
            best_sup = (i_z_y, h_z_y, f)
        if best_ref is None or i_z_xp > best_ref[0] + atol:
            best_ref = (i_z_xp, i_zh_xp, f)

    i_zh_ssl_xp, _, i_zh_ssl_y, f_ssl = best_ssl
    # channel loss at the reference encoder that is maximally informative
    # about the augmented view pre-channel (the identity map when |Z|=|X|),
    # so eps_c measures channel quality alone, not encoder choices
    eps_c = best_ref[0] - best_ref[1]
    lower = i_xy - aug_gap - eps_c
    i_sup_y = best_sup[0]
    if strict:
        if i_zh_ssl_y > i_xy + atol:
            raise IdentityViolation("sandwich upper", i_zh_ssl_y, i_xy)
        if i_zh_ssl_y < lower - atol:
            raise IdentityViolation("sandwich lower", i_zh_ssl_y, lower)
    return MiReport(
        i_xy=i_xy,
        i_xy_given_xp=aug_gap,
        eps_c=eps_c,
        i_zh_ssl_y=i_zh_ssl_y,
        i_zh_sup_y=i_sup_y,
        lower_bound=lower,
        upper_slack=i_xy - i_zh_ssl_y,
        lower_slack=i_zh_ssl_y - lower,
        sup_equality_gap=abs(i_sup_y - i_xy),
        ssl_encoder=tuple(f_ssl),
        sup_encoder=tuple(best_sup[2]),
    )


def random_chain(rng, ny=2, nx=3, nxp=3, nz=3, nzh=3, concentration=1.0):
    """Random DiscreteChain with Dirichlet(concentration) rows."""
    def rows(shape):
        g = rng.gamma(concentration, size=shape)
        return g / g.sum(axis=-1, keepdims=True)
    return DiscreteChain(rows((ny,)), rows((ny, nx)), rows((ny, nxp)),
                         rows((nx, nz)), rows((nz, nzh)))


def random_template(rng, ny=2, nx=3, nxp=3, nz=None, nzh=None,
                    concentration=1.0):
    nz = nz or nx
    nzh = nzh or nz
    def rows(shape):
        g = rng.gamma(concentration, size=shape)
        return g / g.sum(axis=-1, keepdims=True)
    return ChainTemplate(rows((ny,)), rows((ny, nx)), rows((ny, nxp)),
                         rows((nz, nzh)))


# ---------------------------------------------------------------------------
# binned MI probing of continuous features
# ---------------------------------------------------------------------------

def _bin_columns(a, bins):
    """Equal-width binning per column; constant columns map to bin 0."""
    a = np.asarray(a, dtype=np.float64)
    out = np.zeros(a.shape, dtype=np.int64)
    for j in range(a.shape[1]):
        col = a[:, j]
        lo, hi = col.min(), col.max()
        if hi <= lo:
            continue
        idx = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
        out[:, j] = np.clip(idx, 0, bins - 1)
    return out


def mi_probe(features, factors, bins=8):
    """Plug-in binned MI between a feature set and a factor group, in bits.

    Summed over all (feature dim, factor dim) pairs; constant columns
    contribute 0 by convention.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    fb = _bin_columns(features, bins)
    gb = _bin_columns(factors, bins)
    n = fb.shape[0]
    total = 0.0
    for i in range(fb.shape[1]):
        fi = fb[:, i]
        for j in range(gb.shape[1]):
            pair = fi * bins + gb[:, j]
            counts = np.bincount(pair, minlength=bins * bins).astype(np.float64)
            total += mi_from_joint2d((counts / n).reshape(bins, bins))
    return total


def binned_entropy(column, bins=8):
    """Entropy of one equal-width-binned column, in bits."""
    b = _bin_columns(np.asarray(column, dtype=np.float64)[:, None], bins)[:, 0]
    counts = np.bincount(b, minlength=bins).astype(np.float64)
    return entropy(counts / counts.sum())


def report_to_json(report, path):
    doc = {k: (list(v) if isinstance(v, tuple) else v)
           for k, v in report.__dict__.items()}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
