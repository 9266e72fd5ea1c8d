"""Exact discrete-chain information theory: MI worked examples, Markov
identities on random chains, the sandwich bound by exhaustive encoder search,
and binned MI probing."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semcom import infobounds as ib


# ---------------------------------------------------------------------------
# mutual information primitives
# ---------------------------------------------------------------------------

def test_mi_independent_is_zero():
    p = np.outer([0.3, 0.7], [0.25, 0.75])
    assert ib.mi_from_joint2d(p) == pytest.approx(0.0, abs=1e-15)


def test_mi_perfect_copy_is_entropy():
    p = np.diag([0.5, 0.25, 0.25])
    assert ib.mi_from_joint2d(p) == pytest.approx(1.5)  # H = 1.5 bits


def test_mi_worked_example_binary_symmetric():
    """p(x,y) = [[0.4, 0.1], [0.1, 0.4]]: I = 1 - H2(0.2)."""
    p = np.array([[0.4, 0.1], [0.1, 0.4]])
    h2 = -0.2 * math.log2(0.2) - 0.8 * math.log2(0.8)
    assert ib.mi_from_joint2d(p) == pytest.approx(1.0 - h2, abs=1e-12)


def test_mi_nonnegative_random(rng):
    for _ in range(100):
        p = rng.random((3, 4))
        p /= p.sum()
        assert ib.mi_from_joint2d(p) >= -1e-12


def test_mi_grouped_axes_consistency(rng):
    """I((A,B);C) from the 3-way table equals MI of the flattened 2-way."""
    p = rng.random((2, 3, 2))
    p /= p.sum()
    grouped = ib.mutual_info(p, (0, 1), (2,))
    flat = ib.mi_from_joint2d(p.reshape(6, 2))
    assert grouped == pytest.approx(flat, abs=1e-12)


def test_conditional_mi_chain_rule(rng):
    """I(A;B,C) = I(A;C) + I(A;B|C) by construction; cross-check against
    a direct evaluation of I(A;B|C) via conditioning."""
    p = rng.random((3, 3, 3))
    p /= p.sum()
    cmi = ib.conditional_mi(p, (0,), (1,), (2,))
    direct = 0.0
    for c in range(3):
        pc = p[:, :, c].sum()
        if pc > 0:
            direct += pc * ib.mi_from_joint2d(p[:, :, c] / pc)
    assert cmi == pytest.approx(direct, abs=1e-12)


def test_entropy_uniform():
    assert ib.entropy([0.25] * 4) == pytest.approx(2.0)
    assert ib.entropy([1.0, 0.0]) == 0.0


def test_mutual_info_rejects_negative():
    with pytest.raises(ValueError):
        ib.mutual_info(np.array([[0.5, -0.1], [0.3, 0.3]]), (0,), (1,))


# ---------------------------------------------------------------------------
# DiscreteChain and Markov identities
# ---------------------------------------------------------------------------

def test_chain_validates_rows():
    with pytest.raises(ValueError):
        ib.DiscreteChain(np.array([0.5, 0.4]), np.eye(2), np.eye(2),
                         np.eye(2), np.eye(2))


def test_joint_sums_to_one(rng):
    chain = ib.random_chain(rng)
    assert chain.joint().sum() == pytest.approx(1.0, abs=1e-12)


def test_identities_on_random_chains(rng):
    """All four identities plus the DPI hold on 100 random chains."""
    for _ in range(100):
        chain = ib.random_chain(rng, ny=2, nx=3, nxp=3, nz=3, nzh=3)
        rep = ib.verify_markov_identities(chain)
        assert rep["I(X;Y)"] >= rep["I(Zh;Y)"] - 1e-10
        assert rep["augmentation_gap"] >= -1e-10


def test_identities_degenerate_copy_chain():
    """Xp = Y exactly: augmentation gap I(X;Y|Xp) = 0."""
    chain = ib.DiscreteChain(
        np.array([0.5, 0.5]),
        np.array([[0.9, 0.1], [0.2, 0.8]]),
        np.eye(2),                       # Xp = Y
        np.array([[0.8, 0.2], [0.3, 0.7]]),
        np.eye(2))
    rep = ib.verify_markov_identities(chain)
    assert rep["augmentation_gap"] == pytest.approx(0.0, abs=1e-10)


def test_identities_independent_augmentation():
    """Xp independent of Y: gap equals the full I(X;Y)."""
    chain = ib.DiscreteChain(
        np.array([0.5, 0.5]),
        np.array([[0.9, 0.1], [0.2, 0.8]]),
        np.full((2, 2), 0.5),            # Xp independent of Y
        np.eye(2),
        np.eye(2))
    rep = ib.verify_markov_identities(chain)
    assert rep["augmentation_gap"] == pytest.approx(rep["I(X;Y)"], abs=1e-10)


def test_erasing_channel_destroys_information():
    """Zh constant regardless of Z: I(Zh;Y) = 0 and channel loss = I(Z;Xp)."""
    chain = ib.DiscreteChain(
        np.array([0.5, 0.5]),
        np.array([[0.9, 0.1], [0.2, 0.8]]),
        np.array([[0.9, 0.1], [0.2, 0.8]]),
        np.eye(2),
        np.array([[1.0, 0.0], [1.0, 0.0]]))   # constant output
    rep = ib.verify_markov_identities(chain)
    assert rep["I(Zh;Y)"] == pytest.approx(0.0, abs=1e-12)
    j = chain.joint()
    assert rep["channel_loss"] == pytest.approx(
        ib.mutual_info(j, (ib.AX_Z,), (ib.AX_XP,)), abs=1e-12)


def test_identity_violation_reports_name():
    with pytest.raises(ib.IdentityViolation) as exc:
        raise ib.IdentityViolation("test-identity", 1.0, 0.5)
    assert exc.value.identity == "test-identity"


# ---------------------------------------------------------------------------
# sandwich bound by exhaustive encoder search
# ---------------------------------------------------------------------------

def test_sandwich_random_templates(rng):
    for _ in range(25):
        tpl = ib.random_template(rng, ny=2, nx=3, nxp=3)
        rep = ib.sandwich_check(tpl)     # strict: raises on violation
        assert rep.upper_slack >= -1e-9
        assert rep.lower_slack >= -1e-9


def test_sandwich_supervised_equality_clean_channel(rng):
    """With a clean channel and |Z| = |X|, the supervised-optimal encoder
    preserves all label information: I(Zh_sup;Y) = I(X;Y)."""
    for _ in range(10):
        tpl = ib.random_template(rng, ny=2, nx=3, nxp=3)
        tpl.p_zh_given_z = np.eye(3)
        rep = ib.sandwich_check(tpl)
        assert rep.sup_equality_gap < 1e-9
        assert rep.eps_c == pytest.approx(0.0, abs=1e-9)


def test_sandwich_perfect_augmentation_zero_gap():
    """Xp determines Y (lossless augmentation): gap 0, so under a clean
    channel the SSL-optimal encoder is as informative as the supervised
    one and the sandwich pinches shut."""
    p_x_given_y = np.array([[0.9, 0.1, 0.0], [0.1, 0.1, 0.8]])
    tpl = ib.ChainTemplate(np.array([0.5, 0.5]), p_x_given_y, np.eye(2),
                           np.eye(3))
    rep = ib.sandwich_check(tpl)
    assert rep.i_xy_given_xp == pytest.approx(0.0, abs=1e-9)
    assert rep.i_zh_ssl_y == pytest.approx(rep.i_xy, abs=1e-9)
    assert rep.lower_bound == pytest.approx(rep.i_xy, abs=1e-9)


def test_sandwich_eraser_channel():
    """Fully erasing channel: eps_c = I(Z;Xp) at the reference encoder and
    I(Zh_ssl;Y) = 0, still within the (now slack) lower bound."""
    p_x_given_y = np.array([[0.9, 0.1], [0.2, 0.8]])
    tpl = ib.ChainTemplate(np.array([0.5, 0.5]), p_x_given_y, p_x_given_y,
                           np.array([[1.0, 0.0], [1.0, 0.0]]))
    rep = ib.sandwich_check(tpl)
    assert rep.i_zh_ssl_y == pytest.approx(0.0, abs=1e-12)
    assert rep.lower_bound <= 1e-9


def test_sandwich_alphabet_bound():
    big = ib.ChainTemplate(np.full(2, 0.5), np.full((2, 6), 1 / 6),
                           np.full((2, 2), 0.5), np.eye(6))
    with pytest.raises(ValueError):
        ib.sandwich_check(big)


def test_encoder_search_is_exhaustive(rng):
    """The SSL encoder chosen by sandwich_check attains the maximum
    I(Zh;Xp) over all |Z|^|X| deterministic maps (recomputed directly)."""
    tpl = ib.random_template(rng, ny=2, nx=3, nxp=2)
    rep = ib.sandwich_check(tpl)
    best = max(
        ib._encoder_stats(tpl, f, tpl.p_zh_given_z)[0]
        for f in itertools.product(range(tpl.nz), repeat=tpl.nx))
    chosen = ib._encoder_stats(tpl, rep.ssl_encoder, tpl.p_zh_given_z)[0]
    assert chosen == pytest.approx(best, abs=1e-12)


def test_report_json_round_trip(tmp_path, rng):
    import json
    rep = ib.sandwich_check(ib.random_template(rng))
    path = tmp_path / "report.json"
    ib.report_to_json(rep, path)
    doc = json.loads(path.read_text())
    assert doc["i_xy"] == pytest.approx(rep.i_xy)
    assert tuple(doc["ssl_encoder"]) == rep.ssl_encoder


# ---------------------------------------------------------------------------
# binned MI probing
# ---------------------------------------------------------------------------

def test_probe_self_copy_high(rng):
    x = rng.standard_normal((4000, 1))
    mi_self = ib.mi_probe(x, x, bins=8)
    assert mi_self > 2.0  # near log2(8) = 3 bits minus binning slack


def test_probe_independent_near_zero(rng):
    x = rng.standard_normal((4000, 2))
    y = rng.standard_normal((4000, 2))
    # plug-in estimate is positively biased; bound by the bias scale
    assert ib.mi_probe(x, y, bins=8) < 4 * 0.05 * 64


def test_probe_permutation_invariance(rng):
    """Shuffling rows jointly leaves the probe unchanged."""
    x = rng.standard_normal((500, 2))
    y = x @ rng.standard_normal((2, 2))
    perm = rng.permutation(500)
    assert ib.mi_probe(x, y) == pytest.approx(ib.mi_probe(x[perm], y[perm]),
                                              abs=1e-12)


def test_probe_constant_column_contributes_zero(rng):
    x = rng.standard_normal((500, 1))
    y = np.hstack([np.ones((500, 1)), x])
    with_const = ib.mi_probe(x, y)
    without = ib.mi_probe(x, x)
    assert with_const == pytest.approx(without, abs=1e-12)


def test_probe_monotone_under_noise(rng):
    """Probe MI with a noisier copy of the factor is lower."""
    f = rng.standard_normal((3000, 1))
    clean = ib.mi_probe(f + 0.1 * rng.standard_normal((3000, 1)), f)
    noisy = ib.mi_probe(f + 2.0 * rng.standard_normal((3000, 1)), f)
    assert noisy < clean


def test_probe_bins_validation(rng):
    with pytest.raises(ValueError):
        ib.mi_probe(rng.standard_normal((10, 1)),
                    rng.standard_normal((10, 1)), bins=1)


def test_binned_entropy_uniform_grid():
    col = np.repeat(np.arange(8), 10) + 0.5
    assert ib.binned_entropy(col, bins=8) == pytest.approx(3.0)


@given(st.integers(min_value=0, max_value=2 ** 31))
@settings(max_examples=50, deadline=None)
def test_property_identities_hold(seed):
    rng = np.random.Generator(np.random.Philox(seed=seed))
    chain = ib.random_chain(rng, ny=2, nx=2, nxp=2, nz=2, nzh=2)
    ib.verify_markov_identities(chain)  # raises on any failure
