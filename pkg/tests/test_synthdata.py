"""Synthetic data generator: determinism, modality separation, label rules,
augmentation statistics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semcom import synthdata as sd


# ---------------------------------------------------------------------------
# gen_latents
# ---------------------------------------------------------------------------

def test_latents_deterministic():
    a = sd.gen_latents(4, 2, seed=7)
    b = sd.gen_latents(4, 2, seed=7)
    np.testing.assert_array_equal(a.w1, b.w1)
    np.testing.assert_array_equal(a.w2, b.w2)
    np.testing.assert_array_equal(a.ws, b.ws)


def test_latents_standard_normal_moments():
    lat = sd.gen_latents(10000, 8, seed=1)
    for w in (lat.w1, lat.w2, lat.ws):
        assert np.all(np.abs(w.mean(axis=0)) < 4.0 / math.sqrt(10000))
        assert np.all(np.abs(w.std(axis=0) - 1.0) < 0.05)


def test_latents_seed_sensitivity():
    a = sd.gen_latents(1, 1, seed=0)
    b = sd.gen_latents(1, 1, seed=1)
    assert a.w1[0, 0] != b.w1[0, 0]


def test_latents_invalid_args():
    with pytest.raises(ValueError):
        sd.gen_latents(0, 3, seed=0)
    with pytest.raises(ValueError):
        sd.gen_latents(3, 0, seed=0)


# ---------------------------------------------------------------------------
# mix_views: modality separation
# ---------------------------------------------------------------------------

def _perturbed(lat, which, rng):
    kw = {"w1": lat.w1.copy(), "w2": lat.w2.copy(), "ws": lat.ws.copy()}
    kw[which] = kw[which] + rng.standard_normal(kw[which].shape)
    return sd.LatentBatch(**kw)


def test_x2_independent_of_w1(rng):
    lat = sd.gen_latents(16, 4, seed=3)
    x1a, x2a = sd.mix_views(lat, mixer_seed=5)
    _, x2b = sd.mix_views(_perturbed(lat, "w1", rng), mixer_seed=5)
    np.testing.assert_array_equal(x2a, x2b)


def test_x1_independent_of_w2(rng):
    lat = sd.gen_latents(16, 4, seed=3)
    x1a, _ = sd.mix_views(lat, mixer_seed=5)
    x1b, _ = sd.mix_views(_perturbed(lat, "w2", rng), mixer_seed=5)
    np.testing.assert_array_equal(x1a, x1b)


def test_mix_views_deterministic():
    lat = sd.gen_latents(8, 3, seed=2)
    a = sd.mix_views(lat, mixer_seed=9)
    b = sd.mix_views(lat, mixer_seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_mix_views_observation_noise_keyed():
    lat = sd.gen_latents(8, 3, seed=2)
    a = sd.mix_views(lat, mixer_seed=9, noise_std=0.5, noise_seed=1)
    b = sd.mix_views(lat, mixer_seed=9, noise_std=0.5, noise_seed=1)
    c = sd.mix_views(lat, mixer_seed=9, noise_std=0.5, noise_seed=2)
    np.testing.assert_array_equal(a[0], b[0])
    assert not np.array_equal(a[0], c[0])


def test_mix_views_fade_scales_one_modality():
    lat = sd.gen_latents(64, 3, seed=2)
    clean1, clean2 = sd.mix_views(lat, mixer_seed=9)
    x1, x2 = sd.mix_views(lat, mixer_seed=9, noise_std=(0.0, 0.25),
                          noise_seed=5, noise_mode="fade")
    corrupt = sd._rng(5, 0x0B5).random(64) < 0.5
    np.testing.assert_allclose(x1[corrupt], 0.25 * clean1[corrupt])
    np.testing.assert_allclose(x1[~corrupt], clean1[~corrupt])
    np.testing.assert_allclose(x2[corrupt], clean2[corrupt])
    np.testing.assert_allclose(x2[~corrupt], 0.25 * clean2[~corrupt])


def test_mix_views_fade_rejects_gain_above_one():
    lat = sd.gen_latents(8, 3, seed=2)
    with pytest.raises(ValueError):
        sd.mix_views(lat, mixer_seed=9, noise_std=(0.1, 1.5),
                     noise_mode="fade")


def test_mix_views_unknown_mode_rejected():
    lat = sd.gen_latents(8, 3, seed=2)
    with pytest.raises(ValueError):
        sd.mix_views(lat, mixer_seed=9, noise_std=0.5, noise_mode="burst")


# ---------------------------------------------------------------------------
# gen_labels
# ---------------------------------------------------------------------------

def test_labels_deterministic_at_infinite_snr():
    lat = sd.gen_latents(64, 4, seed=11)
    a = sd.gen_labels(lat, math.inf, 4, seed=11)
    b = sd.gen_labels(lat, math.inf, 4, seed=11)
    np.testing.assert_array_equal(a, b)


def test_labels_permutation_equivariant():
    lat = sd.gen_latents(32, 4, seed=5)
    labels = sd.gen_labels(lat, math.inf, 3, seed=5)
    perm = np.random.Generator(np.random.Philox(seed=0)).permutation(32)
    lat_p = sd.LatentBatch(lat.w1[perm], lat.w2[perm], lat.ws[perm])
    labels_p = sd.gen_labels(lat_p, math.inf, 3, seed=5)
    np.testing.assert_array_equal(labels[perm], labels_p)


def test_labels_shared_only_readout_ignores_unique(rng):
    """With unique_weight=0 the labels depend on ws alone: a classifier that
    sees only ws (the noiseless readout itself) is Bayes-optimal."""
    lat = sd.gen_latents(256, 4, seed=13)
    labels = sd.gen_labels(lat, math.inf, 4, seed=13, unique_weight=0.0)
    lat_other = sd.LatentBatch(rng.standard_normal(lat.w1.shape),
                               rng.standard_normal(lat.w2.shape), lat.ws)
    labels_other = sd.gen_labels(lat_other, math.inf, 4, seed=13,
                                 unique_weight=0.0)
    np.testing.assert_array_equal(labels, labels_other)


def test_labels_reject_single_class():
    lat = sd.gen_latents(4, 2, seed=0)
    with pytest.raises(ValueError):
        sd.gen_labels(lat, 10.0, 1, seed=0)


def test_label_distribution_nondegenerate():
    data, _ = sd.make_dataset(10000, 8, 4, seed=0, label_snr_db=25.0)
    counts = np.bincount(data.labels, minlength=4)
    assert np.all(counts > 0)


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def test_augment_identity_config(rng):
    x = rng.standard_normal((8, 5))
    cfg = sd.AugmentConfig(jitter_std=0.0, drop_prob=0.0)
    np.testing.assert_array_equal(sd.augment(x, cfg), x)


def test_augment_drop_fraction(rng):
    x = np.ones((100, 200))
    cfg = sd.AugmentConfig(jitter_std=0.0, drop_prob=0.5, seed=4)
    out = sd.augment(x, cfg)
    frac = float((out == 0).mean())
    assert abs(frac - 0.5) < 0.05


def test_augment_deterministic(rng):
    x = rng.standard_normal((8, 5))
    cfg = sd.AugmentConfig(jitter_std=0.3, drop_prob=0.2, seed=1)
    np.testing.assert_array_equal(sd.augment(x, cfg, call_id=3),
                                  sd.augment(x, cfg, call_id=3))
    assert not np.array_equal(sd.augment(x, cfg, call_id=3),
                              sd.augment(x, cfg, call_id=4))


def test_augment_config_validation():
    with pytest.raises(ValueError):
        sd.AugmentConfig(jitter_std=-0.1)
    with pytest.raises(ValueError):
        sd.AugmentConfig(drop_prob=1.0)


# ---------------------------------------------------------------------------
# dataset round trip & invariants
# ---------------------------------------------------------------------------

def test_dataset_json_round_trip(tmp_path):
    data, _ = sd.make_dataset(16, 3, 4, seed=8, view_dim=6)
    path = tmp_path / "d.json"
    sd.save_dataset(data, path, d=3)
    back = sd.load_dataset(path)
    np.testing.assert_array_equal(back.x1, data.x1)
    np.testing.assert_array_equal(back.x2, data.x2)
    np.testing.assert_array_equal(back.labels, data.labels)
    assert back.n_classes == data.n_classes


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError):
        sd.SyntheticDataset(np.zeros((2, 3)), np.zeros((2, 3)),
                            np.array([0, 5]), n_classes=4, seed=0)


def test_task_seed_freezes_task():
    """Two splits with different latent seeds but one task_seed share the
    mixers and readout: identical latents map to identical rows."""
    a, lat_a = sd.make_dataset(8, 3, 4, seed=1, task_seed=42,
                               label_snr_db=math.inf)
    b, lat_b = sd.make_dataset(8, 3, 4, seed=2, task_seed=42,
                               label_snr_db=math.inf)
    assert not np.array_equal(lat_a.w1, lat_b.w1)
    x1, _ = sd.mix_views(lat_b, mixer_seed=42)
    np.testing.assert_array_equal(x1, b.x1)


@given(st.integers(min_value=0, max_value=2 ** 31))
@settings(max_examples=20, deadline=None)
def test_make_dataset_labels_in_range(seed):
    data, _ = sd.make_dataset(16, 2, 3, seed=seed)
    assert data.labels.min() >= 0 and data.labels.max() < 3
