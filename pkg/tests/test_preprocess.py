import numpy as np
import pytest

from tumorseg.phantoms import PhantomSpec, make_phantom
from tumorseg.preprocess import (
    AugmentParams,
    apply_spatial_transform,
    augment,
    zscore_normalize,
)
from tumorseg.volumes import BrainMask, LabelMap, MultiModalVolume, brain_mask


def small_case(seed=2):
    return make_phantom(
        PhantomSpec(shape=(24, 24, 24), r_wt=6.0, r_tc=4.0, r_et=2.0, seed=seed)
    )


def test_zscore_three_values():
    data = np.zeros((4, 1, 1, 3), dtype=np.float64)
    data[:, 0, 0, :] = [1.0, 2.0, 3.0]
    mask = BrainMask(mask=np.ones((1, 1, 3), dtype=bool))
    out = zscore_normalize(MultiModalVolume(data=data), mask)
    # mean 2, population std sqrt(2/3)
    expected = np.array([-1.224744871391589, 0.0, 1.224744871391589])
    np.testing.assert_allclose(out.data[0, 0, 0, :], expected, atol=1e-6)


def test_zscore_stats_and_masking(phantom_case):
    raw, _, _ = phantom_case
    mask = brain_mask(raw)
    out = zscore_normalize(raw, mask)
    for c in range(4):
        values = out.data[c][mask.mask].astype(np.float64)
        assert abs(values.mean()) < 1e-5
        assert abs(values.std() - 1.0) < 1e-5
    assert not out.data[:, ~mask.mask].any()


def test_zscore_idempotent(phantom_case):
    raw, _, _ = phantom_case
    mask = brain_mask(raw)
    once = zscore_normalize(raw, mask)
    twice = zscore_normalize(once, mask)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-5)


def test_zscore_already_normalized_is_fixed_point():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(4, 8, 8, 8))
    mask = np.ones((8, 8, 8), dtype=bool)
    for c in range(4):
        data[c] = (data[c] - data[c].mean()) / data[c].std()
    out = zscore_normalize(MultiModalVolume(data=data), BrainMask(mask=mask))
    np.testing.assert_allclose(out.data, data, atol=1e-5)


def test_zscore_constant_channel_warns():
    data = np.zeros((4, 4, 4, 4))
    data[:] = 5.0
    data[1] = np.random.default_rng(0).normal(size=(4, 4, 4))
    mask = BrainMask(mask=np.ones((4, 4, 4), dtype=bool))
    with pytest.warns(UserWarning, match="constant"):
        out = zscore_normalize(MultiModalVolume(data=data), mask)
    assert not out.data[0].any()
    assert out.data[1].any()


def test_identity_transform_is_exact():
    volume, labels = small_case()
    out_v, out_l = apply_spatial_transform(
        volume, labels, (0.0, 0.0, 0.0), 1.0, (False, False, False)
    )
    np.testing.assert_array_equal(out_v.data, volume.data.astype(np.float32))
    np.testing.assert_array_equal(out_l.labels, labels.labels)


def test_mirror_twice_is_identity():
    volume, labels = small_case()
    flips = (True, False, False)
    v1, l1 = apply_spatial_transform(volume, labels, (0, 0, 0), 1.0, flips)
    np.testing.assert_array_equal(v1.data, np.flip(volume.data, axis=1))
    v2, l2 = apply_spatial_transform(v1, l1, (0, 0, 0), 1.0, flips)
    np.testing.assert_array_equal(v2.data, volume.data.astype(np.float32))
    np.testing.assert_array_equal(l2.labels, labels.labels)


def test_identity_params_leave_input_unchanged():
    volume, labels = small_case()
    params = AugmentParams(
        rotation_range_deg=(0.0, 0.0), scale_range=(1.0, 1.0),
        mirror_prob_per_axis=0.0, seed=11,
    )
    out_v, out_l = augment(volume, labels, params)
    np.testing.assert_array_equal(out_v.data, volume.data.astype(np.float32))
    np.testing.assert_array_equal(out_l.labels, labels.labels)


def test_augment_deterministic_per_seed():
    volume, labels = small_case()
    a = augment(volume, labels, AugmentParams(seed=42))
    b = augment(volume, labels, AugmentParams(seed=42))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].labels, b[1].labels)
    c = augment(volume, labels, AugmentParams(seed=43))
    assert not np.array_equal(a[0].data, c[0].data)


def test_augment_labels_stay_valid_over_seeds():
    volume, labels = small_case()
    input_values = set(np.unique(labels.labels).tolist())
    for seed in range(100):
        _, out = augment(volume, labels, AugmentParams(seed=seed))
        assert set(np.unique(out.labels).tolist()) <= input_values


def test_augment_params_validation():
    with pytest.raises(ValueError, match="symmetric"):
        AugmentParams(rotation_range_deg=(-3.0, 6.0))
    with pytest.raises(ValueError, match="scale"):
        AugmentParams(scale_range=(1.05, 1.1))
