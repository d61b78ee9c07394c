"""Heatmap normalization and component-mean smoothing."""

import numpy as np
import pytest

from nasseg import errors
from nasseg.saliency import component_means, minmax_normalize, superpixelify
from nasseg.superpixels import connected_components

from reference import bicubic_plane


def _random_partition(rng, h=12, w=10, clusters=4):
    labels = rng.integers(0, clusters, size=(h, w)).astype(np.int32)
    return connected_components(labels, connectivity=4)


def test_minmax_hand_cases():
    np.testing.assert_allclose(
        minmax_normalize([[2.0, 4.0], [6.0, 2.0]]),
        [[0.0, 0.5], [1.0, 0.0]],
    )
    out = minmax_normalize(np.full((3, 3), 7.0))
    np.testing.assert_array_equal(out, np.zeros((3, 3), np.float32))
    assert out.dtype == np.float32


def test_minmax_range_and_endpoints():
    rng = np.random.default_rng(0)
    for trial in range(10):
        s = rng.normal(size=(9, 9)) * rng.uniform(0.1, 50)
        out = minmax_normalize(s)
        assert out.min() == 0.0
        assert out.max() == 1.0
        # order preserved
        flat_in = s.ravel()
        flat_out = out.ravel()
        idx = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[idx]) >= 0)


def test_minmax_rejects_non_finite():
    with pytest.raises(errors.NonFiniteInputError):
        minmax_normalize(np.array([[0.0, np.nan]]))
    with pytest.raises(errors.NonFiniteInputError):
        minmax_normalize(np.array([[0.0, np.inf]]))


def test_component_means_match_pixel_loop():
    rng = np.random.default_rng(1)
    for trial in range(10):
        part = _random_partition(rng)
        s = rng.normal(size=(part.height, part.width))
        means = component_means(s, part)
        sums = np.zeros(part.component_count)
        counts = np.zeros(part.component_count)
        for y in range(part.height):
            for x in range(part.width):
                sums[part.label_map[y, x]] += s[y, x]
                counts[part.label_map[y, x]] += 1
        np.testing.assert_allclose(means, sums / counts, rtol=1e-12)


def test_component_means_resizes_smaller_map():
    rng = np.random.default_rng(2)
    part = _random_partition(rng, h=16, w=16)
    small = rng.normal(size=(4, 4))
    means = component_means(small, part)
    big = bicubic_plane(small, 16, 16).astype(np.float32).astype(np.float64)
    expected = np.array(
        [big[part.label_map == cid].mean() for cid in range(part.component_count)]
    )
    np.testing.assert_allclose(means, expected, rtol=1e-6)


def test_component_means_validation():
    part = _random_partition(np.random.default_rng(3))
    with pytest.raises(errors.DimensionMismatchError):
        component_means(np.zeros(7), part)


def test_superpixelify_idempotent():
    rng = np.random.default_rng(4)
    for trial in range(10):
        part = _random_partition(rng)
        s = rng.normal(size=(part.height, part.width))
        once = superpixelify(s, part)
        twice = superpixelify(once, part)
        np.testing.assert_array_equal(once, twice)
        assert once.dtype == np.float32


def test_superpixelify_preserves_total_mass():
    rng = np.random.default_rng(5)
    for trial in range(10):
        part = _random_partition(rng)
        s = rng.uniform(0.5, 2.0, size=(part.height, part.width))
        out = superpixelify(s, part)
        assert out.sum() == pytest.approx(s.sum(), rel=1e-6)


def test_superpixelify_constant_per_component():
    rng = np.random.default_rng(6)
    part = _random_partition(rng)
    out = superpixelify(rng.normal(size=(part.height, part.width)), part)
    for cid in range(part.component_count):
        vals = out[part.label_map == cid]
        assert np.all(vals == vals[0])


def test_superpixelify_commutes_with_affine_rescale():
    # mean is linear, so superpixelify(a*s + b) == a*superpixelify(s) + b
    rng = np.random.default_rng(7)
    for trial in range(10):
        part = _random_partition(rng)
        s = rng.normal(size=(part.height, part.width))
        a = float(rng.uniform(0.2, 3.0))
        b = float(rng.normal())
        left = superpixelify(a * s + b, part)
        right = a * superpixelify(s, part) + b
        np.testing.assert_allclose(left, right, atol=1e-5)


def test_superpixelify_single_component_is_global_mean():
    part = connected_components(np.zeros((5, 5), np.int32))
    s = np.arange(25, dtype=np.float64).reshape(5, 5)
    np.testing.assert_allclose(superpixelify(s, part), np.full((5, 5), 12.0))
