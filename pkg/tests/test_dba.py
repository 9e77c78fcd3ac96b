import numpy as np
import pytest

from tsewarp.core import EmptyClass, FeatureWidthMismatch, resample_linear
from tsewarp.dba import DbaConfig, _dba_step, _lower_median, init_all_centroids, init_centroid
from tsewarp.kernel import batch_distances, dtw_reference
from tsewarp.synth import SynthSpec, class_templates, synth_sample


def test_config_validation():
    with pytest.raises(ValueError):
        DbaConfig(iterations=0)
    with pytest.raises(ValueError):
        DbaConfig(samples_per_class=0)


def test_lower_median_even_count():
    rows = np.array([[4.0, 1.0], [1.0, 2.0], [3.0, 3.0], [2.0, 0.0]])
    np.testing.assert_array_equal(_lower_median(rows), [2.0, 1.0])
    np.testing.assert_array_equal(_lower_median(rows[:3]), [3.0, 2.0])


def test_constant_samples_are_a_fixed_point(rng):
    row = rng.normal(size=(1, 4))
    samples = [np.tile(row, (8, 1)) for _ in range(5)]
    c, hist = init_centroid(samples, DbaConfig(iterations=3), return_objective=True)
    np.testing.assert_array_equal(c, samples[0])
    assert np.all(hist == 0.0)


def test_identical_samples_reach_a_fixed_point(rng):
    x = rng.normal(size=(8, 3))
    samples = [x.copy() for _ in range(4)]
    c1 = init_centroid(samples, DbaConfig(iterations=20))
    c2, _ = _dba_step(c1, samples)
    np.testing.assert_array_equal(c1, c2)
    _, hist = init_centroid(samples, DbaConfig(iterations=20), return_objective=True)
    assert np.all(np.diff(hist) <= 1e-9)


def test_single_sample_starts_from_its_resampling(rng):
    x = rng.normal(size=(13, 3))
    cfg = DbaConfig(iterations=5, centroid_len=8)
    c, hist = init_centroid([x], cfg, return_objective=True)
    init = resample_linear(x, 8)
    assert hist[0] == pytest.approx(dtw_reference(init, x)[0], rel=1e-12)
    assert len(hist) == 6 and np.all(np.diff(hist) <= 1e-9)
    assert c.shape == (8, 3) and np.all(np.isfinite(c))


def test_warped_copies_objective_non_increasing():
    spec = SynthSpec(n_classes=1, n_features=6, distractor_features=0, length_range=(6, 20), seed=11)
    templates, _ = class_templates(spec)
    samples = [synth_sample(spec, templates, 0, k) for k in range(10)]
    c, hist = init_centroid(samples, DbaConfig(iterations=15), return_objective=True)
    assert np.all(np.diff(hist) <= 1e-9)
    assert hist[-1] < hist[0]
    # the final value is the summed reference distance of the returned centroid
    oracle = sum(dtw_reference(c, s)[0] for s in samples)
    assert hist[-1] == pytest.approx(oracle, rel=1e-12)


def test_two_constant_classes():
    zeros = [np.zeros((k, 3)) for k in (5, 9, 7)]
    ones = [np.ones((k, 3)) for k in (6, 4)]
    C = init_all_centroids([zeros, ones], DbaConfig(iterations=3))
    assert C.shape == (2, 8, 3)
    np.testing.assert_array_equal(C[0], 0.0)
    np.testing.assert_array_equal(C[1], 1.0)


def test_deterministic_under_seed(rng):
    classes = [[rng.normal(size=(int(k), 4)) for k in rng.integers(5, 15, size=12)] for _ in range(2)]
    cfg = DbaConfig(samples_per_class=5, iterations=4, seed=3)
    a = init_all_centroids(classes, cfg)
    b = init_all_centroids(classes, cfg)
    np.testing.assert_array_equal(a, b)
    other = init_all_centroids(classes, DbaConfig(samples_per_class=5, iterations=4, seed=4))
    assert not np.array_equal(a, other)


def test_errors(rng):
    with pytest.raises(EmptyClass) as info:
        init_all_centroids([[np.zeros((3, 2))], []], DbaConfig(iterations=1))
    assert info.value.class_index == 1
    with pytest.raises(FeatureWidthMismatch):
        init_centroid([np.zeros((3, 2)), np.zeros((3, 3))], DbaConfig(iterations=1))


def test_synthetic_centroids_separate_classes(default_synth):
    C = init_all_centroids(default_synth, DbaConfig())
    samples = default_synth.samples
    z = batch_distances(samples, C)
    labels = np.array([s.label for s in samples])
    own = z[np.arange(len(samples)), labels]
    masked = z.copy()
    masked[np.arange(len(samples)), labels] = np.inf
    strictly_closer = own < masked.min(axis=1)
    assert strictly_closer.mean() >= 0.9
