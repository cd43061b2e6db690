import numpy as np
import pytest

from lidarforge import (ValidationError, estimate_normals, lambert_intensity,
                        normalize_and_noise)


def fibonacci_sphere(n, center, radius=1.0):
    """Near-uniform points on a sphere (deterministic)."""
    i = np.arange(n)
    phi = np.arccos(1 - 2 * (i + 0.5) / n)
    theta = np.pi * (1 + 5**0.5) * i
    pts = np.stack([np.sin(phi) * np.cos(theta),
                    np.sin(phi) * np.sin(theta),
                    np.cos(phi)], axis=1) * radius
    return pts + np.asarray(center)


class TestEstimateNormals:
    def test_plane_normals_vertical(self):
        rng = np.random.default_rng(0)
        pts = np.zeros((500, 3))
        pts[:, :2] = rng.uniform(-5, 5, (500, 2))
        pts[:, 0] += 10.0  # keep away from the origin
        field = estimate_normals(pts, k=10)
        np.testing.assert_allclose(np.abs(field.normals[:, 2]), 1.0, atol=1e-9)
        np.testing.assert_allclose(field.normals[:, :2], 0.0, atol=1e-9)
        assert not field.degenerate.any()

    def test_sphere_normals_near_radial(self):
        center = np.array([5.0, 0.0, 0.0])
        pts = fibonacci_sphere(5000, center)
        field = estimate_normals(pts, k=10)
        radial = pts - center
        radial /= np.linalg.norm(radial, axis=1, keepdims=True)
        # estimation orients toward the sensor, so compare up to sign
        cos = np.abs(np.einsum("ij,ij->i", field.normals, radial))
        within_5_deg = cos >= np.cos(np.deg2rad(5.0))
        assert within_5_deg.mean() >= 0.99

    def test_collinear_points_flagged_degenerate(self):
        t = np.linspace(0, 1, 12)
        pts = np.stack([10 + t, np.zeros_like(t), np.zeros_like(t)], axis=1)
        field = estimate_normals(pts, k=3)
        assert field.degenerate.all()
        # degenerate normals face the sensor
        np.testing.assert_allclose(field.normals[0], [-1.0, 0.0, 0.0], atol=1e-9)

    def test_unit_norm_invariant(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(2, 20, (300, 3))
        field = estimate_normals(pts, k=8)
        np.testing.assert_allclose(np.linalg.norm(field.normals, axis=1), 1.0, atol=1e-6)

    def test_orientation_toward_sensor(self):
        pts = fibonacci_sphere(2000, center=[8.0, 0.0, 0.0])
        field = estimate_normals(pts, k=10)
        d = np.linalg.norm(pts, axis=1, keepdims=True)
        toward = -pts / d
        assert (np.einsum("ij,ij->i", field.normals, toward) >= -1e-9).all()

    def test_too_few_points_rejected(self):
        with pytest.raises(ValidationError):
            estimate_normals(np.zeros((5, 3)), k=10)


class TestLambertIntensity:
    def test_head_on_one_meter(self):
        assert lambert_intensity([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 0.6) == pytest.approx(0.6, abs=1e-15)

    def test_perpendicular_is_zero(self):
        assert lambert_intensity([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.6) == 0.0

    def test_inverse_square_falloff(self):
        assert lambert_intensity([2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 0.6) == pytest.approx(0.15, abs=1e-15)

    def test_back_facing_is_exactly_zero(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(1, 20, (100, 3))
        d = np.linalg.norm(pts, axis=1, keepdims=True)
        away = pts / d  # normals pointing away from the sensor
        out = lambert_intensity(pts, away, 0.5)
        assert (out == 0.0).all()

    def test_monotone_decrease_with_distance(self):
        dists = np.linspace(1, 30, 50)
        pts = np.stack([dists, np.zeros(50), np.zeros(50)], axis=1)
        normals = np.tile([-1.0, 0.0, 0.0], (50, 1))
        out = lambert_intensity(pts, normals, 0.6)
        assert (np.diff(out) < 0).all()

    def test_linear_in_reflectivity(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(1, 20, (50, 3))
        normals = -pts / np.linalg.norm(pts, axis=1, keepdims=True)
        np.testing.assert_allclose(lambert_intensity(pts, normals, 0.8),
                                   2.0 * lambert_intensity(pts, normals, 0.4), rtol=1e-12)

    def test_zero_distance_rejected(self):
        with pytest.raises(ValidationError, match="index 0"):
            lambert_intensity([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.5)

    def test_non_unit_normal_rejected(self):
        with pytest.raises(ValidationError, match="unit length"):
            lambert_intensity([1.0, 0.0, 0.0], [2.0, 0.0, 0.0], 0.5)


class TestNormalizeAndNoise:
    def test_constant_raw_maps_to_scene_mean(self):
        out = normalize_and_noise(np.full(100, 0.42), scene_mean=0.25, sigma=0.0, seed=0)
        np.testing.assert_allclose(out, 0.25, atol=1e-12)

    def test_mean_matching_without_noise(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.0, 0.2, 1000)
        out = normalize_and_noise(raw, scene_mean=0.3, sigma=0.0, seed=0)
        assert out.mean() == pytest.approx(0.3, abs=1e-9)

    def test_noise_standard_deviation(self):
        raw = np.full(10_000, 0.5)
        out = normalize_and_noise(raw, scene_mean=0.5, sigma=0.05, seed=5)
        assert out.std() == pytest.approx(0.05 * 0.5, rel=0.10)

    def test_clamped_to_unit_interval(self):
        rng = np.random.default_rng(6)
        raw = rng.uniform(0, 3.0, 5000)
        out = normalize_and_noise(raw, scene_mean=0.9, sigma=0.5, seed=7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_zero_raw_mean_is_identity_scale(self):
        out = normalize_and_noise(np.zeros(10), scene_mean=0.3, sigma=0.0, seed=0)
        np.testing.assert_array_equal(out, np.zeros(10))

    def test_max_policy(self):
        raw = np.array([0.1, 0.2, 0.4])
        out = normalize_and_noise(raw, scene_mean=0.2, sigma=0.0, seed=0, policy="max")
        assert out.max() == pytest.approx(0.2, abs=1e-12)

    def test_nonpositive_scene_mean_rejected(self):
        with pytest.raises(ValidationError):
            normalize_and_noise(np.ones(5), scene_mean=0.0, sigma=0.0, seed=0)

    def test_deterministic_given_seed(self):
        raw = np.linspace(0, 0.5, 100)
        a = normalize_and_noise(raw, 0.3, 0.05, seed=9)
        b = normalize_and_noise(raw, 0.3, 0.05, seed=9)
        np.testing.assert_array_equal(a, b)
