import numpy as np
import pytest

from r2vd import detectors
from r2vd.detectors import (
    LENIENT_DEFAULTS,
    STRICT_DEFAULTS,
    WeightCurveParams,
    coarse_weights,
    fuse_pra,
    lsun_scores,
    rx_scores,
    weight_curve,
)
from r2vd.linalg import empirical_rank

from test_linalg import gauss_jordan_inverse


def brute_force_rx(cube):
    """Explicit-inverse oracle replicating the documented statistics."""
    pixels = cube.reshape(-1, cube.shape[2]).astype(np.float64)
    n, c = pixels.shape
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / n
    trace = np.trace(cov)
    delta = 1e-6 * trace / c if trace > 0 else 1e-12
    cov = cov + delta * np.eye(c)
    inv = gauss_jordan_inverse(cov)
    scores = np.array([d @ inv @ d for d in centered])
    return scores.reshape(cube.shape[:2])


def brute_force_lsun(cube, bg_dim):
    """Full-eigendecomposition, explicit-projector oracle."""
    pixels = cube.reshape(-1, cube.shape[2]).astype(np.float64)
    corr = pixels.T @ pixels / pixels.shape[0]
    _, vectors = np.linalg.eigh(corr)
    basis = vectors[:, ::-1][:, :bg_dim]
    projector = np.eye(cube.shape[2]) - basis @ basis.T
    scores = np.array([np.linalg.norm(projector @ p) ** 2 for p in pixels])
    return scores.reshape(cube.shape[:2])


class TestRxScores:
    def test_pixel_at_mean_scores_zero(self):
        # five pixels whose fifth sits exactly at the sample mean
        cube = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0], [1.0, 1.0]])
        scores = rx_scores(cube.reshape(1, 5, 2))
        assert scores[0, 4] < 1e-20

    def test_identity_covariance_gives_squared_distance(self):
        # the four corners have exactly unit covariance (1/N normalization)
        cube = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).reshape(1, 4, 2)
        scores = rx_scores(cube)
        expected = np.array([2.0, 2.0, 2.0, 2.0])  # ||x - (1,1)||^2
        assert np.allclose(scores.ravel(), expected, rtol=1e-5)

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(21)
        cube = rng.random((8, 8, 4))
        scores = rx_scores(cube)
        oracle = brute_force_rx(cube)
        assert np.max(np.abs(scores - oracle)) / np.max(oracle) < 1e-8

    def test_spatial_permutation_equivariance(self):
        rng = np.random.default_rng(22)
        cube = rng.random((6, 6, 3))
        perm = rng.permutation(36)
        base = rx_scores(cube).ravel()
        permuted = rx_scores(cube.reshape(36, 3)[perm].reshape(6, 6, 3)).ravel()
        assert np.allclose(permuted, base[perm], rtol=1e-12)


class TestLsunScores:
    def test_in_span_pixel_scores_zero(self):
        rng = np.random.default_rng(31)
        basis = np.linalg.qr(rng.standard_normal((4, 2)))[0]
        coeffs = rng.standard_normal((16, 2))
        pixels = coeffs @ basis.T
        scores = lsun_scores(pixels.reshape(4, 4, 4), bg_dim=2)
        assert np.max(scores) < 1e-10

    def test_orthogonal_pixel_keeps_full_energy(self):
        basis = np.eye(4)[:, :2]
        # independent zero-mean coefficients keep both in-span directions
        # dominant over the single orthogonal outlier
        coeffs = np.random.default_rng(32).standard_normal((15, 2)) * np.array([3.0, 2.0])
        pixels = np.vstack([coeffs @ basis.T, 3.0 * np.eye(4)[3]])
        scores = lsun_scores(pixels.reshape(4, 4, 4), bg_dim=2).ravel()
        assert abs(scores[-1] - 9.0) < 1e-8

    def test_against_projector_oracle(self):
        rng = np.random.default_rng(33)
        cube = rng.random((8, 8, 5))
        scores = lsun_scores(cube, bg_dim=3)
        oracle = brute_force_lsun(cube, 3)
        assert np.max(np.abs(scores - oracle)) / np.max(oracle) < 1e-8

    def test_bg_dim_out_of_range(self):
        cube = np.random.default_rng(0).random((3, 3, 4))
        for bad in (0, 4, 7):
            with pytest.raises(ValueError):
                lsun_scores(cube, bg_dim=bad)


class TestFusePra:
    def test_identical_maps(self):
        rng = np.random.default_rng(41)
        s = rng.random((5, 5))
        assert np.allclose(fuse_pra(s, s), empirical_rank(s))

    def test_reversed_rankings_are_constant(self):
        rng = np.random.default_rng(42)
        s = rng.permutation(25).astype(float).reshape(5, 5)
        fused = fuse_pra(s, -s)
        n = 25
        assert np.allclose(fused, (n + 1) / (2 * n))

    def test_scale_invariance(self):
        rng = np.random.default_rng(43)
        a, b = rng.random((4, 4)), rng.random((4, 4))
        assert np.array_equal(fuse_pra(a, b), fuse_pra(1000.0 * a, b))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            fuse_pra(np.ones((2, 2)), np.ones((3, 3)))

    def test_output_range(self):
        rng = np.random.default_rng(44)
        fused = fuse_pra(rng.random((6, 6)), rng.random((6, 6)))
        assert fused.min() > 0.0 and fused.max() <= 1.0


class TestWeightCurve:
    def test_floor_branch_lenient(self):
        params = WeightCurveParams(0.7, 6.0, 0.01, detectors.LENIENT_TANH)
        assert weight_curve(1.2, params) == 0.01
        assert weight_curve(1.0, params) == 0.01  # boundary included

    def test_unit_branch(self):
        params = WeightCurveParams(0.7, 6.0, 0.01, detectors.LENIENT_TANH)
        assert weight_curve(0.3, params) == 1.0
        assert weight_curve(0.7, params) == 1.0  # boundary included

    def test_center_is_half_for_both_shapes(self):
        center = 0.5 * (0.7 + 1.0)
        lenient = WeightCurveParams(0.7, 6.0, 0.01, detectors.LENIENT_TANH)
        strict = WeightCurveParams(0.7, 30.0, 0.0, detectors.STRICT_SIGMOID)
        assert abs(weight_curve(center, lenient) - 0.5) < 1e-12
        assert abs(weight_curve(center, strict) - 0.5) < 1e-12

    def test_strict_floor_is_exactly_zero(self):
        assert weight_curve(1.3, STRICT_DEFAULTS) == 0.0
        assert weight_curve(1.0, STRICT_DEFAULTS) == 0.0

    @pytest.mark.parametrize("params", [LENIENT_DEFAULTS, STRICT_DEFAULTS])
    def test_non_increasing_in_transition(self, params):
        ts = np.linspace(params.theta_gap + 1e-9, 1.0 - 1e-9, 201)
        values = weight_curve(ts, params)
        assert np.all(np.diff(values) <= 0)
        assert np.all(values <= 1.0) and np.all(values >= params.floor)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            weight_curve(0.5, WeightCurveParams(theta_gap=1.5))
        with pytest.raises(ValueError):
            weight_curve(0.5, WeightCurveParams(shape="bogus"))


class TestCoarseWeights:
    def test_top_eta_fraction_gets_floor(self):
        rng = np.random.default_rng(51)
        scores = rng.permutation(1000).astype(float) / 1000.0 + 0.001
        weights = coarse_weights(scores.reshape(25, 40), eta=0.02)
        assert int((weights == LENIENT_DEFAULTS.floor).sum()) == 20
        # and those are exactly the top 20 scores
        top = np.argsort(scores)[-20:]
        assert np.all(weights.ravel()[top] == LENIENT_DEFAULTS.floor)

    def test_constant_map_all_floor(self):
        weights = coarse_weights(np.full((10, 10), 0.5), eta=0.02)
        assert np.all(weights == LENIENT_DEFAULTS.floor)

    def test_output_range(self):
        rng = np.random.default_rng(52)
        weights = coarse_weights(rng.random((20, 20)) + 0.01, eta=0.02)
        assert weights.min() >= LENIENT_DEFAULTS.floor and weights.max() <= 1.0

    def test_eta_range_validated(self):
        scores = np.random.default_rng(0).random((4, 4))
        for bad in (0.0, 0.5, -0.1, 0.9):
            with pytest.raises(ValueError):
                coarse_weights(scores, eta=bad)

    def test_zero_threshold_rejected(self):
        with pytest.raises(ValueError, match="threshold"):
            coarse_weights(np.zeros((5, 5)), eta=0.02)
