import numpy as np
import pytest
import torch

from r2vd.autoencoder import (
    GmpSchedule,
    OcaNet,
    OmniContextBlock,
    SpectralResidualBlock,
    train_gmp,
    update_weights,
    weighted_recon_loss,
)
from r2vd.detectors import STRICT_DEFAULTS, coarse_weights, fuse_pra, lsun_scores, rx_scores
from r2vd.hsio import normalize_cube
from r2vd.synthetic import SynthConfig, generate_scene

torch.set_num_threads(1)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestOmniContextBlock:
    def test_zero_pointwise_is_exact_identity(self):
        block = OmniContextBlock(8, gen(0))
        with torch.no_grad():
            block.w_fuse.zero_()
            block.b_fuse.zero_()
        x = torch.randn(1, 8, 6, 6, generator=gen(1))
        out = block(x)
        assert torch.equal(out, x)

    @pytest.mark.parametrize("h,w", [(8, 8), (9, 13)])
    def test_shape_preserved(self, h, w):
        block = OmniContextBlock(8, gen(2))
        x = torch.randn(1, 8, h, w, generator=gen(3))
        assert block(x).shape == (1, 8, h, w)

    def test_channel_mismatch_rejected(self):
        block = OmniContextBlock(8, gen(4))
        with pytest.raises(ValueError):
            block(torch.randn(1, 4, 6, 6))


class TestSpectralResidualBlock:
    def test_zero_second_conv_is_identity(self):
        block = SpectralResidualBlock(8, gen(5))
        with torch.no_grad():
            block.w2.zero_()
            block.b2.zero_()
        x = torch.randn(1, 8, 5, 7, generator=gen(6))
        assert torch.equal(block(x), x)

    def test_shape_preserved(self):
        block = SpectralResidualBlock(8, gen(7))
        x = torch.randn(1, 8, 9, 13, generator=gen(8))
        assert block(x).shape == x.shape


class TestWeightedReconLoss:
    def test_zero_weights_zero_loss(self):
        x = torch.randn(4, 4, 3, generator=gen(9))
        xhat = torch.randn(4, 4, 3, generator=gen(10))
        assert float(weighted_recon_loss(x, xhat, torch.zeros(4, 4))) == 0.0

    def test_perfect_reconstruction_zero_loss(self):
        x = torch.randn(4, 4, 3, generator=gen(11))
        assert float(weighted_recon_loss(x, x.clone(), torch.ones(4, 4))) == 0.0

    def test_single_pixel_squared_norm(self):
        x = torch.tensor([[[1.0, 0.0]]])
        xhat = torch.tensor([[[0.0, 0.0]]])
        assert float(weighted_recon_loss(x, xhat, torch.ones(1, 1))) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            weighted_recon_loss(torch.ones(2, 2, 3), torch.ones(2, 2, 4), torch.ones(2, 2))
        with pytest.raises(ValueError):
            weighted_recon_loss(torch.ones(2, 2, 3), torch.ones(2, 2, 3), torch.ones(3, 3))


class TestUpdateWeights:
    def test_branch_values(self):
        # errors 1..100: the 0.98 quantile is 98.02, so the top values are
        # above it and must truncate to exactly zero
        errors = np.arange(1.0, 101.0).reshape(10, 10)
        weights = update_weights(errors, eta=0.02, params=STRICT_DEFAULTS)
        tau = np.quantile(errors, 0.98)
        t = errors / tau
        assert np.all(weights[t >= 1.0] == 0.0)
        assert np.all(weights[t <= 0.7] == 1.0)
        inside = (t > 0.7) & (t < 1.0)
        assert np.all((weights[inside] > 0.0) & (weights[inside] < 1.0))

    def test_center_value(self):
        # craft errors whose quantile makes one entry sit exactly mid-curve
        errors = np.array([0.85, *np.linspace(0.0, 1.0, 99)])
        tau = np.quantile(errors, 0.98)
        errors[0] = 0.85 * tau
        weights = update_weights(errors.reshape(10, 10), eta=0.02, params=STRICT_DEFAULTS)
        assert abs(weights.ravel()[0] - 0.5) < 1e-9

    def test_zero_quantile_rejected(self):
        with pytest.raises(ValueError):
            update_weights(np.zeros((5, 5)), eta=0.02)

    def test_negative_errors_rejected(self):
        with pytest.raises(ValueError):
            update_weights(np.array([[-1.0, 2.0]]), eta=0.02)


def train_tiny(total=14, warm=4, update=4, seed=3, h=8, w=8, c=4):
    rng = np.random.default_rng(seed)
    x = rng.random((h, w, c)).astype(np.float32)
    w_coa = rng.random((h, w))
    sched = GmpSchedule(total_epochs=total, warm_epochs=warm, update_every=update)
    return x, w_coa, train_gmp(x, w_coa, sched, seed=seed)


class TestTrainGmp:
    def test_constant_cube_converges(self):
        # all-ones weights throughout (update interval beyond the run), so
        # the trace loss is literally the mean per-pixel error
        x = np.full((8, 8, 4), 0.5, dtype=np.float32)
        sched = GmpSchedule(total_epochs=200, warm_epochs=10, update_every=10**6)
        result = train_gmp(x, np.ones((8, 8)), sched, seed=0)
        assert result.trace[-1][1] < 1e-4
        assert float(np.abs(result.residual).mean()) < 0.01

    def test_constant_cube_loss_non_increasing_over_windows(self):
        x = np.full((8, 8, 4), 0.5, dtype=np.float32)
        sched = GmpSchedule(total_epochs=60, warm_epochs=5, update_every=10)
        result = train_gmp(x, np.ones((8, 8)), sched, seed=1)
        losses = [row[1] for row in result.trace]
        for i in range(len(losses) - 10):
            assert losses[i + 10] <= losses[i]

    def test_warmup_weights_all_ones(self):
        _, _, result = train_tiny()
        for epoch, _, regime, weight_mean in result.trace:
            if epoch <= 4:
                assert regime == "warmup"
                assert weight_mean == 1.0

    def test_regime_schedule(self):
        _, _, result = train_tiny(total=14, warm=4, update=4)
        regimes = {epoch: regime for epoch, _, regime, _ in result.trace}
        assert regimes[4] == "warmup"
        assert regimes[5] == "coarse"
        assert regimes[8] == "coarse"
        assert regimes[9] == "self"
        assert regimes[13] == "self"

    def test_coarse_weights_installed_after_warmup(self):
        x, w_coa, result = train_tiny(total=6, warm=4, update=10)
        # last computed weights are the coarse map (no self update yet)
        assert np.allclose(result.weight_map, w_coa)

    def test_deterministic_in_seed(self):
        _, _, a = train_tiny(seed=7)
        _, _, b = train_tiny(seed=7)
        assert np.array_equal(a.weight_map, b.weight_map)
        assert np.array_equal(a.residual, b.residual)
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            GmpSchedule(total_epochs=5, warm_epochs=10).validate()
        with pytest.raises(ValueError):
            GmpSchedule(update_every=0).validate()

    def test_residual_definition(self):
        x, _, result = train_tiny()
        model = result.model
        model.eval()
        with torch.no_grad():
            expected = torch.from_numpy(x) - model(torch.from_numpy(x))
        assert np.allclose(result.residual, expected.numpy(), atol=1e-7)


class TestGradientIsolation:
    def test_zero_weight_pixel_isolated_bitwise(self):
        # one shared forward; perturbing the loss target at a zero-weight
        # pixel must leave every parameter gradient bit-identical
        model = OcaNet(3, channels=8, body_pairs=1, generator=gen(20))
        x = torch.randn(6, 6, 3, generator=gen(21))
        weights = torch.ones(6, 6)
        weights[2, 3] = 0.0

        def param_grads(target):
            model.zero_grad()
            xhat = model(x)
            loss = weighted_recon_loss(target, xhat, weights)
            grads = torch.autograd.grad(loss, list(model.parameters()))
            return [g.clone() for g in grads]

        base = param_grads(x)
        perturbed_target = x.clone()
        perturbed_target[2, 3] += 5.0
        after = param_grads(perturbed_target)
        for a, b in zip(base, after):
            assert torch.equal(a, b)

        # control: perturbing a weighted pixel must change gradients
        control_target = x.clone()
        control_target[1, 1] += 5.0
        changed = param_grads(control_target)
        assert any(not torch.equal(a, c) for a, c in zip(base, changed))


@pytest.mark.slow
def test_synthetic_scene_weights_separate_anomalies():
    # detector prior eta deliberately overestimates the true ratio, the
    # regime where the self-updates can cover every planted pixel
    scene = generate_scene(
        SynthConfig(height=32, width=32, bands=16, anomaly_ratio=0.01, seed=11)
    )
    x = normalize_cube(scene.cube)
    w_coa = coarse_weights(fuse_pra(rx_scores(x), lsun_scores(x, 3)), 0.02)
    result = train_gmp(x, w_coa, GmpSchedule(), seed=11)
    flat = scene.mask.ravel().astype(bool)
    w = result.weight_map.ravel()
    assert np.median(w[flat]) < np.median(w[~flat])
