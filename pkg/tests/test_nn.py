"""Autograd, layer and network tests.

Gradients are checked against central differences through a random
projection of the output. Smooth non-linear ops get a looser bound than
the purely linear ones.
"""

import numpy as np
import pytest
from scipy import sparse

from bevfuse.errors import NNError
from bevfuse.models.camera import DepthBand
from bevfuse.models.network import Activation, ConvSpec, FusionStrategy, Mode, NetworkConfig, PriorMode
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.bev import PolarHead, polar_to_ortho, polar_to_ortho_matrix, polar_to_ortho_reference
from bevfuse.services.nn.camfuse import CaMFuse, ConcatFusion
from bevfuse.services.nn.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from bevfuse.services.nn.decoder import Decoder
from bevfuse.services.nn.gradcheck import grad_check
from bevfuse.services.nn.layers import AdaptiveDilatedConv2d, BatchNorm2d, Conv2d
from bevfuse.services.nn.losses import (
    binary_cross_entropy,
    categorical_cross_entropy,
    dice_loss,
    loss_fn,
    mean_squared_error,
)
from bevfuse.services.nn.model import BevFuseNet
from bevfuse.services.nn.optim import Adam, AdamState, adam_step
from bevfuse.services.nn.tensor import Tensor

LINEAR_TOL = 1e-6
SMOOTH_TOL = 1e-4


# ── Helpers ──────────────────────────────────────────────────────────────

def _one_hot_target(rng, shape):
    n, c, h, w = shape
    labels = rng.integers(0, c, (n, h, w))
    return np.moveaxis(np.eye(c)[labels], -1, 1)


def _ops(t: Tensor):
    return {node.op for node in t.graph()}


# ── Gradients ────────────────────────────────────────────────────────────

class TestGradients:
    def test_conv2d_dilated(self, rng):
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        err = grad_check(lambda x, w, b: F.conv2d(x, w, b, padding=2, dilation=2), [x, w, b])
        assert err <= LINEAR_TOL

    def test_conv2d_strided(self, rng):
        x = rng.normal(size=(2, 2, 7, 7))
        w = rng.normal(size=(2, 2, 3, 3))
        assert grad_check(lambda x, w: F.conv2d(x, w, stride=2, padding=1), [x, w]) <= LINEAR_TOL

    def test_conv_transpose2d(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(2, 3, 4, 4))
        b = rng.normal(size=3)
        err = grad_check(lambda x, w, b: F.conv_transpose2d(x, w, b, stride=2, padding=1), [x, w, b])
        assert err <= LINEAR_TOL

    def test_batch_norm_training(self, rng):
        x = rng.normal(size=(2, 2, 3, 3))
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.normal(size=2)

        def fn(x, g, b):
            return F.batch_norm2d(x, g, b, np.zeros(2), np.ones(2), training=True)

        assert grad_check(fn, [x, gamma, beta]) <= SMOOTH_TOL

    def test_adaptive_dilated_conv(self, rng):
        dilations = [1, 2, 3, 4]
        x = rng.normal(size=(1, 2, 8, 8))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        pw = rng.normal(size=(4, 2, 1, 1))
        pb = rng.normal(size=4)
        noise = -np.log(-np.log(rng.uniform(1e-10, 1.0, (1, 4, 8, 8))))

        def fn(x, w, pw, pb, b):
            return F.adaptive_dilated_conv(x, w, b, dilations, pw, pb, tau=0.7, noise=noise)[0]

        assert grad_check(fn, [x, w, pw, pb, b]) <= SMOOTH_TOL

    def test_polar_head(self, rng):
        head = PolarHead(rng, channels=2, rows=3, bins=4)
        x = rng.normal(size=(1, 2, 3, 5))

        def fn(x, w, b):
            head.weight, head.bias = w, b
            return head(x)

        assert grad_check(fn, [x, head.weight.data.copy(), head.bias.data.copy()]) <= LINEAR_TOL

    def test_decoder_tanh(self, rng):
        decoder = Decoder(rng, 16, 2, activation=Activation.TANH)
        x = rng.normal(size=(1, 16, 4, 4))
        assert grad_check(lambda x: decoder(x), [x]) <= SMOOTH_TOL

    def test_sparse_linear(self, rng):
        matrix = sparse.random(5, 7, density=0.4, random_state=3, format="csr")
        x = rng.normal(size=(3, 7))
        assert grad_check(lambda x: F.sparse_linear(x, matrix), [x]) <= 1e-8

    @pytest.mark.parametrize("loss", [categorical_cross_entropy, binary_cross_entropy, dice_loss])
    def test_classification_losses(self, loss, rng):
        z = rng.normal(size=(2, 2, 3, 3))
        target = _one_hot_target(rng, z.shape)
        assert grad_check(lambda z: loss(z, target), [z]) <= 1e-5

    def test_mse_analytic(self, rng):
        p = rng.normal(size=(2, 1, 4, 4))
        t = rng.normal(size=(2, 1, 4, 4))
        pred = Tensor.param(p)
        mean_squared_error(pred, t).backward()
        np.testing.assert_allclose(pred.grad, 2.0 * (p - t) / p.size, atol=1e-12)

    def test_loss_lookup(self):
        assert loss_fn("dice") is dice_loss
        with pytest.raises(NNError):
            loss_fn("hinge")

    def test_dice_needs_two_channels(self, rng):
        with pytest.raises(NNError):
            dice_loss(Tensor(rng.normal(size=(1, 1, 2, 2))), np.ones((1, 1, 2, 2)))


# ── Content-aware dilation ───────────────────────────────────────────────

class TestContentAwareDilation:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_single_option_equals_static_conv(self, d, rng):
        x = Tensor(rng.normal(size=(2, 3, 9, 9)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = Tensor(rng.normal(size=4))
        pw = Tensor(rng.normal(size=(1, 3, 1, 1)))
        out, field = F.adaptive_dilated_conv(x, w, b, [d], pw, rng=rng)
        static = F.conv2d(x, w, b, padding=d, dilation=d)
        np.testing.assert_array_equal(out.data, static.data)
        assert np.all(field.probs.data == 1.0)

    def test_field_is_a_distribution(self, rng):
        layer = AdaptiveDilatedConv2d(rng, 3, 3, [1, 2, 3, 4])
        _, field = layer(Tensor(rng.normal(size=(2, 3, 6, 6))), rng=rng)
        assert field.as_hwd(1).shape == (6, 6, 4)
        np.testing.assert_allclose(field.probs.data.sum(axis=1), 1.0, atol=1e-9)

    def test_high_temperature_is_uniform(self, rng):
        layer = AdaptiveDilatedConv2d(rng, 3, 3, [1, 2, 3, 4], tau=1e6).eval()
        _, field = layer(Tensor(rng.normal(size=(1, 3, 5, 5))))
        assert np.max(np.abs(field.probs.data - 0.25)) < 1e-4

    def test_hard_selection_is_one_hot(self, rng):
        layer = AdaptiveDilatedConv2d(rng, 3, 3, [1, 2, 4]).eval()
        layer.hard = True
        _, field = layer(Tensor(rng.normal(size=(1, 3, 5, 5))))
        assert set(np.unique(field.probs.data)) <= {0.0, 1.0}
        np.testing.assert_array_equal(field.probs.data.sum(axis=1), 1.0)
        assert set(np.unique(field.dominant())) <= {1, 2, 4}

    def test_prior_size_must_match_options(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 5, 5)))
        with pytest.raises(NNError):
            F.adaptive_dilated_conv(x, Tensor(np.ones((2, 2, 3, 3))), None, [1, 2], Tensor(np.ones((3, 2, 1, 1))))

    def test_even_kernel_span_has_no_same_padding(self):
        assert F.dilation_padding(3, 2) == 2
        with pytest.raises(NNError):
            F.dilation_padding(2, 1)

    def test_identity_projection_passes_camera_features(self, rng):
        fusion = ConcatFusion(rng, 4, 3, 4)
        fusion.identity_projection()
        cam = rng.normal(size=(2, 4, 5, 5))
        out = fusion(Tensor(cam), Tensor(np.zeros((2, 3, 5, 5))))
        np.testing.assert_allclose(out.data, cam, atol=1e-12)

    def test_misaligned_inputs(self, rng):
        fusion = ConcatFusion(rng, 4, 3, 4)
        with pytest.raises(NNError):
            fusion(Tensor(np.zeros((1, 4, 5, 5))), Tensor(np.zeros((1, 3, 4, 5))))

    def test_recurrent_prior_chains_hidden_state(self, rng):
        config = NetworkConfig(prior_mode=PriorMode.RECURRENT, adaptive_layers=2)
        fusion = CaMFuse(rng, config)
        assert all(layer.hidden_weight is not None for layer in fusion.adaptive)
        refined, fields = fusion.refine(Tensor(rng.normal(size=(1, config.uls_channels, 6, 6))), rng)
        assert refined.shape == (1, config.uls_channels, 6, 6)
        assert len(fields) == 2

    def test_markov_prior_has_no_hidden_weight(self, rng):
        fusion = CaMFuse(rng, NetworkConfig())
        assert fusion.adaptive[0].hidden_weight is None
        fusion.set_tau(0.5)
        assert fusion.adaptive[0].tau == 0.5


# ── Layers and decoder ───────────────────────────────────────────────────

class TestLayers:
    def test_decoder_doubles_resolution(self, rng):
        out = Decoder(rng, 16, 2)(Tensor(rng.normal(size=(2, 16, 16, 16))))
        assert out.shape == (2, 2, 32, 32)

    def test_decoder_rejects_small_maps(self, rng):
        with pytest.raises(NNError):
            Decoder(rng, 16, 2)(Tensor(np.zeros((1, 16, 3, 3))))

    def test_decoder_rejects_wrong_channels(self, rng):
        with pytest.raises(NNError):
            Decoder(rng, 16, 2)(Tensor(np.zeros((1, 8, 8, 8))))

    def test_conv_spec_output_size(self):
        spec = ConvSpec(in_channels=3, out_channels=4, stride=2, padding=2, dilation=2)
        assert spec.output_size(9, 12) == (5, 6)
        assert not spec.is_adaptive

    def test_conv_spec_rejects_repeated_dilations(self):
        with pytest.raises(ValueError):
            ConvSpec(in_channels=1, out_channels=1, dilation_options=[1, 2, 2])

    def test_conv_spec_accepts_a_single_dilation(self):
        spec = ConvSpec(in_channels=1, out_channels=1, dilation_options=[2])
        assert spec.is_adaptive
        with pytest.raises(ValueError):
            ConvSpec(in_channels=1, out_channels=1, dilation_options=[])
        with pytest.raises(ValueError):
            ConvSpec(in_channels=1, out_channels=1, dilation_options=[0, 1])

    def test_layers_from_spec(self, rng):
        spec = ConvSpec(in_channels=3, out_channels=4, stride=2, padding=2, dilation=2)
        conv = Conv2d.from_spec(rng, spec)
        assert conv(Tensor(rng.normal(size=(1, 3, 9, 12)))).shape == (1, 4) + spec.output_size(9, 12)

        adaptive = AdaptiveDilatedConv2d.from_spec(rng, NetworkConfig().adaptive_spec)
        assert adaptive.dilations == [1, 2, 3, 4]
        with pytest.raises(NNError):
            Conv2d.from_spec(rng, NetworkConfig().adaptive_spec)
        with pytest.raises(NNError):
            AdaptiveDilatedConv2d.from_spec(rng, spec)
        with pytest.raises(NNError):
            Conv2d.from_spec(rng, ConvSpec(in_channels=1, out_channels=1, kernel=(3, 1)))

    def test_batch_norm_running_stats(self, rng):
        bn = BatchNorm2d(2)
        x = rng.normal(1.0, 2.0, size=(4, 2, 3, 3))
        bn(Tensor(x))
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        count = x.size // 2
        expected = 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1)
        np.testing.assert_allclose(bn.running_var, expected, atol=1e-12)

    def test_batch_norm_eval_uses_running_stats(self, rng):
        bn = BatchNorm2d(2).eval()
        x = rng.normal(size=(1, 2, 3, 3))
        np.testing.assert_allclose(bn(Tensor(x)).data, x / np.sqrt(1.0 + 1e-5), atol=1e-12)

    def test_state_dict_round_trip(self, rng):
        a = Decoder(np.random.default_rng(1), 16, 2)
        b = Decoder(np.random.default_rng(2), 16, 2)
        b.load_state_dict(a.state_dict())
        x = Tensor(rng.normal(size=(1, 16, 4, 4)))
        np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_state_dict_mismatch(self, rng):
        decoder = Decoder(rng, 16, 2)
        state = decoder.state_dict()
        name = next(iter(state))
        with pytest.raises(NNError):
            decoder.load_state_dict({k: v for k, v in state.items() if k != name})
        state[name] = np.zeros((1,))
        with pytest.raises(NNError):
            decoder.load_state_dict(state)


# ── Optimiser and checkpoints ────────────────────────────────────────────

class TestOptimisation:
    def test_adam_minimises_quadratic(self):
        target = np.array([1.0, 0.5, -2.0])
        p = Tensor.param(np.array([3.0, -2.0, 0.0]))
        opt = Adam([p], lr=1e-2)
        for _ in range(1000):
            opt.zero_grad()
            diff = p - Tensor(target)
            (diff * diff).sum().backward()
            opt.step()
        np.testing.assert_allclose(p.data, target, atol=5e-2)

    def test_first_step_moves_by_lr(self):
        params = [np.array([1.0, -1.0, 2.0])]
        grads = [np.array([0.3, -5.0, 1e-3])]
        state = AdamState.zeros_like(params)
        new, new_state = adam_step(params, grads, state, lr=1e-3)
        np.testing.assert_allclose(new[0] - params[0], -1e-3 * np.sign(grads[0]), rtol=1e-4)
        assert new_state.step == 1
        # inputs untouched
        np.testing.assert_array_equal(params[0], [1.0, -1.0, 2.0])
        assert state.step == 0
        assert not np.any(state.m[0])

    def test_shape_mismatch(self):
        with pytest.raises(NNError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), lr=1e-3)

    def test_checkpoint_round_trip(self, tmp_path, rng):
        state = Decoder(rng, 16, 2).state_dict()
        path = save_checkpoint(tmp_path / "net.bvf", state)
        assert path.read_bytes()[:4] == MAGIC
        loaded = load_checkpoint(path)
        assert sorted(loaded) == sorted(state)
        for name in state:
            np.testing.assert_array_equal(loaded[name], state[name])

    def test_scalar_blob(self, tmp_path):
        loaded = load_checkpoint(save_checkpoint(tmp_path / "s.bvf", {"tau": np.array(0.5)}))
        assert loaded["tau"].shape == ()
        assert float(loaded["tau"]) == 0.5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bvf"
        path.write_bytes(b"XXXX" + b"\0" * 8)
        with pytest.raises(NNError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, rng):
        path = save_checkpoint(tmp_path / "t.bvf", {"w": rng.normal(size=(3, 3))})
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(NNError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, rng):
        path = save_checkpoint(tmp_path / "t.bvf", {"w": rng.normal(size=(2,))})
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(NNError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(NNError):
            load_checkpoint(tmp_path / "absent.bvf")


# ── BEV projection ───────────────────────────────────────────────────────

class TestPolarToOrtho:
    @pytest.fixture
    def setup(self, intrinsics, extrinsics):
        band = DepthBand(z_min=0.8, z_max=3.2)
        spec = NetworkConfig().feature_grid
        matrix = polar_to_ortho_matrix(intrinsics, extrinsics, band, 6, 16, 4.0, spec)
        return band, spec, matrix

    def test_sparse_matches_reference(self, setup, intrinsics, extrinsics, rng):
        band, spec, matrix = setup
        polar = rng.normal(size=(2, 6, 16))
        fast = polar_to_ortho(Tensor(polar[None]), matrix, spec).data[0]
        slow = polar_to_ortho_reference(polar, intrinsics, extrinsics, band, 4.0, spec)
        assert np.max(np.abs(fast - slow)) <= 1e-12

    def test_rows_are_partitions_of_unity(self, setup):
        _, _, matrix = setup
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        assert np.all((np.abs(sums) < 1e-12) | (np.abs(sums - 1.0) < 1e-12))
        assert np.count_nonzero(sums) > 0

    def test_single_hot_bin(self, setup, intrinsics, extrinsics):
        band, spec, matrix = setup
        polar = np.zeros((1, 6, 16))
        polar[0, 2, 8] = 1.0
        fast = polar_to_ortho(Tensor(polar[None]), matrix, spec).data[0]
        slow = polar_to_ortho_reference(polar, intrinsics, extrinsics, band, 4.0, spec)
        assert np.any(fast > 0)
        np.testing.assert_allclose(fast, slow, atol=1e-12)


# ── Full network ─────────────────────────────────────────────────────────

class TestBevFuseNet:
    def test_visible_graph_has_no_adaptive_conv(self, calibration, rng):
        net = BevFuseNet(NetworkConfig(mode=Mode.VISIBLE), calibration)
        out = net(image=rng.normal(size=(2, 1, 64, 64)))
        assert out.shape == (2, 2, 32, 32)
        assert "adaptive_dilated_conv" not in _ops(out)
        assert net.dilation_fields == []

    def test_multimodal_camfuse(self, calibration, rng):
        net = BevFuseNet(NetworkConfig(), calibration)
        out = net(image=rng.normal(size=(2, 1, 64, 64)), uls=rng.uniform(size=(2, 1, 32, 32)), rng=rng)
        assert out.shape == (2, 2, 32, 32)
        assert "adaptive_dilated_conv" in _ops(out)
        assert len(net.dilation_fields) == 1

    def test_multimodal_concat(self, calibration, rng):
        net = BevFuseNet(NetworkConfig(fusion=FusionStrategy.CONCAT), calibration)
        out = net(image=rng.normal(size=(1, 1, 64, 64)), uls=rng.uniform(size=(1, 1, 32, 32)))
        assert "adaptive_dilated_conv" not in _ops(out)

    def test_uls_only_heatmap(self, rng):
        out = BevFuseNet(NetworkConfig(mode=Mode.ULS))(uls=rng.uniform(size=(3, 1, 32, 32)))
        assert out.shape == (3, 1, 32, 32)

    def test_camera_mode_needs_calibration(self):
        with pytest.raises(NNError):
            BevFuseNet(NetworkConfig(mode=Mode.VISIBLE))

    def test_missing_input(self, calibration):
        with pytest.raises(NNError):
            BevFuseNet(NetworkConfig(), calibration)(image=np.zeros((1, 1, 64, 64)))

    def test_same_seed_same_weights(self, calibration):
        a = BevFuseNet(NetworkConfig(), calibration, seed=3).state_dict()
        b = BevFuseNet(NetworkConfig(), calibration, seed=3).state_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_backward_reaches_every_parameter(self, calibration, rng):
        net = BevFuseNet(NetworkConfig(), calibration)
        out = net(image=rng.normal(size=(2, 1, 64, 64)), uls=rng.uniform(size=(2, 1, 32, 32)), rng=rng)
        categorical_cross_entropy(out, _one_hot_target(rng, out.shape)).backward()
        missing = [name for name, p in net.named_parameters() if p.grad is None]
        assert missing == []
