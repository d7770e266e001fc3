from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import get_window

from neurodyn import autodiff as ad
from neurodyn.denoise import (
    LAYERS, DaeConfig, DaeParams, StftConfig, dae_forward, dae_loss, dae_train, denoise_recording,
    init_dae, recon_metrics, recording_metrics, smooth_l1, spectral_loss, stft_magnitude,
)
from neurodyn.errors import ContractError, DimensionError, ParameterError, TrainingError
from neurodyn.gradcheck import grad_check_params
from neurodyn.sigproc import Recording

FS = 160.0
SMALL = DaeConfig(latent_channels=3, hidden_channels=4, stft=StftConfig(16, 8), epochs=10, batch_size=4)


def sines(n, T=64, seed=0, channels=1):
    rng = np.random.default_rng(seed)
    t = np.arange(T) / FS
    f = rng.uniform(4, 20, (n, channels, 1))
    ph = rng.uniform(0, 2 * np.pi, (n, channels, 1))
    return np.sin(2 * np.pi * f * t + ph)


class TestForward:
    @pytest.mark.parametrize("T", [64, 320, 1000])
    def test_shape_preserved(self, T):
        p = init_dae(3, SMALL, np.random.default_rng(0))
        assert dae_forward(p, np.zeros((3, T))).shape == (3, T)
        assert dae_forward(p, np.zeros((2, 3, T))).shape == (2, 3, T)

    def test_dead_network_outputs_bias(self):
        p = init_dae(2, SMALL, np.random.default_rng(0))
        arrays = {k: np.zeros_like(v) for k, v in p.arrays.items()}
        arrays["dec2_b"] = np.array([0.3, -0.7])
        out = dae_forward(DaeParams(arrays), np.random.default_rng(1).normal(size=(2, 50)))
        np.testing.assert_array_equal(out, np.broadcast_to([[0.3], [-0.7]], (2, 50)))

    def test_channel_mismatch(self):
        p = init_dae(2, SMALL)
        with pytest.raises(ContractError):
            dae_forward(p, np.zeros((3, 64)))

    def test_bad_layer_chain(self):
        arrays = dict(init_dae(2, SMALL).arrays)
        arrays["enc2_w"] = np.zeros((3, 5, 5))
        with pytest.raises(ContractError):
            DaeParams(arrays)

    def test_recording_wrapper(self):
        p = init_dae(1, SMALL)
        rec = Recording.from_array(np.zeros((1, 80)), FS, ["Fz"])
        out = denoise_recording(p, rec)
        assert out.channel_names == ("Fz",) and out.meta["denoised"]

    def test_deterministic(self):
        p = init_dae(1, SMALL, np.random.default_rng(4))
        x = sines(1)[0]
        assert np.array_equal(dae_forward(p, x), dae_forward(p, x))


class TestSmoothL1:
    def test_values(self):
        assert smooth_l1(np.zeros(3), np.zeros(3)).item() == 0.0
        assert smooth_l1(np.array([2.0]), np.array([0.0])).item() == 1.5
        assert smooth_l1(np.array([0.5]), np.array([0.0])).item() == 0.125

    def test_errors(self):
        with pytest.raises(ParameterError):
            smooth_l1(np.zeros(2), np.zeros(2), delta=0.0)
        with pytest.raises(DimensionError):
            smooth_l1(np.zeros(2), np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.1, 3))
    def test_continuous_at_branches(self, x, delta):
        v = smooth_l1(np.array([x]), np.array([0.0]), delta).item()
        ref = 0.5 * x * x / delta if abs(x) < delta else abs(x) - 0.5 * delta
        assert v == pytest.approx(ref, abs=1e-15)
        assert v >= 0


class TestSpectral:
    def test_zero_for_equal(self):
        x = sines(2, T=128)
        assert spectral_loss(x, x).item() == 0.0

    def test_zero_prediction_equals_mean_magnitude(self):
        x = sines(1, T=128)
        mag = stft_magnitude(x).data
        assert spectral_loss(np.zeros_like(x), x).item() == pytest.approx(mag.mean(), rel=1e-12)

    def test_matches_scipy_stft(self):
        x = np.random.default_rng(0).normal(size=200)
        mag = stft_magnitude(x).data
        w = get_window("hann", 64)
        frames = [np.abs(np.fft.rfft(w * x[s:s + 64])) for s in range(0, 200 - 64 + 1, 16)]
        np.testing.assert_allclose(mag, np.array(frames), atol=1e-10)

    def test_shift_by_hop(self):
        t = np.arange(400) / FS
        x = np.sin(2 * np.pi * 10.0 * t)
        a = stft_magnitude(x[:320]).data.mean()
        b = stft_magnitude(x[16:336]).data.mean()
        assert abs(a - b) / a < 0.05

    def test_short_signal(self):
        with pytest.raises(ParameterError):
            spectral_loss(np.zeros(32), np.zeros(32))

    def test_p_validation(self):
        with pytest.raises(ParameterError):
            StftConfig(p=3)
        assert spectral_loss(np.ones(64), np.zeros(64), StftConfig(p=2)).item() > 0


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_all_params(self, seed):
        rng = np.random.default_rng(seed)
        cfg = DaeConfig(latent_channels=2, hidden_channels=3, stft=StftConfig(16, 8))
        # random biases: zero biases leave dead units exactly on the ReLU kink
        p = init_dae(2, cfg, rng)
        p = DaeParams({k: rng.normal(0, 0.1, v.shape) if k.endswith("_b") else v for k, v in p.arrays.items()})
        clean = sines(2, T=32, seed=seed, channels=2)
        noisy = clean + rng.normal(0, 0.3, clean.shape)
        errs = grad_check_params(lambda t: dae_loss(t, ad.constant(noisy), clean, cfg), dict(p.arrays))
        assert max(errs.values()) < 1e-4

    def test_loss_non_negative_zero_at_match(self):
        p = init_dae(1, SMALL, np.random.default_rng(0))
        x = sines(2, T=64)
        recon = dae_forward(p, x)
        loss = dae_loss(p.arrays, ad.constant(x), recon, SMALL).item()
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert dae_loss(p.arrays, ad.constant(x), x, SMALL).item() > 0


class TestTraining:
    def test_noise_free_loss_decreases(self):
        cfg = replace(SMALL, noise_sigma=0.0, lr=3e-3, batch_size=16)
        _, rep = dae_train(sines(16), cfg)
        assert len(rep.losses) == 10
        assert all(b < a for a, b in zip(rep.losses, rep.losses[1:]))

    def test_zero_epochs(self):
        init = init_dae(1, SMALL, np.random.default_rng(0))
        cfg = replace(SMALL, epochs=0)
        p, rep = dae_train(sines(4), cfg, init=init)
        assert p == init and rep.losses == ()

    def test_deterministic(self):
        a, ra = dae_train(sines(8), SMALL)
        b, rb = dae_train(sines(8), SMALL)
        assert a == b and ra == rb

    def test_window_checks(self):
        with pytest.raises(ParameterError):
            dae_train(sines(2, T=8), SMALL)
        with pytest.raises(ParameterError):
            dae_train([], SMALL)

    def test_divergence(self):
        cfg = replace(SMALL, lr=1e300, epochs=3)
        with np.errstate(all="ignore"), pytest.raises(TrainingError):
            dae_train(1e150 * sines(4), cfg)

    def test_config_roundtrip(self):
        assert DaeConfig.from_dict(SMALL.to_dict()) == SMALL


class TestMetrics:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=100)
        m = recon_metrics(x, x)
        assert (m.hellinger, m.rmse, m.wasserstein1, m.mae) == (0, 0, 0, 0)

    def test_point_masses(self):
        m = recon_metrics(np.zeros(10), np.ones(10))
        assert m.wasserstein1 == 1 and m.mae == 1 and m.rmse == 1
        assert m.hellinger == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            recon_metrics(np.zeros(3), np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_symmetric_and_permutation(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=50), rng.normal(size=50)
        a, b = recon_metrics(x, y).to_dict(), recon_metrics(y, x).to_dict()
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-15)
        assert recon_metrics(x, rng.permutation(x)).wasserstein1 == 0.0

    def test_per_channel(self):
        raw = Recording.from_array(np.zeros((2, 10)), FS, ["C3", "C4"])
        out = recording_metrics(raw, raw.with_data(np.ones((2, 10))))
        assert list(out) == ["C3", "C4"] and out["C4"].mae == 1.0


def test_layer_names():
    assert set(init_dae(1, SMALL).arrays) == {f"{n}_{s}" for n in LAYERS for s in "wb"}
