import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bandplc.frontend import StftConfig, stft
from bandplc.losses import (LogFilterbankProvider, LossWeights, combine, f0_loss,
                            linguistic_loss, lsgan_d_loss, lsgan_g_loss,
                            mae_time_loss, metricgan_d_loss, metricgan_g_loss,
                            plcpa_loss)


def plcpa_loop(est: np.ndarray, ref: np.ndarray, p: float) -> float:
    """Naive per-bin reference implementation."""
    total = 0.0
    t_frames, bins = est.shape
    for t in range(t_frames):
        for f in range(bins):
            s, s_hat = ref[t, f], est[t, f]
            amp = (abs(s) ** p - abs(s_hat) ** p) ** 2
            cs = abs(s) ** p * np.exp(1j * np.angle(s)) if abs(s) > 0 else 0.0
            cs_hat = abs(s_hat) ** p * np.exp(1j * np.angle(s_hat)) if abs(s_hat) > 0 else 0.0
            total += amp + abs(cs - cs_hat) ** 2
    return total / (t_frames * bins)


class TestPlcpa:
    def test_perfect_estimate_is_zero(self):
        rng = np.random.default_rng(0)
        spec = rng.normal(size=(4, 9)) + 1j * rng.normal(size=(4, 9))
        assert float(plcpa_loss(spec, spec)) == 0.0

    def test_single_bin_hand_value(self):
        est = np.array([[0.0 + 0.0j]])
        ref = np.array([[1.0 + 0.0j]])
        # amplitude term 1 plus phase-aware term 1
        assert float(plcpa_loss(est, ref, 0.3)) == pytest.approx(2.0, abs=1e-9)

    def test_matches_loop_oracle_full_width(self):
        rng = np.random.default_rng(1)
        est = rng.normal(size=(8, 481)) + 1j * rng.normal(size=(8, 481))
        ref = rng.normal(size=(8, 481)) + 1j * rng.normal(size=(8, 481))
        assert float(plcpa_loss(est, ref, 0.3)) == pytest.approx(
            plcpa_loop(est, ref, 0.3), abs=1e-6)

    def test_matches_loop_oracle_100_trials(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            est = rng.normal(size=(3, 11)) + 1j * rng.normal(size=(3, 11))
            ref = rng.normal(size=(3, 11)) + 1j * rng.normal(size=(3, 11))
            p = float(rng.uniform(0.2, 1.0))
            assert float(plcpa_loss(est, ref, p)) == pytest.approx(
                plcpa_loop(est, ref, p), abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            plcpa_loss(np.zeros((2, 3), complex), np.zeros((2, 4), complex))


class TestMaeTime:
    def test_identical_zero(self):
        x = torch.randn(100, dtype=torch.float64)
        assert float(mae_time_loss(x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.zeros(50, dtype=torch.float64)
        assert float(mae_time_loss(x + 0.1, x)) == pytest.approx(0.1, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b = rng.normal(size=64), rng.normal(size=64)
            expected = sum(abs(x - y) for x, y in zip(a, b)) / 64
            assert float(mae_time_loss(a, b)) == pytest.approx(expected, abs=1e-7)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mae_time_loss(torch.zeros(3), torch.zeros(4))


class TestF0Loss:
    def test_perfect(self):
        t = torch.rand(20)
        assert float(f0_loss(t, t)) == 0.0

    def test_saturated_error(self):
        assert float(f0_loss(torch.ones(10), torch.zeros(10))) == pytest.approx(1.0)

    def test_matches_loop(self):
        rng = np.random.default_rng(4)
        a, b = rng.uniform(0, 1, 30), rng.uniform(0, 1, 30)
        expected = np.mean(np.abs(a - b))
        assert float(f0_loss(a, b)) == pytest.approx(expected, abs=1e-7)


class TestLinguistic:
    def test_identical_zero(self):
        provider = LogFilterbankProvider()
        rng = np.random.default_rng(5)
        x = torch.from_numpy(rng.uniform(-0.5, 0.5, 48000))
        assert float(linguistic_loss(x, x, provider)) == 0.0

    def test_attenuation_closed_form(self):
        # 6 dB attenuation shifts every log filterbank energy by ln(10^-0.6)
        provider = LogFilterbankProvider()
        rng = np.random.default_rng(6)
        clean = torch.from_numpy(rng.uniform(-0.9, 0.9, 48000))
        attenuated = clean * 10.0 ** (-6.0 / 20.0)
        expected = 0.6 * math.log(10.0)
        assert float(linguistic_loss(attenuated, clean, provider)) == pytest.approx(
            expected, abs=1e-6)

    def test_matches_loop_oracle(self):
        config = StftConfig()
        provider = LogFilterbankProvider(num_bands=64, config=config)
        rng = np.random.default_rng(7)
        est = rng.uniform(-0.8, 0.8, 9600)
        ref = rng.uniform(-0.8, 0.8, 9600)
        weights = provider._weights.numpy()

        def feats(x):
            spec = stft(x, config).numpy()
            power = np.abs(spec[:, :161]) ** 2
            out = np.empty((power.shape[0], 64))
            for t in range(power.shape[0]):
                for b in range(64):
                    out[t, b] = math.log(max(np.dot(weights[b], power[t]), 1e-10))
            return out

        expected = np.mean(np.abs(feats(est) - feats(ref)))
        assert float(linguistic_loss(est, ref, provider)) == pytest.approx(expected, abs=1e-6)

    def test_symmetry(self):
        provider = LogFilterbankProvider()
        rng = np.random.default_rng(8)
        a = torch.from_numpy(rng.uniform(-0.5, 0.5, 19200))
        b = torch.from_numpy(rng.uniform(-0.5, 0.5, 19200))
        assert float(linguistic_loss(a, b, provider)) == float(linguistic_loss(b, a, provider))

    def test_provider_failure_wrapped(self):
        def broken(_):
            raise RuntimeError("no backend")

        with pytest.raises(RuntimeError, match="provider.*failed"):
            linguistic_loss(torch.zeros(960), torch.zeros(960), broken)


class TestAdversarial:
    def test_g_loss_zero_when_fooled(self):
        assert float(lsgan_g_loss([torch.ones(3, 4)])) == 0.0

    def test_d_loss_zero_when_separating(self):
        assert float(lsgan_d_loss([torch.ones(2, 5)], [torch.zeros(2, 5)])) == 0.0

    def test_lsgan_matches_loop(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            fakes = [rng.normal(size=(2, 3)) for _ in range(3)]
            reals = [rng.normal(size=(2, 3)) for _ in range(3)]
            g_expected = np.mean([np.mean((f - 1) ** 2) for f in fakes])
            d_expected = np.mean([np.mean((r - 1) ** 2) + np.mean(f ** 2)
                                  for r, f in zip(reals, fakes)])
            assert float(lsgan_g_loss([torch.from_numpy(f) for f in fakes])) == pytest.approx(
                g_expected, abs=1e-6)
            assert float(lsgan_d_loss([torch.from_numpy(r) for r in reals],
                                      [torch.from_numpy(f) for f in fakes])) == pytest.approx(
                d_expected, abs=1e-6)

    def test_empty_maps_rejected(self):
        with pytest.raises(ValueError):
            lsgan_g_loss([])
        with pytest.raises(ValueError):
            lsgan_d_loss([], [])

    def test_metricgan_hand_formula(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            s_clean, s_est, q = rng.uniform(0, 1, 3)
            assert float(metricgan_d_loss(torch.tensor(s_clean), torch.tensor(s_est),
                                          torch.tensor(q))) == pytest.approx(
                (s_clean - 1) ** 2 + (s_est - q) ** 2, abs=1e-9)
            assert float(metricgan_g_loss(torch.tensor(s_est))) == pytest.approx(
                (s_est - 1) ** 2, abs=1e-9)

    def test_metricgan_edge_cases(self):
        assert float(metricgan_g_loss(torch.tensor(1.0))) == 0.0
        assert float(metricgan_d_loss(torch.tensor(1.0), torch.tensor(0.4),
                                      torch.tensor(0.4))) == 0.0


class TestReconstructionLossProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_nonnegative_and_zero_at_identity(self, seed):
        rng = np.random.default_rng(seed)
        spec = rng.normal(size=(3, 9)) + 1j * rng.normal(size=(3, 9))
        other = rng.normal(size=(3, 9)) + 1j * rng.normal(size=(3, 9))
        wave = rng.uniform(-1, 1, 64)
        track = rng.uniform(0, 1, 12)
        assert float(plcpa_loss(spec, spec)) == 0.0
        assert float(mae_time_loss(wave, wave)) == 0.0
        assert float(f0_loss(track, track)) == 0.0
        assert float(plcpa_loss(other, spec)) >= 0.0
        assert float(mae_time_loss(rng.uniform(-1, 1, 64), wave)) >= 0.0


class TestCombine:
    def test_unit_inputs_hand_value(self):
        report = combine(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, LossWeights())
        assert report.total == pytest.approx(2.101, abs=1e-12)

    def test_all_zero(self):
        assert combine(0, 0, 0, 0, 0, 0, LossWeights()).total == 0.0

    def test_reduces_to_speech_plus_gan(self):
        weights = LossWeights(alpha=0.0, beta=0.0)
        report = combine(0.5, 0.25, 123.0, 456.0, 0.125, 0.0625, weights)
        assert report.total == pytest.approx(0.5 + 0.25 + 0.125 + 0.0625, abs=1e-12)

    def test_nan_names_offending_term(self):
        with pytest.raises(ValueError, match="'mae'"):
            combine(1.0, float("nan"), 0.0, 0.0, 0.0, 0.0, LossWeights())

    def test_report_keeps_addends(self):
        report = combine(1, 2, 3, 4, 5, 6, LossWeights())
        assert (report.plcpa, report.mae, report.f0, report.linguistic,
                report.gan_g, report.metric_g) == (1, 2, 3, 4, 5, 6)

    def test_linear_in_each_term(self):
        weights = LossWeights()
        base = combine(1, 1, 1, 1, 1, 1, weights).total
        bumped = combine(2, 1, 1, 1, 1, 1, weights).total
        assert bumped - base == pytest.approx(1.0, abs=1e-12)
        bumped_f0 = combine(1, 1, 2, 1, 1, 1, weights).total
        assert bumped_f0 - base == pytest.approx(weights.alpha, abs=1e-12)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-0.1)
