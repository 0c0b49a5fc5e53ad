import math

import numpy as np
import pytest

from whar.dsp import (
    DbConfig,
    MelConfig,
    StftConfig,
    amplitude_to_db,
    build_mel_filterbank,
    build_stft_kernels,
    frame_count,
    hann_window,
    hz_to_mel,
    logmel,
    naive_dft_oracle,
    power_stft,
)
from whar.errors import ConfigError, DomainError, ShapeError
from whar.presets import PRESETS


def frame_relative_error(produced, reference):
    """Worst absolute deviation normalized by the frame's peak power."""
    produced = np.asarray(produced, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(reference.max(), 1e-12)
    return np.abs(produced - reference).max() / scale


class TestConfigs:
    def test_stft_validation(self):
        with pytest.raises(ConfigError):
            StftConfig(sample_rate=0, n_fft=128, hop=16)
        with pytest.raises(ConfigError):
            StftConfig(sample_rate=1000, n_fft=7, hop=2)
        with pytest.raises(ConfigError):
            StftConfig(sample_rate=1000, n_fft=128, hop=0)
        with pytest.raises(ConfigError):
            StftConfig(sample_rate=1000, n_fft=128, hop=129)

    def test_mel_validation(self):
        with pytest.raises(ConfigError):
            MelConfig(n_mels=0, f_min=0, f_max=500)
        with pytest.raises(ConfigError):
            MelConfig(n_mels=8, f_min=400, f_max=300)

    def test_db_validation(self):
        with pytest.raises(ConfigError):
            DbConfig(amin=0)
        with pytest.raises(ConfigError):
            DbConfig(top_db=-1)


class TestStftKernels:
    def test_dc_row_is_hann_window(self):
        cfg = StftConfig(sample_rate=1000, n_fft=64, hop=16)
        real, imag = build_stft_kernels(cfg)
        assert real.shape == (33, 64)
        np.testing.assert_allclose(real[0], hann_window(64), rtol=0, atol=1e-7)
        np.testing.assert_array_equal(imag[0], np.zeros(64, dtype=np.float32))

    def test_nyquist_imag_row_is_zero(self):
        cfg = StftConfig(sample_rate=1000, n_fft=64, hop=16)
        _, imag = build_stft_kernels(cfg)
        np.testing.assert_allclose(imag[-1], np.zeros(64), atol=1e-6)

    def test_nfft8_matches_hand_computed_basis(self):
        # independent recomputation with math.cos/sin scalar loops
        cfg = StftConfig(sample_rate=100, n_fft=8, hop=2)
        real, imag = build_stft_kernels(cfg)
        for k in range(5):
            for n in range(8):
                w = 0.5 - 0.5 * math.cos(2 * math.pi * n / 8)
                assert real[k, n] == pytest.approx(w * math.cos(2 * math.pi * k * n / 8), abs=1e-7)
                assert imag[k, n] == pytest.approx(-w * math.sin(2 * math.pi * k * n / 8), abs=1e-7)


class TestOracle:
    def test_zero_frame(self):
        assert np.all(naive_dft_oracle(np.zeros(32)) == 0.0)

    def test_impulse_at_zero_is_silent(self):
        # periodic Hann has w[0] == 0, so an impulse at n=0 vanishes
        frame = np.zeros(32)
        frame[0] = 1.0
        np.testing.assert_allclose(naive_dft_oracle(frame), np.zeros(17), atol=1e-20)

    def test_pure_cosine_peaks_at_its_bin(self):
        n = np.arange(64)
        frame = np.cos(2 * np.pi * 3 * n / 64)
        power = naive_dft_oracle(frame)
        assert int(np.argmax(power)) == 3


class TestPowerStft:
    def test_zero_input_zero_output(self):
        cfg = StftConfig(sample_rate=1000, n_fft=128, hop=16)
        out = power_stft(np.zeros(1000, dtype=np.float32), cfg)
        assert out.shape == (63, 65)
        assert np.all(out == 0.0)

    def test_ten_seconds_at_22050_gives_690_frames(self):
        cfg = PRESETS["seminat-22k"].stft
        x = np.random.default_rng(0).normal(size=220500).astype(np.float32)
        out = power_stft(x, cfg)
        assert out.shape == (690, 513)

    def test_frame_count_formula_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n_fft = int(rng.choice([8, 16, 32]))
            hop = int(rng.integers(1, n_fft + 1))
            length = int(rng.integers(n_fft, 500))
            cfg = StftConfig(sample_rate=1000, n_fft=n_fft, hop=hop, center_pad=True)
            x = rng.normal(size=length).astype(np.float32)
            assert power_stft(x, cfg).shape[0] == length // hop + 1 == frame_count(cfg, length)

    def test_uncentered_frame_count(self):
        cfg = StftConfig(sample_rate=1000, n_fft=128, hop=16, center_pad=False)
        x = np.zeros(1000, dtype=np.float32)
        assert power_stft(x, cfg).shape[0] == (1000 - 128) // 16 + 1

    def test_too_short_without_padding(self):
        cfg = StftConfig(sample_rate=1000, n_fft=128, hop=16, center_pad=False)
        with pytest.raises(ShapeError):
            power_stft(np.zeros(100, dtype=np.float32), cfg)

    def test_matches_oracle_per_frame(self):
        cfg = StftConfig(sample_rate=1000, n_fft=128, hop=16, center_pad=False)
        rng = np.random.default_rng(17)
        x = rng.normal(size=1000).astype(np.float32)
        produced = power_stft(x, cfg)
        for f in range(produced.shape[0]):
            frame = x[f * cfg.hop:f * cfg.hop + cfg.n_fft]
            assert frame_relative_error(produced[f], naive_dft_oracle(frame)) < 1e-4

    def test_matches_oracle_with_center_padding(self):
        cfg = StftConfig(sample_rate=1000, n_fft=64, hop=16, center_pad=True)
        rng = np.random.default_rng(23)
        x = rng.normal(size=500).astype(np.float32)
        padded = np.pad(x, 32, mode="reflect")
        produced = power_stft(x, cfg)
        for f in range(produced.shape[0]):
            frame = padded[f * cfg.hop:f * cfg.hop + cfg.n_fft]
            assert frame_relative_error(produced[f], naive_dft_oracle(frame)) < 1e-4


class TestMelFilterbank:
    def test_matrix_shape_64x513(self):
        p = PRESETS["seminat-22k"]
        fb = build_mel_filterbank(p.stft, p.mel)
        assert fb.shape == (64, 513)

    def test_mel_scale_formula(self):
        # closed-form check: mel(1000 Hz) = 2595*log10(1 + 1000/700)
        assert hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)

    @pytest.mark.parametrize("preset", ["samosa-1k", "seminat-22k"])
    def test_rows_nonnegative_contiguous_monotone(self, preset):
        p = PRESETS[preset]
        fb = build_mel_filterbank(p.stft, p.mel)
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)
        peaks = []
        for row in fb:
            nz = np.flatnonzero(row)
            assert nz.size > 0
            assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1)), "support must be contiguous"
            peaks.append(int(np.argmax(row)))
        assert all(b >= a for a, b in zip(peaks, peaks[1:])), "peak bins must be monotone"

    def test_peak_bins_strictly_increasing_when_resolved(self):
        # with ample spectral resolution every filter owns its own peak bin
        stft = StftConfig(sample_rate=22050, n_fft=1024, hop=320)
        fb = build_mel_filterbank(stft, MelConfig(n_mels=16, f_min=0, f_max=11025))
        peaks = [int(np.argmax(row)) for row in fb]
        assert all(b > a for a, b in zip(peaks, peaks[1:]))

    def test_peak_one_norm_max_is_exactly_one(self):
        p = PRESETS["samosa-1k"]
        fb = build_mel_filterbank(p.stft, p.mel)
        np.testing.assert_array_equal(fb.max(axis=1), np.ones(64, dtype=np.float32))

    def test_area_norm_rows_sum_to_one(self):
        p = PRESETS["samosa-1k"]
        fb = build_mel_filterbank(p.stft, MelConfig(n_mels=64, f_min=0, f_max=500, norm="area"))
        np.testing.assert_allclose(fb.sum(axis=1), np.ones(64), rtol=1e-6)

    def test_too_many_filters_for_resolution(self):
        stft = StftConfig(sample_rate=1000, n_fft=32, hop=8)
        with pytest.raises(ConfigError):
            build_mel_filterbank(stft, MelConfig(n_mels=200, f_min=0, f_max=500))

    def test_fmax_beyond_nyquist(self):
        stft = StftConfig(sample_rate=1000, n_fft=128, hop=16)
        with pytest.raises(ConfigError):
            build_mel_filterbank(stft, MelConfig(n_mels=8, f_min=0, f_max=600))


class TestAmplitudeToDb:
    def test_reference_power_maps_to_zero(self):
        cfg = DbConfig(amin=1e-10, ref=2.5, top_db=80)
        out = amplitude_to_db(np.full((3, 4), 2.5, dtype=np.float32), cfg)
        np.testing.assert_allclose(out, np.zeros((3, 4)), atol=1e-6)

    def test_floor_clamped_to_top_db(self):
        cfg = DbConfig(amin=1e-10, ref=1.0, top_db=80)
        out = amplitude_to_db(np.array([1.0, 0.0], dtype=np.float32), cfg)
        np.testing.assert_allclose(out, [0.0, -80.0], atol=1e-5)

    def test_power_times_ten_adds_ten_db(self):
        cfg = DbConfig(top_db=200.0)
        rng = np.random.default_rng(2)
        p = rng.uniform(1e-3, 10, size=50).astype(np.float32)
        base = amplitude_to_db(p, cfg)
        shifted = amplitude_to_db(10 * p, cfg)
        np.testing.assert_allclose(shifted - base, np.full(50, 10.0), atol=1e-4)

    def test_monotone_nondecreasing(self):
        cfg = DbConfig()
        rng = np.random.default_rng(9)
        for _ in range(50):
            x = rng.uniform(0, 5, size=20).astype(np.float32)
            y = x + rng.uniform(0, 1, size=20).astype(np.float32)
            assert np.all(amplitude_to_db(y, cfg) >= amplitude_to_db(x, cfg) - 1e-5)

    def test_negative_power_rejected(self):
        with pytest.raises(DomainError):
            amplitude_to_db(np.array([-0.1], dtype=np.float32), DbConfig())


class TestLogmel:
    def test_zero_audio_constant_floor(self):
        p = PRESETS["samosa-1k"]
        fb = build_mel_filterbank(p.stft, p.mel)
        out = logmel(np.zeros(1000, dtype=np.float32), p.stft, fb, p.db)
        assert out.shape == (63, 64)
        assert np.all(out == out.flat[0])
        # pre-clamp floor is 10*log10(amin/ref) = -100 dB
        assert out.flat[0] == pytest.approx(-100.0, abs=1e-4)

    def test_samosa_one_second_is_63x64(self):
        p = PRESETS["samosa-1k"]
        fb = build_mel_filterbank(p.stft, p.mel)
        x = np.random.default_rng(0).normal(size=1000).astype(np.float32)
        assert logmel(x, p.stft, fb, p.db).shape == (63, 64)

    def test_one_hot_rows_select_stft_bins(self):
        p = PRESETS["samosa-1k"]
        rng = np.random.default_rng(4)
        x = rng.normal(size=1000).astype(np.float32)
        power = power_stft(x, p.stft)
        bins = [int(np.argmax(power.max(axis=0)))] + [3, 10, 40]
        one_hot = np.zeros((4, p.stft.n_bins), dtype=np.float32)
        for row, b in enumerate(bins):
            one_hot[row, b] = 1.0
        big_range = DbConfig(top_db=1000.0)
        out = logmel(x, p.stft, one_hot, big_range)
        expected = amplitude_to_db(power, big_range)[:, bins]
        np.testing.assert_allclose(out, expected, atol=1e-4)

    def test_shape_mismatch_rejected(self):
        p = PRESETS["samosa-1k"]
        with pytest.raises(ShapeError):
            logmel(np.zeros(1000, dtype=np.float32), p.stft,
                   np.zeros((64, 100), dtype=np.float32), p.db)

    def test_optional_bias(self):
        p = PRESETS["samosa-1k"]
        fb = build_mel_filterbank(p.stft, p.mel)
        x = np.random.default_rng(4).normal(size=1000).astype(np.float32)
        out = logmel(x, p.stft, fb, p.db, mel_bias=np.zeros(64, dtype=np.float32))
        np.testing.assert_allclose(out, logmel(x, p.stft, fb, p.db), atol=1e-6)
