"""Audio preprocessing expressed as network layers.

The short-time Fourier transform is realized as a strided cross-correlation
against fixed cosine/sine kernels (one convolution for the real part, one
for the imaginary part), the mel filterbank is a dense matrix that is
normally loaded from the weight archive (a learned filterbank; a triangular
initialization is provided here), and the amplitude-to-dB step is a clamped
logarithmic activation. Everything is a pure function of its inputs, so
callers may process windows on any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError, ShapeError


@dataclass(frozen=True)
class StftConfig:
    """Spectrogram geometry: kernel size is the FFT size, stride the hop."""

    sample_rate: float
    n_fft: int
    hop: int
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.n_fft < 2 or self.n_fft % 2 != 0:
            raise ConfigError(f"n_fft must be even and >= 2, got {self.n_fft}")
        if not 1 <= self.hop <= self.n_fft:
            raise ConfigError(f"hop must be in [1, n_fft], got {self.hop}")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int
    f_min: float
    f_max: float
    norm: str = "peak-one"

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0 <= self.f_min < self.f_max:
            raise ConfigError(f"need 0 <= f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.norm not in ("peak-one", "area"):
            raise ConfigError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class DbConfig:
    amin: float = 1e-10
    ref: float = 1.0
    top_db: float = 80.0

    def __post_init__(self):
        if self.amin <= 0:
            raise ConfigError(f"amin must be positive, got {self.amin}")
        if self.ref <= 0:
            raise ConfigError(f"ref must be positive, got {self.ref}")
        if self.top_db <= 0:
            raise ConfigError(f"top_db must be positive, got {self.top_db}")


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (w[0] == 0), float64."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_stft_kernels(cfg: StftConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cosine/sine analysis kernels, shape (n_fft/2+1, n_fft) each, float32.

    real[k][n] =  w[n] * cos(2 pi k n / n_fft)
    imag[k][n] = -w[n] * sin(2 pi k n / n_fft)
    """
    n = np.arange(cfg.n_fft, dtype=np.float64)
    k = np.arange(cfg.n_bins, dtype=np.float64)[:, None]
    w = hann_window(cfg.n_fft)
    phase = 2.0 * np.pi * k * n / cfg.n_fft
    real = (w * np.cos(phase)).astype(np.float32)
    imag = (-w * np.sin(phase)).astype(np.float32)
    return real, imag


def frame_count(cfg: StftConfig, n_samples: int) -> int:
    """Number of analysis frames for a signal of n_samples."""
    if cfg.center_pad:
        return n_samples // cfg.hop + 1
    if n_samples < cfg.n_fft:
        raise ShapeError(f"signal of {n_samples} samples is shorter than "
                         f"n_fft={cfg.n_fft} and center_pad is off")
    return (n_samples - cfg.n_fft) // cfg.hop + 1


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if cfg.center_pad:
        x = np.pad(x, cfg.n_fft // 2, mode="reflect")
    if x.shape[0] < cfg.n_fft:
        raise ShapeError(f"signal of {x.shape[0]} samples is shorter than n_fft={cfg.n_fft}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[::cfg.hop]
    return np.ascontiguousarray(frames)


def power_stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Power spectrogram via the paired real/imaginary convolutions.

    Accepts a mono signal shaped (L,) or (1, L); returns
    (frames, n_fft/2+1) float32 where each value is re^2 + im^2.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ShapeError(f"expected mono signal (L,) or (1, L), got {x.shape}")
    frames = _frame_signal(x, cfg)
    real, imag = build_stft_kernels(cfg)
    re = frames @ real.T
    im = frames @ imag.T
    return re * re + im * im


@lru_cache(maxsize=8)
def _dft_basis(n_fft: int) -> np.ndarray:
    k = np.arange(n_fft // 2 + 1, dtype=np.float64)[:, None]
    n = np.arange(n_fft, dtype=np.float64)[None, :]
    return np.exp(-2.0j * np.pi * k * n / n_fft)


def naive_dft_oracle(frame: np.ndarray) -> np.ndarray:
    """Direct O(n^2) DFT power of one Hann-windowed frame, float64.

    Independent reference for power_stft: complex exponential basis and
    complex magnitude instead of separate cosine/sine convolutions.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ShapeError(f"expected a single frame, got shape {frame.shape}")
    n_fft = frame.shape[0]
    windowed = hann_window(n_fft) * frame
    spectrum = _dft_basis(n_fft) @ windowed
    return np.abs(spectrum) ** 2


def build_mel_filterbank(stft: StftConfig, mel: MelConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft/2+1), float32.

    Corner frequencies are spaced uniformly on the mel scale between f_min
    and f_max; each row is the triangle sampled at the FFT bin centers.
    This is the *initialization* of the (trainable) filterbank layer; a
    deployed archive may carry different weights.
    """
    if mel.f_max > stft.sample_rate / 2 + 1e-9:
        raise ConfigError(f"f_max {mel.f_max} exceeds Nyquist {stft.sample_rate / 2}")
    corners = mel_to_hz(np.linspace(hz_to_mel(mel.f_min), hz_to_mel(mel.f_max),
                                    mel.n_mels + 2))
    bin_hz = np.arange(stft.n_bins, dtype=np.float64) * stft.sample_rate / stft.n_fft
    fb = np.zeros((mel.n_mels, stft.n_bins), dtype=np.float64)
    for m in range(mel.n_mels):
        lo, center, hi = corners[m], corners[m + 1], corners[m + 2]
        rising = (bin_hz - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    peaks = fb.max(axis=1)
    if np.any(peaks <= 0):
        empty = int(np.argmin(peaks))
        raise ConfigError(f"mel filter {empty} spans less than one FFT bin; "
                          f"reduce n_mels or raise n_fft")
    if mel.norm == "peak-one":
        fb /= peaks[:, None]
    else:  # area
        fb /= fb.sum(axis=1, keepdims=True)
    return fb.astype(np.float32)


def amplitude_to_db(p: np.ndarray, cfg: DbConfig) -> np.ndarray:
    """Logarithmic activation: power -> dB, clamped to a top_db range.

    out = 10*log10(max(p, amin)) - 10*log10(max(amin, ref)), then clamped
    below at (global max - top_db).
    """
    p = np.asarray(p, dtype=np.float32)
    if np.any(p < 0):
        raise DomainError("power values must be nonnegative")
    ref_db = 10.0 * np.log10(max(cfg.amin, cfg.ref))
    db = 10.0 * np.log10(np.maximum(p, cfg.amin)) - ref_db
    return np.maximum(db, db.max() - cfg.top_db).astype(np.float32)


def logmel(x: np.ndarray, stft: StftConfig, mel_weights: np.ndarray,
           db: DbConfig, mel_bias: np.ndarray | None = None) -> np.ndarray:
    """Full frontend: power STFT -> mel projection -> dB activation.

    mel_weights is the (n_mels, n_fft/2+1) filterbank taken from the weight
    archive; it may differ from the triangular initialization when the
    deployed model learned its own filters. Returns (frames, n_mels).
    """
    mel_weights = np.asarray(mel_weights, dtype=np.float32)
    if mel_weights.ndim != 2 or mel_weights.shape[1] != stft.n_bins:
        raise ShapeError(f"mel weights must be (n_mels, {stft.n_bins}), "
                         f"got {mel_weights.shape}")
    power = power_stft(x, stft)
    mel_power = power @ mel_weights.T
    if mel_bias is not None:
        mel_bias = np.asarray(mel_bias, dtype=np.float32)
        if mel_bias.shape != (mel_weights.shape[0],):
            raise ShapeError(f"mel bias must be ({mel_weights.shape[0]},), "
                             f"got {mel_bias.shape}")
        mel_power = np.maximum(mel_power + mel_bias, 0.0)
    return amplitude_to_db(mel_power, db)
