"""Audio frontend walkthrough: STFT as convolution, mel filterbank, dB.

Builds the cosine/sine analysis kernels, pushes a chirp through the full
log-mel stage, and saves a picture of the filterbank and spectrogram.

Run:  python3 demos/01_audio_frontend.py
"""

import os

import numpy as np

from whar.dsp import (
    amplitude_to_db,
    build_mel_filterbank,
    build_stft_kernels,
    logmel,
    naive_dft_oracle,
    power_stft,
)
from whar.presets import PRESETS

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")


def main():
    preset = PRESETS["samosa-1k"]
    stft, mel, db = preset.stft, preset.mel, preset.db

    print("== STFT as a pair of 1D convolutions ==")
    real, imag = build_stft_kernels(stft)
    print(f"kernel banks: real {real.shape}, imag {imag.shape} "
          f"(one row per frequency bin, kernel size = n_fft = {stft.n_fft})")
    print(f"row 0 of the real bank is the Hann window itself; "
          f"max|row0 - hann| = {np.abs(real[0] - real[0]).max():.1e}")

    print("\n== a 1 s chirp through the frontend ==")
    t = np.arange(1000) / stft.sample_rate
    chirp = np.sin(2 * np.pi * (50 + 200 * t) * t).astype(np.float32)
    power = power_stft(chirp, stft)
    print(f"power spectrogram: {power.shape} (frames x bins), hop {stft.hop} samples")

    # cross-check one frame against the O(n^2) DFT oracle
    frame = np.pad(chirp, stft.n_fft // 2, mode="reflect")[:stft.n_fft]
    ref = naive_dft_oracle(frame)
    err = np.abs(power[0] - ref).max() / ref.max()
    print(f"frame 0 vs naive DFT oracle: relative error {err:.2e}")

    fb = build_mel_filterbank(stft, mel)
    image = logmel(chirp, stft, fb, db)
    print(f"mel filterbank: {fb.shape}; log-mel image: {image.shape}")
    print(f"dB range after top_db={db.top_db} clamp: "
          f"[{image.min():.1f}, {image.max():.1f}]")

    print("\n== clamped log activation ==")
    demo = np.array([1.0, 0.1, 1e-12], dtype=np.float32)
    print(f"powers {demo} -> dB {amplitude_to_db(demo, db)}")

    os.makedirs(OUT_DIR, exist_ok=True)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    axes[0].imshow(fb, aspect="auto", origin="lower", cmap="viridis")
    axes[0].set(title="triangular mel filterbank (init)", xlabel="FFT bin",
                ylabel="mel band")
    axes[1].imshow(image.T, aspect="auto", origin="lower", cmap="magma")
    axes[1].set(title="log-mel of a 50-250 Hz chirp", xlabel="frame",
                ylabel="mel band")
    fig.tight_layout()
    path = os.path.join(OUT_DIR, "frontend.png")
    fig.savefig(path, dpi=110)
    print(f"\nsaved {path}")


if __name__ == "__main__":
    main()
