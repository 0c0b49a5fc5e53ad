"""Dataset presets bundling sample rates, frontend geometry and window sizes.

Two presets ship with the engine:

* ``samosa-1k``: 1 kHz audio, 50 Hz IMU, 1 s classifier windows. The
  frontend (n_fft=128, hop=16) gives 63x64 log-mel images for a 1 s clip.
* ``seminat-22k``: 22.05 kHz audio, 50 Hz IMU, 10 s classifier windows.
  The frontend (n_fft=1024, hop=320) gives 690x64 log-mel images for a
  10 s clip.

The 64 mel bands and the 690-frame count are fixed points of the design;
the remaining values are configuration, chosen for roughly 128 ms analysis
windows, and can be overridden through the archive config.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dsp import DbConfig, MelConfig, StftConfig


@dataclass(frozen=True)
class Preset:
    name: str
    stft: StftConfig
    mel: MelConfig
    db: DbConfig
    imu_rate: float
    classifier_window_s: float
    imu_hidden: int

    @property
    def audio_rate(self) -> float:
        return self.stft.sample_rate

    @property
    def classifier_imu_samples(self) -> int:
        return round(self.classifier_window_s * self.imu_rate)


PRESETS: dict[str, Preset] = {
    "samosa-1k": Preset(
        name="samosa-1k",
        stft=StftConfig(sample_rate=1000.0, n_fft=128, hop=16, center_pad=True),
        mel=MelConfig(n_mels=64, f_min=0.0, f_max=500.0),
        db=DbConfig(),
        imu_rate=50.0,
        classifier_window_s=1.0,
        imu_hidden=512,
    ),
    "seminat-22k": Preset(
        name="seminat-22k",
        stft=StftConfig(sample_rate=22050.0, n_fft=1024, hop=320, center_pad=True),
        mel=MelConfig(n_mels=64, f_min=0.0, f_max=11025.0),
        db=DbConfig(),
        imu_rate=50.0,
        classifier_window_s=10.0,
        imu_hidden=64,
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
