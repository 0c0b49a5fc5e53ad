"""Deterministic desk-scale fixtures: weight archives and synthetic sessions.

Three artifacts, all reproducible from a seed:

* a random-weight archive with valid shapes (for shape, quantization and
  benchmark tests);
* an "energy detector" archive whose event detector is built analytically:
  it fires iff the windowed IMU signal carries high-frequency energy. The
  first block computes first differences, splits them into positive and
  negative parts, later blocks average them, and the head thresholds the
  resulting mean |diff|. Because windows are z-scored per channel, mean
  |diff| depends only on the signal's frequency content (roughly
  2*sqrt(2)*sin(pi*f/rate)/pi for a pure tone), so idle drift (~0.3 Hz)
  sits orders of magnitude below planted motion (14-19 Hz);
* synthetic sessions with planted high-motion segments whose audio is a
  class-distinct sinusoid mixture, labeled with class and context.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass

import numpy as np

from ..archive import WeightArchive, write_archive
from ..models import (
    AudioEncoder,
    AudioEncoderConfig,
    EventDetector,
    EventDetectorConfig,
    FrontendConfig,
    FusionConfig,
    FusionHead,
    ImuEncoder,
    ImuEncoderConfig,
    build_archive,
)
from ..dsp import build_mel_filterbank
from ..presets import Preset, get_preset
from .sessions import LabeledSession, LabelInterval, save_session

CLASS_NAMES = ["chopping", "blender", "hammering", "sawing", "brushing", "clapping"]
CONTEXTS = ["kitchen", "bathroom", "workshop", "misc"]

# class-distinct audio tones (Hz); all resolve to distinct mel bands at 1 kHz
CLASS_TONES_HZ = [60.0, 115.0, 170.0, 225.0, 280.0, 335.0]

IDLE_IMU_HZ = 0.3
MOTION_IMU_HZ = 14.0  # per-channel offsets added on top

# threshold between the idle (~0.02) and motion (~0.7) mean-|diff| levels
ENERGY_TAU = 0.2
ENERGY_GAIN = 60.0


@dataclass
class Fixtures:
    preset: Preset
    random_archive: WeightArchive
    energy_archive: WeightArchive
    sessions: list


def _he_params(specs, rng, scale=1.0):
    out = {}
    for name, shape in specs.items():
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        out[name] = (scale * rng.normal(0, math.sqrt(2.0 / max(fan_in, 1)), size=shape)
                     ).astype(np.float32)
    return out


def _model_configs(preset: Preset):
    window = round(preset.classifier_window_s * preset.audio_rate)
    frames = window // preset.stft.hop + 1
    return {
        "event_detector": EventDetectorConfig(),
        "imu_encoder": ImuEncoderConfig(window_samples=preset.classifier_imu_samples,
                                        hidden=preset.imu_hidden),
        "audio_encoder": AudioEncoderConfig(in_frames=frames),
        "fusion": FusionConfig(variant="gated", n_classes=len(CLASS_NAMES)),
        "audio_frontend": FrontendConfig(preset.stft, preset.mel, preset.db,
                                         window_samples=window),
    }


def _classifier_params(configs, rng, preset: Preset):
    params = {}
    params.update(_he_params(ImuEncoder.param_specs(configs["imu_encoder"]), rng, scale=0.5))
    params.update(_he_params(AudioEncoder.param_specs(configs["audio_encoder"]), rng,
                             scale=0.5))
    params.update(_he_params(FusionHead.param_specs(configs["fusion"]), rng))
    params["audio_frontend/mel_w"] = build_mel_filterbank(preset.stft, preset.mel)
    return params


def energy_detector_params(cfg: EventDetectorConfig) -> dict[str, np.ndarray]:
    """Hand-built weights turning the detector into a mean-|diff| threshold."""
    p = EventDetector.PREFIX
    params = {name: np.zeros(shape, dtype=np.float32)
              for name, shape in EventDetector.param_specs(cfg).items()}
    c_in = cfg.in_channels
    # block 0: first differences, split into +/- parts on 2*c_in channels
    params[f"{p}/b0/dw_w"][:, 0, 0] = 1.0
    params[f"{p}/b0/dw_w"][:, 0, 1] = -1.0
    for c in range(c_in):
        params[f"{p}/b0/pw_w"][2 * c, c, 0] = 1.0
        params[f"{p}/b0/pw_w"][2 * c + 1, c, 0] = -1.0
    # blocks 1..3: moving averages through identity pointwise maps
    for i in range(1, 4):
        k = cfg.kernels[i]
        params[f"{p}/b{i}/dw_w"][:, 0, :] = 1.0 / k
        pw = params[f"{p}/b{i}/pw_w"]
        for c in range(min(pw.shape[0], pw.shape[1])):
            pw[c, c, 0] = 1.0
    # head: average the 2*c_in active channels, then threshold
    n_positions = EventDetector.param_specs(cfg)[f"{p}/fc0_w"][1] // cfg.channels[-1]
    active = [c * n_positions + pos for c in range(2 * c_in) for pos in range(n_positions)]
    params[f"{p}/fc0_w"][0, active] = 1.0 / len(active)
    params[f"{p}/fc1_w"][0, 0] = 1.0
    params[f"{p}/fc2_w"][0, 0] = 1.0
    params[f"{p}/fc3_w"][0, 0] = ENERGY_GAIN
    params[f"{p}/fc3_b"][0] = -ENERGY_GAIN * ENERGY_TAU
    return params


def _tone(rng, n, rate, freq_per_sample, amp_per_sample):
    phase0 = rng.uniform(0, 2 * np.pi)
    phase = phase0 + 2 * np.pi * np.cumsum(freq_per_sample) / rate
    return (amp_per_sample * np.sin(phase)).astype(np.float32)


def _synth_session(rng, preset: Preset, name: str, duration_s: float,
                   segments, quiet: bool = False) -> LabeledSession:
    """Build one session; ``segments`` is a list of (start_s, end_s, class_id,
    context). ``quiet`` keeps the IMU idle even inside labeled intervals."""
    imu_rate = preset.imu_rate
    n_imu = round(duration_s * imu_rate)
    imu_t = np.arange(n_imu) * (1000.0 / imu_rate)
    in_motion = np.zeros(n_imu, dtype=bool)
    if not quiet:
        for start_s, end_s, _, _ in segments:
            in_motion |= (imu_t >= start_s * 1000.0) & (imu_t < end_s * 1000.0)
    imu = np.zeros((n_imu, 6), dtype=np.float32)
    for c in range(6):
        freq = np.where(in_motion, MOTION_IMU_HZ + c, IDLE_IMU_HZ)
        amp = 1.0 + 0.2 * rng.uniform(-1, 1)
        imu[:, c] = _tone(rng, n_imu, imu_rate, freq, amp)

    audio_rate = preset.audio_rate
    n_audio = round(duration_s * audio_rate)
    audio_t = np.arange(n_audio) / audio_rate
    freq = np.full(n_audio, 30.0)
    amp = np.full(n_audio, 0.02)
    for start_s, end_s, class_id, _ in segments:
        mask = (audio_t >= start_s) & (audio_t < end_s)
        freq[mask] = CLASS_TONES_HZ[class_id]
        amp[mask] = 0.4
    audio = _tone(rng, n_audio, audio_rate, freq, amp)
    audio += 0.1 * _tone(rng, n_audio, audio_rate, 2 * freq, amp)

    labels = [LabelInterval(start_s * 1000.0, end_s * 1000.0,
                            CLASS_NAMES[class_id], context)
              for start_s, end_s, class_id, context in segments]
    return LabeledSession(name=name, imu_t=imu_t, imu=imu, audio=audio,
                          audio_rate=audio_rate, labels=labels, imu_rate=imu_rate)


def gen_fixtures(seed: int = 42, preset_name: str = "samosa-1k") -> Fixtures:
    """Deterministic archives + sessions for the given preset and seed."""
    preset = get_preset(preset_name)
    rng = np.random.default_rng(seed)
    configs = _model_configs(preset)

    random_params = _he_params(EventDetector.param_specs(configs["event_detector"]),
                               rng, scale=0.5)
    random_params.update(_classifier_params(configs, rng, preset))
    random_archive = build_archive(configs, random_params, CLASS_NAMES, CONTEXTS)

    energy_params = energy_detector_params(configs["event_detector"])
    energy_params.update(_classifier_params(configs, rng, preset))
    energy_archive = build_archive(configs, energy_params, CLASS_NAMES, CONTEXTS)

    # segment long enough for the 2 s smoother plus one classifier window
    w = preset.classifier_window_s
    seg = max(6.0, 3.0 + 3.0 * w)
    gap = 5.0 + w  # detector window tail + smoothing release
    s0_start = 5.0
    sessions = [
        _synth_session(rng, preset, "s00_motion", s0_start + seg + gap,
                       [(s0_start, s0_start + seg, 0, "kitchen")]),
        _synth_session(rng, preset, "s01_twoseg", 4.0 + 2 * seg + 2 * gap,
                       [(4.0, 4.0 + seg, 1, "workshop"),
                        (4.0 + seg + gap, 4.0 + 2 * seg + gap, 2, "kitchen")]),
        _synth_session(rng, preset, "s02_idle", 9.0,
                       [(3.0, 5.0, 0, "misc")], quiet=True),
    ]
    return Fixtures(preset, random_archive, energy_archive, sessions)


def write_fixtures(fixtures: Fixtures, out_dir) -> dict:
    """Write archives + session triples + a crc32 manifest; returns the
    manifest dict. Same fixtures give a byte-identical tree."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    random_path = os.path.join(out_dir, "random.whar")
    energy_path = os.path.join(out_dir, "energy.whar")
    write_archive(fixtures.random_archive, random_path)
    write_archive(fixtures.energy_archive, energy_path)
    paths.extend([random_path, energy_path])
    for session in fixtures.sessions:
        paths.extend(save_session(session, out_dir))
    manifest = {
        "preset": fixtures.preset.name,
        "files": [],
    }
    for path in sorted(paths):
        data = open(path, "rb").read()
        manifest["files"].append({
            "path": os.path.relpath(path, out_dir),
            "bytes": len(data),
            "crc32": zlib.crc32(data) & 0xFFFFFFFF,
        })
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
