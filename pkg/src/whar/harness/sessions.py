"""Replayable labeled recordings and their on-disk formats.

IMU file:   CSV with header ``t_ms,ax,ay,az,gx,gy,gz`` (SI units: m/s^2,
            rad/s), one row per 50 Hz sample.
Audio file: WAV, PCM16, mono; the rate must equal the preset's.
Labels:     CSV with header ``start_ms,end_ms,class,context``.

A hop's ground truth uses trailing-edge membership: the hop at time t is
inside a labeled interval iff start < t <= end, i.e. the window *ends*
inside the interval. That keeps labeling causal for streaming.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from ..errors import FormatError, ParseError, RateError, ValidationError

IMU_HEADER = ["t_ms", "ax", "ay", "az", "gx", "gy", "gz"]
LABEL_HEADER = ["start_ms", "end_ms", "class", "context"]


@dataclass(frozen=True)
class LabelInterval:
    start_ms: float
    end_ms: float
    class_name: str
    context: str

    def contains_hop(self, t_ms: float) -> bool:
        return self.start_ms < t_ms <= self.end_ms


@dataclass
class LabeledSession:
    name: str
    imu_t: np.ndarray          # (N,) ms
    imu: np.ndarray            # (N, 6)
    audio: np.ndarray          # (M,) float32 in [-1, 1]
    audio_rate: float
    labels: list[LabelInterval] = field(default_factory=list)
    imu_rate: float = 50.0
    participant: str = "p00"
    split_tag: str = "test"

    def __post_init__(self):
        self.imu_t = np.asarray(self.imu_t, dtype=np.float64)
        self.imu = np.asarray(self.imu, dtype=np.float32)
        self.audio = np.asarray(self.audio, dtype=np.float32)
        if self.imu.shape != (self.imu_t.shape[0], 6):
            raise ValidationError(f"IMU data {self.imu.shape} does not match "
                                  f"{self.imu_t.shape[0]} timestamps x 6 channels")
        ordered = sorted(self.labels, key=lambda l: l.start_ms)
        for lab in ordered:
            if lab.end_ms <= lab.start_ms:
                raise ValidationError(f"label [{lab.start_ms}, {lab.end_ms}] has "
                                      f"end <= start")
        for a, b in zip(ordered, ordered[1:]):
            if b.start_ms < a.end_ms:
                raise ValidationError(f"labels overlap: [{a.start_ms}, {a.end_ms}] and "
                                      f"[{b.start_ms}, {b.end_ms}]")
        self.labels = ordered

    def validate_classes(self, class_names) -> None:
        unknown = sorted({l.class_name for l in self.labels} - set(class_names))
        if unknown:
            raise ValidationError(f"session {self.name}: classes {unknown} not in the "
                                  f"model's class list")

    def label_at(self, t_ms: float) -> LabelInterval | None:
        for lab in self.labels:
            if lab.contains_hop(t_ms):
                return lab
        return None

    def context_at(self, t_ms: float) -> str | None:
        lab = self.label_at(t_ms)
        return lab.context if lab is not None else None

    @property
    def duration_ms(self) -> float:
        ends = [0.0]
        if self.imu_t.size:
            ends.append(float(self.imu_t[-1]) + 1000.0 / self.imu_rate)
        if self.audio.size:
            ends.append(1000.0 * self.audio.size / self.audio_rate)
        return max(ends)


def _read_csv_rows(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != expected_header:
            raise ParseError(f"{path}: line 1: expected header "
                             f"{','.join(expected_header)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected_header):
                raise ParseError(f"{path}: line {lineno}: expected "
                                 f"{len(expected_header)} fields, got {len(row)}")
            yield lineno, row


def load_session(imu_path, wav_path, labels_path, name: str | None = None,
                 expected_audio_rate: float | None = None,
                 class_names=None) -> LabeledSession:
    """Load and validate one (IMU CSV, WAV, labels CSV) triple."""
    times, frames = [], []
    for lineno, row in _read_csv_rows(imu_path, IMU_HEADER):
        try:
            times.append(float(row[0]))
            frames.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{imu_path}: line {lineno}: {exc}") from exc
    rate, audio = wavfile.read(wav_path)
    if audio.ndim != 1:
        raise FormatError(f"{wav_path}: expected mono audio, got {audio.ndim} channels")
    if audio.dtype != np.int16:
        raise FormatError(f"{wav_path}: expected PCM16 samples, got {audio.dtype}")
    if expected_audio_rate is not None and rate != expected_audio_rate:
        raise RateError(f"{wav_path}: {rate} Hz audio, preset expects "
                        f"{expected_audio_rate} Hz")
    labels = []
    if labels_path is not None:
        for lineno, row in _read_csv_rows(labels_path, LABEL_HEADER):
            try:
                labels.append(LabelInterval(float(row[0]), float(row[1]),
                                            row[2].strip(), row[3].strip()))
            except ValueError as exc:
                raise ParseError(f"{labels_path}: line {lineno}: {exc}") from exc
    if name is None:
        name = _session_stem(imu_path)
    session = LabeledSession(name=name, imu_t=np.array(times), imu=np.array(frames),
                             audio=audio.astype(np.float32) / 32768.0,
                             audio_rate=float(rate), labels=labels)
    if class_names is not None:
        session.validate_classes(class_names)
    return session


def _session_stem(path) -> str:
    import os
    base = os.path.basename(str(path))
    for suffix in (".imu.csv", ".labels.csv", ".jsonl", ".wav", ".csv"):
        if base.endswith(suffix):
            return base[:-len(suffix)]
    return os.path.splitext(base)[0]


session_stem = _session_stem


@dataclass
class LabelsOnly:
    """Label track without waveforms; enough for scoring an event log."""

    name: str
    labels: list

    def label_at(self, t_ms: float) -> LabelInterval | None:
        for lab in self.labels:
            if lab.contains_hop(t_ms):
                return lab
        return None


def load_labels(labels_path, name: str | None = None) -> LabelsOnly:
    labels = []
    for lineno, row in _read_csv_rows(labels_path, LABEL_HEADER):
        try:
            labels.append(LabelInterval(float(row[0]), float(row[1]),
                                        row[2].strip(), row[3].strip()))
        except ValueError as exc:
            raise ParseError(f"{labels_path}: line {lineno}: {exc}") from exc
    view = LabelsOnly(name or _session_stem(labels_path),
                      sorted(labels, key=lambda l: l.start_ms))
    for a, b in zip(view.labels, view.labels[1:]):
        if b.start_ms < a.end_ms:
            raise ValidationError(f"labels overlap: [{a.start_ms}, {a.end_ms}] and "
                                  f"[{b.start_ms}, {b.end_ms}]")
    return view


def save_session(session: LabeledSession, out_dir) -> list[str]:
    """Write the session as the three-file on-disk form; returns the paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    imu_path = os.path.join(out_dir, f"{session.name}.imu.csv")
    wav_path = os.path.join(out_dir, f"{session.name}.wav")
    labels_path = os.path.join(out_dir, f"{session.name}.labels.csv")
    with open(imu_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IMU_HEADER)
        for t, frame in zip(session.imu_t, session.imu):
            writer.writerow([f"{t:.3f}"] + [f"{v:.6f}" for v in frame])
    pcm = np.clip(np.round(session.audio * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(wav_path, int(session.audio_rate), pcm)
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for lab in session.labels:
            writer.writerow([f"{lab.start_ms:.1f}", f"{lab.end_ms:.1f}",
                             lab.class_name, lab.context])
    return [imu_path, wav_path, labels_path]
