"""Streaming core: ring buffers, hop scheduling, probability smoothing and
the two-stage gate that keeps the microphone off until an event is detected.

One Pipeline instance serves one stream; push/tick calls must be externally
ordered. All inputs are value-passed samples, so independent instances can
run on independent threads.

The privacy/power contract: audio arriving while the gate is IDLE is
discarded, not stored. Buffer occupancy stays at zero for any session whose
smoothed detector output never reaches theta_on.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotReadyError, RateError, StreamError


@dataclass(frozen=True)
class PipelineConfig:
    imu_rate: float = 50.0
    audio_rate: float = 1000.0
    detector_window_s: float = 3.0
    classifier_window_s: float = 1.0
    hop_ms: float = 20.0
    smooth_s: float = 2.0
    theta_on: float = 0.5
    theta_off: float = 0.5
    mic_warmup_hops: int = 0

    def __post_init__(self):
        if self.hop_ms <= 0:
            raise ConfigError(f"hop must be positive, got {self.hop_ms} ms")
        if not (0 < self.theta_off <= self.theta_on < 1):
            raise ConfigError(f"need 0 < theta_off <= theta_on < 1, got "
                              f"on={self.theta_on}, off={self.theta_off}")
        if self.mic_warmup_hops < 0:
            raise ConfigError("mic_warmup_hops must be >= 0")
        for label, value in (("smoothing span", self.smooth_s * 1000.0 / self.hop_ms),
                             ("detector window", self.detector_window_s * self.imu_rate),
                             ("classifier IMU window",
                              self.classifier_window_s * self.imu_rate),
                             ("classifier audio window",
                              self.classifier_window_s * self.audio_rate),
                             ("IMU samples per hop", self.imu_rate * self.hop_ms / 1000.0),
                             ("audio samples per hop", self.audio_rate * self.hop_ms / 1000.0)):
            if abs(value - round(value)) > 1e-9 or round(value) < 1:
                raise ConfigError(f"{label} must be a whole positive number of samples/"
                                  f"hops, got {value}")

    @property
    def detector_samples(self) -> int:
        return round(self.detector_window_s * self.imu_rate)

    @property
    def classifier_imu_samples(self) -> int:
        return round(self.classifier_window_s * self.imu_rate)

    @property
    def classifier_audio_samples(self) -> int:
        return round(self.classifier_window_s * self.audio_rate)

    @property
    def smooth_hops(self) -> int:
        return round(self.smooth_s * 1000.0 / self.hop_ms)

    @property
    def audio_samples_per_hop(self) -> int:
        return round(self.audio_rate * self.hop_ms / 1000.0)


class RingBuffer:
    """Fixed-capacity rolling buffer over sample rows, oldest evicted."""

    def __init__(self, capacity: int, width: int | None = None):
        shape = (capacity,) if width is None else (capacity, width)
        self._data = np.zeros(shape, dtype=np.float32)
        self._capacity = capacity
        self._pos = 0
        self._count = 0

    def __len__(self):
        return self._count

    @property
    def full(self) -> bool:
        return self._count == self._capacity

    def push(self, row) -> None:
        self._data[self._pos] = row
        self._pos = (self._pos + 1) % self._capacity
        self._count = min(self._count + 1, self._capacity)

    def extend(self, rows) -> None:
        for row in np.asarray(rows, dtype=np.float32):
            self.push(row)

    def view(self) -> np.ndarray:
        """Chronologically ordered copy of the buffered samples."""
        if self._count < self._capacity:
            return self._data[:self._count].copy()
        return np.concatenate([self._data[self._pos:], self._data[:self._pos]])

    def clear(self) -> None:
        self._pos = 0
        self._count = 0


class GateSmoother:
    """Moving-average smoother plus the IDLE/ACTIVE threshold machine.

    The history seeds empty: the mean runs over however many raw values
    have been seen, up to the configured span, so startup probabilities are
    not artificially suppressed.
    """

    IDLE = "IDLE"
    ACTIVE = "ACTIVE"

    def __init__(self, theta_on: float, theta_off: float, smooth_hops: int):
        if not (0 < theta_off <= theta_on < 1):
            raise ConfigError(f"need 0 < theta_off <= theta_on < 1, got "
                              f"on={theta_on}, off={theta_off}")
        self.theta_on = theta_on
        self.theta_off = theta_off
        self.history: deque = deque(maxlen=smooth_hops)
        self.mode = self.IDLE
        self.smoothed = 0.0
        self.hops_active = 0

    def smooth(self, raw: float) -> float:
        if not 0.0 <= raw <= 1.0:
            raise ConfigError(f"raw probability {raw} outside [0, 1]")
        self.history.append(raw)
        self.smoothed = sum(self.history) / len(self.history)
        return self.smoothed

    def update(self, raw: float) -> str | None:
        """Smooth one raw probability; returns 'gate_on'/'gate_off' on a
        transition, else None."""
        smoothed = self.smooth(raw)
        if self.mode == self.IDLE and smoothed >= self.theta_on:
            self.mode = self.ACTIVE
            self.hops_active = 0
            return "gate_on"
        if self.mode == self.ACTIVE:
            if smoothed < self.theta_off:
                self.mode = self.IDLE
                return "gate_off"
            self.hops_active += 1
        return None


@dataclass(frozen=True)
class PredictionEvent:
    """One event-log record; timestamps are ms since stream start."""

    t_ms: float
    kind: str  # detector | classifier | gate_on | gate_off
    prob: float | None = None
    raw: float | None = None
    class_id: int | None = None
    logits: tuple | None = None
    context: str | None = None

    def to_json_dict(self) -> dict:
        d: dict = {"t_ms": self.t_ms, "kind": self.kind}
        if self.prob is not None:
            d["prob"] = self.prob
        if self.raw is not None:
            d["raw"] = self.raw
        if self.class_id is not None:
            d["class"] = self.class_id
        if self.logits is not None:
            d["logits"] = list(self.logits)
        if self.context is not None:
            d["context"] = self.context
        return d


def event_from_json_dict(d: dict) -> PredictionEvent:
    return PredictionEvent(
        t_ms=float(d["t_ms"]), kind=d["kind"], prob=d.get("prob"), raw=d.get("raw"),
        class_id=d.get("class"),
        logits=tuple(d["logits"]) if "logits" in d else None,
        context=d.get("context"))


def zscore(window: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-channel z-score over the window's own statistics (std floored)."""
    window = np.asarray(window, dtype=np.float32)
    mean = window.mean(axis=0, keepdims=True)
    std = np.maximum(window.std(axis=0, keepdims=True), floor)
    return (window - mean) / std


class Pipeline:
    """Single-stream two-stage engine.

    ``detector`` maps a normalized (6, detector_samples) window to a raw
    event probability; ``classifier`` (optional) maps a normalized
    (classifier_imu_samples, 6) window plus a 1-window audio buffer to
    (class_id, scores).
    """

    def __init__(self, detector, classifier, cfg: PipelineConfig):
        self.detector = detector
        self.classifier = classifier
        self.cfg = cfg
        width = 6
        self._imu = RingBuffer(cfg.detector_samples, width)
        self._audio = RingBuffer(cfg.classifier_audio_samples)
        self.gate = GateSmoother(cfg.theta_on, cfg.theta_off, cfg.smooth_hops)
        self._last_imu_t: float | None = None
        self.max_audio_occupancy = 0

    # -- ingestion ---------------------------------------------------------

    def push_imu(self, t_ms: float, frame) -> None:
        frame = np.asarray(frame, dtype=np.float32)
        if frame.shape != (6,):
            raise StreamError(f"IMU frame must have 6 channels, got {frame.shape}")
        nominal = 1000.0 / self.cfg.imu_rate
        if self._last_imu_t is not None:
            dt = t_ms - self._last_imu_t
            if dt <= 0:
                raise StreamError(f"non-monotone IMU timestamp {t_ms} after {self._last_imu_t}")
            # one missing sample is tolerated; larger gaps are a rate fault
            if dt > 2.0 * nominal + 1e-6:
                raise RateError(f"IMU gap of {dt:.1f} ms exceeds tolerance at t={t_ms}")
        self._last_imu_t = t_ms
        self._imu.push(frame)

    def push_audio(self, samples) -> None:
        # the gate contract: IDLE (or warming-up) audio is dropped unseen
        if self.gate.mode != GateSmoother.ACTIVE:
            return
        if self.gate.hops_active < self.cfg.mic_warmup_hops:
            return
        self._audio.extend(np.asarray(samples, dtype=np.float32).reshape(-1))
        self.max_audio_occupancy = max(self.max_audio_occupancy, len(self._audio))

    @property
    def imu_ready(self) -> bool:
        return self._imu.full

    @property
    def audio_occupancy(self) -> int:
        return len(self._audio)

    # -- per-hop processing --------------------------------------------------

    def tick(self, now_ms: float) -> list[PredictionEvent]:
        if not self._imu.full:
            raise NotReadyError(f"tick at {now_ms} ms before the detector window filled "
                                f"({len(self._imu)}/{self.cfg.detector_samples} samples)")
        events: list[PredictionEvent] = []
        window = self._imu.view()  # (detector_samples, 6)
        raw = float(self.detector(zscore(window).T))
        transition = self.gate.update(raw)
        events.append(PredictionEvent(now_ms, "detector", prob=self.gate.smoothed, raw=raw))
        if transition == "gate_on":
            events.append(PredictionEvent(now_ms, "gate_on", prob=self.gate.smoothed))
        elif transition == "gate_off":
            events.append(PredictionEvent(now_ms, "gate_off", prob=self.gate.smoothed))
            self._audio.clear()
        if (self.classifier is not None
                and self.gate.mode == GateSmoother.ACTIVE
                and self.gate.hops_active >= self.cfg.mic_warmup_hops
                and self._audio.full):
            imu_window = self._imu.view()[-self.cfg.classifier_imu_samples:]
            class_id, scores = self.classifier(zscore(imu_window), self._audio.view())
            events.append(PredictionEvent(
                now_ms, "classifier", class_id=int(class_id),
                logits=tuple(float(v) for v in scores)))
        return events


def run_session(session, bundle, cfg: PipelineConfig,
                detector=None, classifier=None,
                telemetry: dict | None = None) -> list[PredictionEvent]:
    """Replay a recorded session through the pipeline, ticking every hop.

    ``bundle`` is a loaded ModelBundle; pass explicit ``detector``/
    ``classifier`` callables to override (used by synthetic-probe tests).
    Classifier events are tagged with the context of the label interval
    containing the tick (trailing-edge membership), purely as evaluation
    metadata. A ``telemetry`` dict, when given, receives buffer statistics.
    Deterministic: same inputs give an identical event log.
    """
    if detector is None:
        detector = bundle.detector_fn
    if classifier is None and bundle is not None:
        classifier = bundle.classifier_fn
    if session.audio_rate != cfg.audio_rate:
        raise RateError(f"session audio at {session.audio_rate} Hz, pipeline expects "
                        f"{cfg.audio_rate} Hz")
    if session.imu_rate != cfg.imu_rate:
        raise RateError(f"session IMU at {session.imu_rate} Hz, pipeline expects "
                        f"{cfg.imu_rate} Hz")
    pipe = Pipeline(detector, classifier, cfg)
    events: list[PredictionEvent] = []
    n_imu = len(session.imu_t)
    if n_imu == 0:
        return events
    end_ms = float(session.imu_t[-1]) + 1000.0 / cfg.imu_rate
    hop = cfg.hop_ms
    n_hops = int(end_ms / hop)
    audio_per_hop = cfg.audio_samples_per_hop
    imu_idx = 0
    for k in range(1, n_hops + 1):
        boundary = k * hop
        while imu_idx < n_imu and session.imu_t[imu_idx] < boundary:
            pipe.push_imu(float(session.imu_t[imu_idx]), session.imu[imu_idx])
            imu_idx += 1
        chunk = session.audio[(k - 1) * audio_per_hop:k * audio_per_hop]
        if chunk.size:
            pipe.push_audio(chunk)
        if pipe.imu_ready:
            for ev in pipe.tick(boundary):
                if ev.kind == "classifier":
                    ev = PredictionEvent(ev.t_ms, ev.kind, class_id=ev.class_id,
                                         logits=ev.logits,
                                         context=session.context_at(ev.t_ms))
                events.append(ev)
    if telemetry is not None:
        telemetry["max_audio_occupancy"] = pipe.max_audio_occupancy
    return events


def events_to_jsonl(events, meta: dict | None = None) -> str:
    """Line-delimited JSON rendering of an event log.

    The first line is an optional meta record (kind \"meta\") carrying the
    label vocabulary and run configuration so downstream evaluation needs
    no second input.
    """
    lines = []
    if meta is not None:
        lines.append(json.dumps({"kind": "meta", **meta}, sort_keys=True))
    for ev in events:
        lines.append(json.dumps(ev.to_json_dict(), sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_jsonl(text: str) -> tuple[dict | None, list[PredictionEvent]]:
    meta = None
    events = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        if d.get("kind") == "meta":
            meta = d
        else:
            events.append(event_from_json_dict(d))
    return meta, events
