"""Metric computation over event logs and labeled sessions.

Per-hop semantics throughout: the detector's prediction for a hop is the
gate state after processing it (ACTIVE between a gate_on and the next
gate_off), and a hop's ground truth is trailing-edge interval membership
(start < t <= end). Classifier hops pair each classifier event with the
label interval containing its tick; predictions fired outside any labeled
interval have no ground-truth class and are tallied separately.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

log = logging.getLogger(__name__)

THREADS_ENV = "WATCHHAR_THREADS"


def _check_lengths(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} must be "
                         f"equal-length vectors")
    return pred, truth


def binary_f1(pred, truth) -> float:
    """2PR/(P+R) over boolean vectors; defined 0 when P + R == 0."""
    pred, truth = _check_lengths(pred, truth)
    pred = pred.astype(bool)
    truth = truth.astype(bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def weighted_f1(pred, truth, n_classes: int | None = None) -> float:
    """Support-weighted mean of per-class one-vs-rest F1 scores."""
    pred, truth = _check_lengths(pred, truth)
    if truth.size == 0:
        return 0.0
    if n_classes is None:
        n_classes = int(max(pred.max(initial=0), truth.max(initial=0))) + 1
    total = 0.0
    for c in range(n_classes):
        support = int(np.sum(truth == c))
        if support == 0:
            continue
        total += support * binary_f1(pred == c, truth == c)
    return total / truth.size


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    """Counts indexed [truth, pred]; row sums equal per-class supports."""
    pred, truth = _check_lengths(pred, truth)
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (truth.astype(int), pred.astype(int)), 1)
    return out


def pooled_accuracy(pred, truth) -> float:
    pred, truth = _check_lengths(pred, truth)
    return float(np.mean(pred == truth)) if truth.size else 0.0


def context_accuracy(pred, truth, contexts, all_contexts=None):
    """Accuracy within each context plus their unweighted mean.

    The mean deliberately weights every context equally (kitchen with ten
    windows counts as much as workshop with a thousand), which is not the
    pooled accuracy. Expected contexts without samples are excluded with a
    warning.
    """
    pred, truth = _check_lengths(pred, truth)
    contexts = list(contexts)
    if len(contexts) != len(pred):
        raise ShapeError(f"{len(contexts)} context tags for {len(pred)} samples")
    per: dict[str, float] = {}
    for ctx in sorted(set(contexts)):
        idx = [i for i, c in enumerate(contexts) if c == ctx]
        per[ctx] = float(np.mean(pred[idx] == truth[idx]))
    if all_contexts:
        for ctx in all_contexts:
            if ctx not in per:
                log.warning("context %r has no samples; excluded from the mean", ctx)
    mean = float(np.mean(list(per.values()))) if per else None
    return per, mean


# ---------------------------------------------------------------------------
# event-log alignment


def gate_intervals(events) -> list[tuple[float, float]]:
    """[gate_on, gate_off) spans from an event log; an unmatched trailing
    gate_on extends to +inf."""
    spans = []
    t_on = None
    for ev in events:
        if ev.kind == "gate_on":
            t_on = ev.t_ms
        elif ev.kind == "gate_off" and t_on is not None:
            spans.append((t_on, ev.t_ms))
            t_on = None
    if t_on is not None:
        spans.append((t_on, float("inf")))
    return spans


def detector_hop_vectors(events, labels):
    """(pred, truth) booleans over the log's detector hops."""
    hops = [ev.t_ms for ev in events if ev.kind == "detector"]
    spans = gate_intervals(events)
    pred = np.array([any(a <= t < b for a, b in spans) for t in hops], dtype=bool)
    truth = np.array([any(l.contains_hop(t) for l in labels) for t in hops], dtype=bool)
    return pred, truth


@dataclass
class LatencyResult:
    onset_s: float | None
    offset_s: float | None
    miss_count: int
    onsets: list = field(default_factory=list)
    offsets: list = field(default_factory=list)


def onset_offset_latency(events, labels) -> LatencyResult:
    """Mean gate reaction times against labeled intervals.

    Onset: first gate_on at or after the interval start (and before the
    next interval begins). Offset: first gate_off after the interval end.
    Intervals that never trigger the gate are excluded from the means and
    counted as misses.
    """
    ons = sorted(ev.t_ms for ev in events if ev.kind == "gate_on")
    offs = sorted(ev.t_ms for ev in events if ev.kind == "gate_off")
    ordered = sorted(labels, key=lambda l: l.start_ms)
    onsets, offsets = [], []
    misses = 0
    for i, lab in enumerate(ordered):
        horizon = ordered[i + 1].start_ms if i + 1 < len(ordered) else float("inf")
        hit = next((t for t in ons if lab.start_ms <= t < horizon), None)
        if hit is None:
            misses += 1
            continue
        onsets.append((hit - lab.start_ms) / 1000.0)
        release = next((t for t in offs if t > lab.end_ms), None)
        if release is not None:
            offsets.append((release - lab.end_ms) / 1000.0)
    return LatencyResult(
        onset_s=float(np.mean(onsets)) if onsets else None,
        offset_s=float(np.mean(offsets)) if offsets else None,
        miss_count=misses, onsets=onsets, offsets=offsets)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    f1_binary: float
    f1_weighted: float
    context_accuracy: dict
    context_accuracy_mean: float | None
    pooled_accuracy: float
    onset_s: float | None
    offset_s: float | None
    miss_count: int
    confusion: list
    flops: int | None = None
    latency_ms: dict | None = None
    n_hops: int = 0
    n_classifier_events: int = 0
    n_unlabeled_predictions: int = 0

    def __post_init__(self):
        fractions = [self.f1_binary, self.f1_weighted, self.pooled_accuracy,
                     *self.context_accuracy.values()]
        if self.context_accuracy_mean is not None:
            fractions.append(self.context_accuracy_mean)
        for v in fractions:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric fraction {v} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "f1_binary": self.f1_binary,
            "f1_weighted": self.f1_weighted,
            "context_accuracy": {"per_context": self.context_accuracy,
                                 "mean": self.context_accuracy_mean},
            "pooled_accuracy": self.pooled_accuracy,
            "onset_s": self.onset_s,
            "offset_s": self.offset_s,
            "miss_count": self.miss_count,
            "confusion": self.confusion,
            "flops": self.flops,
            "latency_ms": self.latency_ms,
            "n_hops": self.n_hops,
            "n_classifier_events": self.n_classifier_events,
            "n_unlabeled_predictions": self.n_unlabeled_predictions,
        }

    def summary_line(self) -> str:
        ca = ("n/a" if self.context_accuracy_mean is None
              else f"{100 * self.context_accuracy_mean:.2f}%")
        onset = "n/a" if self.onset_s is None else f"{self.onset_s:.2f}s"
        offset = "n/a" if self.offset_s is None else f"{self.offset_s:.2f}s"
        return (f"F1(binary)={100 * self.f1_binary:.2f}%  "
                f"F1(weighted)={100 * self.f1_weighted:.2f}%  "
                f"ctx-acc={ca}  onset={onset}  offset={offset}  "
                f"misses={self.miss_count}")


@dataclass
class _SessionVectors:
    name: str
    det_pred: np.ndarray
    det_truth: np.ndarray
    cls_pred: list
    cls_truth: list
    cls_contexts: list
    onsets: list
    offsets: list
    misses: int
    n_unlabeled: int


def _session_vectors(events, session, class_names) -> _SessionVectors:
    det_pred, det_truth = detector_hop_vectors(events, session.labels)
    class_ids = {name: i for i, name in enumerate(class_names)}
    cls_pred, cls_truth, cls_ctx = [], [], []
    unlabeled = 0
    for ev in events:
        if ev.kind != "classifier":
            continue
        lab = session.label_at(ev.t_ms)
        if lab is None:
            unlabeled += 1
            continue
        cls_pred.append(int(ev.class_id))
        cls_truth.append(class_ids[lab.class_name])
        cls_ctx.append(lab.context)
    lat = onset_offset_latency(events, session.labels)
    return _SessionVectors(session.name, det_pred, det_truth, cls_pred, cls_truth,
                           cls_ctx, lat.onsets, lat.offsets, lat.miss_count, unlabeled)


def evaluate_log(events, session, class_names, contexts=None,
                 flops: int | None = None, latency_ms: dict | None = None) -> EvalReport:
    """Score one replayed session's event log against its labels."""
    return evaluate_sessions([(events, session)], class_names, contexts,
                             flops=flops, latency_ms=latency_ms)


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return min(8, os.cpu_count() or 1)


def evaluate_sessions(items, class_names, contexts=None, flops=None,
                      latency_ms=None) -> EvalReport:
    """Merge (events, session) pairs into one report.

    Sessions are scored independently (in parallel, capped by the
    WATCHHAR_THREADS environment variable) and reduced order-independently:
    vectors are concatenated in sorted session-name order before the
    metrics are computed once.
    """
    items = list(items)
    workers = min(_thread_count(), max(1, len(items)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        vectors = list(pool.map(
            lambda pair: _session_vectors(pair[0], pair[1], class_names), items))
    vectors.sort(key=lambda v: v.name)
    det_pred = np.concatenate([v.det_pred for v in vectors]) if vectors else np.zeros(0, bool)
    det_truth = np.concatenate([v.det_truth for v in vectors]) if vectors else np.zeros(0, bool)
    cls_pred = np.array(sum((v.cls_pred for v in vectors), []), dtype=int)
    cls_truth = np.array(sum((v.cls_truth for v in vectors), []), dtype=int)
    cls_ctx = sum((v.cls_contexts for v in vectors), [])
    onsets = sum((v.onsets for v in vectors), [])
    offsets = sum((v.offsets for v in vectors), [])
    misses = sum(v.misses for v in vectors)
    unlabeled = sum(v.n_unlabeled for v in vectors)
    n_classes = max(len(class_names), 2)
    per_ctx, ctx_mean = context_accuracy(cls_pred, cls_truth, cls_ctx, contexts)
    return EvalReport(
        f1_binary=binary_f1(det_pred, det_truth),
        f1_weighted=weighted_f1(cls_pred, cls_truth, n_classes),
        context_accuracy=per_ctx,
        context_accuracy_mean=ctx_mean,
        pooled_accuracy=pooled_accuracy(cls_pred, cls_truth),
        onset_s=float(np.mean(onsets)) if onsets else None,
        offset_s=float(np.mean(offsets)) if offsets else None,
        miss_count=misses,
        confusion=confusion_matrix(cls_pred, cls_truth, n_classes).tolist(),
        flops=flops,
        latency_ms=latency_ms,
        n_hops=int(det_pred.size),
        n_classifier_events=int(cls_pred.size) + unlabeled,
        n_unlabeled_predictions=unlabeled,
    )
