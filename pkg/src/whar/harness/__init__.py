"""Evaluation harness: session ingestion, metrics, fixtures, benchmarks."""

from .bench import bench_latency
from .fixtures import Fixtures, gen_fixtures, write_fixtures
from .metrics import (
    EvalReport,
    binary_f1,
    confusion_matrix,
    context_accuracy,
    evaluate_log,
    evaluate_sessions,
    onset_offset_latency,
    weighted_f1,
)
from .sessions import LabeledSession, LabelInterval, load_session, save_session

__all__ = [
    "EvalReport",
    "Fixtures",
    "LabelInterval",
    "LabeledSession",
    "bench_latency",
    "binary_f1",
    "confusion_matrix",
    "context_accuracy",
    "evaluate_log",
    "evaluate_sessions",
    "gen_fixtures",
    "load_session",
    "onset_offset_latency",
    "save_session",
    "weighted_f1",
    "write_fixtures",
]
