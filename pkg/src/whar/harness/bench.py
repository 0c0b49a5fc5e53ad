"""Wall-clock benchmarks of single-window passes.

Timed exactly as deployed: the detector pass includes z-score
normalization, the classifier pass runs from log-mel generation through
the fused prediction. Detector and classifier are reported separately.
"""

from __future__ import annotations

import time

import numpy as np

from ..errors import ConfigError
from ..stream import zscore


def _stats_ms(samples) -> dict:
    arr = np.asarray(samples, dtype=np.float64) * 1000.0
    return {
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


def _time_fn(fn, inputs, n_iters, warmup):
    for i in range(warmup):
        fn(*inputs[i % len(inputs)])
    samples = []
    for i in range(n_iters):
        args = inputs[i % len(inputs)]
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return _stats_ms(samples)


def bench_latency(bundle, preset, n_iters: int = 100, warmup: int = 10,
                  seed: int = 0) -> dict:
    """Latency statistics (ms) for the detector and classifier stages."""
    if n_iters < 30:
        raise ConfigError(f"n_iters must be >= 30, got {n_iters}")
    if warmup < 5:
        raise ConfigError(f"warmup must be >= 5, got {warmup}")
    rng = np.random.default_rng(seed)
    out: dict = {"iters": n_iters, "warmup": warmup, "preset": preset.name}
    if bundle.detector is not None:
        det_cfg = bundle.detector.cfg
        windows = [rng.normal(size=(det_cfg.input_len, det_cfg.in_channels))
                   .astype(np.float32) for _ in range(8)]
        det = bundle.detector
        stats = _time_fn(lambda w: det.forward(zscore(w).T), [(w,) for w in windows],
                         n_iters, warmup)
        stats["flops"] = det.flops
        out["detector"] = stats
    if bundle.classifier is not None:
        clf = bundle.classifier
        t_imu = clf.imu_encoder.cfg.window_samples
        n_wave = clf.frontend.cfg.window_samples
        cases = [(rng.normal(size=(t_imu, 6)).astype(np.float32),
                  (0.1 * rng.normal(size=n_wave)).astype(np.float32))
                 for _ in range(8)]
        stats = _time_fn(lambda imu, wave: clf.forward(zscore(imu), wave),
                         cases, n_iters, warmup)
        stats["flops"] = clf.flops
        out["classifier"] = stats
    return out
