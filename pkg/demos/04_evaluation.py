"""Scoring a replay: F1, context-wise accuracy, reaction latencies, timing.

Replays two labeled sessions, merges their evaluation (the same reduction
the CLI uses), and benchmarks single-window processing time.

Run:  python3 demos/04_evaluation.py
"""

import json

from whar.harness.bench import bench_latency
from whar.harness.fixtures import gen_fixtures
from whar.harness.metrics import evaluate_sessions
from whar.models import ModelBundle
from whar.presets import PRESETS
from whar.stream import PipelineConfig, run_session


def main():
    fixtures = gen_fixtures(seed=42, preset_name="samosa-1k")
    bundle = ModelBundle.from_archive(fixtures.energy_archive)
    cfg = PipelineConfig()

    items = []
    for session in (fixtures.sessions[0], fixtures.sessions[2]):
        print(f"replaying {session.name} "
              f"({session.duration_ms / 1000:.0f} s, {len(session.labels)} labels)")
        items.append((run_session(session, bundle, cfg), session))

    report = evaluate_sessions(items, bundle.class_names, bundle.contexts,
                               flops=bundle.classifier.flops)
    print("\n" + report.summary_line())
    print("\nfull report (the same JSON `whar eval` writes):")
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))

    print("\nnote: the classifier here carries random weights, so class-level "
          "scores are chance; the detector, gate timing and miss accounting "
          "are the meaningful parts.")

    print("\n== single-window processing time ==")
    result = bench_latency(bundle, PRESETS["samosa-1k"], n_iters=50, warmup=5)
    for part in ("detector", "classifier"):
        stats = result[part]
        print(f"{part:<11} mean {stats['mean_ms']:7.2f} ms  p95 {stats['p95_ms']:7.2f} ms"
              f"  ({stats['flops'] / 1e9:.3f} GFLOPs)")


if __name__ == "__main__":
    main()
