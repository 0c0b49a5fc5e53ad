"""Operator entry point: replay, evaluate, benchmark, fixtures, inspect.

Exit codes are a stable CI contract: 0 success, 1 internal error,
2 missing input, 3 inconsistent input (bad config, mismatched sessions,
corrupt archives). Presets bundle sample rates with frontend geometry so a
run cannot mix rates. The WATCHHAR_THREADS environment variable caps
evaluation parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .archive import read_archive
from .errors import WharError
from .harness.bench import bench_latency
from .harness.fixtures import gen_fixtures, write_fixtures
from .harness.metrics import evaluate_sessions
from .harness.sessions import load_labels, load_session, session_stem
from .models import ModelBundle
from .presets import PRESETS, get_preset
from .stream import PipelineConfig, events_to_jsonl, parse_jsonl, run_session

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_MISSING_INPUT = 2
EXIT_INCONSISTENT = 3


def _pipeline_config(preset, args) -> PipelineConfig:
    return PipelineConfig(
        imu_rate=preset.imu_rate,
        audio_rate=preset.audio_rate,
        classifier_window_s=preset.classifier_window_s,
        hop_ms=args.hop_ms,
        smooth_s=args.smooth_s,
        theta_on=args.theta_on,
        theta_off=args.theta_off,
    )


def _require(path, what: str):
    if path is None:
        raise FileNotFoundError(f"no {what} given")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_bundle(args):
    archive = read_archive(_require(args.model, "model archive"))
    return archive, ModelBundle.from_archive(archive)


def cmd_run(args) -> int:
    preset = get_preset(args.preset)
    cfg = _pipeline_config(preset, args)  # config errors precede any file IO
    archive, bundle = _load_bundle(args)
    frontend = archive.config_dict.get("audio_frontend")
    if frontend and frontend["sample_rate"] != preset.audio_rate:
        raise WharError(f"model frontend expects {frontend['sample_rate']} Hz audio "
                        f"but preset {preset.name} delivers {preset.audio_rate} Hz")
    session = load_session(_require(args.imu, "IMU file"),
                           _require(args.wav, "WAV file"),
                           _require(args.labels, "labels file") if args.labels else None,
                           expected_audio_rate=preset.audio_rate,
                           class_names=bundle.class_names if args.labels else None)
    telemetry: dict = {}
    events = run_session(session, bundle, cfg, telemetry=telemetry)
    meta = {
        "session": session.name,
        "preset": preset.name,
        "class_names": bundle.class_names,
        "contexts": bundle.contexts,
        "theta_on": cfg.theta_on,
        "theta_off": cfg.theta_off,
        "hop_ms": cfg.hop_ms,
        "smooth_s": cfg.smooth_s,
        "flops_detector": bundle.detector.flops if bundle.detector else None,
        "flops_classifier": bundle.classifier.flops if bundle.classifier else None,
        "max_audio_occupancy": telemetry.get("max_audio_occupancy", 0),
    }
    out = args.out or f"{session.name}.jsonl"
    with open(out, "w") as fh:
        fh.write(events_to_jsonl(events, meta=meta))
    n_gates = sum(1 for ev in events if ev.kind == "gate_on")
    n_cls = sum(1 for ev in events if ev.kind == "classifier")
    print(f"{session.name}: {len(events)} events ({n_gates} gate activations, "
          f"{n_cls} classifications) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    logs = args.log or []
    label_files = args.labels_multi or []
    if not logs:
        raise FileNotFoundError("no event log given")
    if len(logs) != len(label_files):
        raise WharError(f"{len(logs)} logs but {len(label_files)} label files")
    items = []
    class_names, contexts, flops = None, None, None
    for log_path, labels_path in zip(logs, label_files):
        meta, events = parse_jsonl(open(_require(log_path, "event log")).read())
        if meta is None:
            raise WharError(f"{log_path}: no meta record; was it produced by 'run'?")
        labels = load_labels(_require(labels_path, "labels file"))
        if meta.get("session") != labels.name:
            raise WharError(f"session id mismatch: log {log_path} is for "
                            f"{meta.get('session')!r}, labels are {labels.name!r}")
        class_names = meta["class_names"]
        contexts = meta.get("contexts")
        flops = meta.get("flops_classifier")
        items.append((events, labels))
    report = evaluate_sessions(items, class_names, contexts, flops=flops)
    out = args.out or f"{session_stem(logs[0])}.report.json"
    with open(out, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.summary_line())
    print(f"report -> {out}")
    return EXIT_OK


def _print_bench_row(name: str, stats: dict) -> None:
    gflops = stats["flops"] / 1e9
    print(f"  {name:<11} mean {stats['mean_ms']:8.3f} ms   p50 {stats['p50_ms']:8.3f} ms"
          f"   p95 {stats['p95_ms']:8.3f} ms   {gflops:.3f} GFLOPs")


def cmd_bench(args) -> int:
    preset = get_preset(args.preset)
    _, bundle = _load_bundle(args)
    result = bench_latency(bundle, preset, n_iters=args.iters, warmup=args.warmup,
                           seed=args.seed)
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"single-window processing time ({args.iters} iters, preset {preset.name}):")
    if "detector" in result:
        _print_bench_row("detector", result["detector"])
    if "classifier" in result:
        _print_bench_row("classifier", result["classifier"])
    return EXIT_OK


def cmd_fixtures(args) -> int:
    if args.out is None:
        raise FileNotFoundError("no output directory given")
    fixtures = gen_fixtures(seed=args.seed, preset_name=args.preset)
    manifest = write_fixtures(fixtures, args.out)
    print(f"wrote {len(manifest['files'])} files to {args.out} "
          f"(seed {args.seed}, preset {args.preset})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    archive = read_archive(_require(args.model, "model archive"))
    cfg = archive.config_dict
    print(f"archive version {archive.version}, {len(archive.entries)} entries, "
          f"{archive.payload_nbytes()} payload bytes")
    print(f"config sections: {', '.join(sorted(cfg))}")
    if "class_names" in cfg:
        print(f"classes: {', '.join(cfg['class_names'])}")
    models = []
    bundle = ModelBundle.from_archive(archive)
    if bundle.detector is not None:
        models.append(("event detector", bundle.detector.flops))
    if bundle.classifier is not None:
        models.append(("activity classifier", bundle.classifier.flops))
    for name, flops in models:
        print(f"{name}: {flops / 1e9:.3f} GFLOPs")
    for name, tensor in archive.entries.items():
        shape = "x".join(str(d) for d in tensor.shape) or "scalar"
        print(f"  {name:<40} {tensor.dtype}  {shape}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whar",
        description="Event-gated multimodal activity recognition engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--preset", default="samosa-1k", choices=sorted(PRESETS),
                       help="sample-rate/window bundle")
        p.add_argument("--seed", type=int, default=42)

    run = sub.add_parser("run", help="replay a session, writing an event log")
    run.add_argument("--model", help="weight archive (.whar)")
    run.add_argument("--imu", help="IMU CSV")
    run.add_argument("--wav", help="mono PCM16 WAV")
    run.add_argument("--labels", help="labels CSV (optional, tags contexts)")
    run.add_argument("--theta-on", type=float, default=0.5)
    run.add_argument("--theta-off", type=float, default=0.5)
    run.add_argument("--hop-ms", type=float, default=20.0)
    run.add_argument("--smooth-s", type=float, default=2.0)
    run.add_argument("--out", help="event log path (.jsonl)")
    add_common(run)
    run.set_defaults(fn=cmd_run)

    ev = sub.add_parser("eval", help="score event logs against labels")
    ev.add_argument("--log", action="append", help="event log (repeatable)")
    ev.add_argument("--labels", action="append", dest="labels_multi",
                    help="labels CSV, one per --log")
    ev.add_argument("--out", help="report JSON path")
    add_common(ev)
    ev.set_defaults(fn=cmd_eval)

    bench = sub.add_parser("bench", help="time single-window passes")
    bench.add_argument("--model", help="weight archive (.whar)")
    bench.add_argument("--iters", type=int, default=100)
    bench.add_argument("--warmup", type=int, default=10)
    bench.add_argument("--json", action="store_true", help="machine-readable output")
    add_common(bench)
    bench.set_defaults(fn=cmd_bench)

    fx = sub.add_parser("fixtures", help="generate deterministic archives + sessions")
    fx.add_argument("--out", help="output directory")
    add_common(fx)
    fx.set_defaults(fn=cmd_fixtures)

    ins = sub.add_parser("inspect", help="summarize a weight archive")
    ins.add_argument("--model", help="weight archive (.whar)")
    add_common(ins)
    ins.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except WharError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
