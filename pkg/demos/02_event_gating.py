"""Two-stage gating in action.

Replays a synthetic session with one planted high-motion segment through
the hand-built energy-detector archive and prints the gate timeline: the
microphone stays off (audio discarded) until the smoothed detector output
crosses the threshold.

Run:  python3 demos/02_event_gating.py
"""

from whar.harness.fixtures import gen_fixtures
from whar.models import ModelBundle
from whar.stream import PipelineConfig, run_session


def main():
    fixtures = gen_fixtures(seed=42, preset_name="samosa-1k")
    session = fixtures.sessions[0]
    label = session.labels[0]
    print(f"session {session.name}: {session.duration_ms / 1000:.0f} s, planted "
          f"'{label.class_name}' segment at "
          f"[{label.start_ms / 1000:.1f}, {label.end_ms / 1000:.1f}] s")

    bundle = ModelBundle.from_archive(fixtures.energy_archive)
    cfg = PipelineConfig()
    telemetry = {}
    events = run_session(session, bundle, cfg, telemetry=telemetry)

    print(f"\n{len(events)} events; smoothed detector probability every "
          f"{cfg.hop_ms:.0f} ms hop:")
    last_second = -1.0
    for ev in events:
        if ev.kind == "detector" and ev.t_ms % 1000 == 0:
            bar = "#" * int(40 * ev.prob)
            print(f"  {ev.t_ms / 1000:5.1f} s  p={ev.prob:5.3f} {bar}")
        elif ev.kind in ("gate_on", "gate_off"):
            print(f"  {ev.t_ms / 1000:5.1f} s  >>> {ev.kind.upper()} "
                  f"(smoothed {ev.prob:.3f})")
            last_second = ev.t_ms
    n_cls = sum(1 for ev in events if ev.kind == "classifier")
    inside = [ev for ev in events if ev.kind == "classifier"]
    print(f"\nclassifier ran {n_cls} times, only between gate_on and gate_off "
          f"({inside[0].t_ms / 1000:.1f} .. {inside[-1].t_ms / 1000:.1f} s)")
    print(f"peak audio buffer occupancy: {telemetry['max_audio_occupancy']} samples "
          f"(capacity {cfg.classifier_audio_samples})")

    print("\nreplaying the all-idle session:")
    telemetry = {}
    idle_events = run_session(fixtures.sessions[2], bundle, cfg, telemetry=telemetry)
    kinds = {ev.kind for ev in idle_events}
    print(f"  event kinds seen: {sorted(kinds)}; "
          f"audio buffered: {telemetry['max_audio_occupancy']} samples "
          f"(microphone never powered)")


if __name__ == "__main__":
    main()
