"""Checkpoint conversion and parity-fixture emission.

The exporter owns every training-ecosystem detail (torch tensors, module
naming, batchnorm statistics); the inference engine only ever sees the
archive file and the fixture directory this module writes.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .namemap import Rule, required_entries
from .torch_models import TorchClassifier, TorchEventDetector
from .writer import quantize_f16, write_whar


class MappingError(Exception):
    """Name map does not cover the checkpoint/config pair."""


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def _apply_rule(rule: Rule, state: dict) -> np.ndarray:
    arr = None
    if rule.source is not None:
        if rule.source not in state:
            raise MappingError(f"checkpoint has no parameter {rule.source!r}")
        arr = _to_numpy(state[rule.source])
        if rule.transpose is not None:
            arr = arr.transpose(rule.transpose)
        if rule.reshape is not None:
            arr = arr.reshape(rule.reshape)
    if rule.fold_bn is None:
        if arr is None:
            raise MappingError(f"rule for {rule.target!r} has neither a source nor "
                               f"a batchnorm to synthesize from")
        return arr
    missing = [f"{rule.fold_bn}.{leaf}" for leaf in
               ("weight", "bias", "running_mean", "running_var")
               if f"{rule.fold_bn}.{leaf}" not in state]
    if missing:
        raise MappingError(f"checkpoint is missing batchnorm parameters {missing}")
    gamma = _to_numpy(state[f"{rule.fold_bn}.weight"])
    beta = _to_numpy(state[f"{rule.fold_bn}.bias"])
    mean = _to_numpy(state[f"{rule.fold_bn}.running_mean"])
    var = _to_numpy(state[f"{rule.fold_bn}.running_var"])
    scale = gamma / np.sqrt(var + np.float32(rule.eps))
    role = rule.resolved_role()
    if role == "weight":
        return arr * scale.reshape((-1,) + (1,) * (arr.ndim - 1))
    if role == "bias":
        if arr is None:
            arr = np.zeros_like(beta)
        return beta + (arr - mean) * scale
    raise MappingError(f"rule for {rule.target!r}: cannot infer fold role from "
                       f"source {rule.source!r}; set role explicitly")


def convert_state_dict(state: dict, rules: list[Rule], config: dict) -> dict[str, np.ndarray]:
    """Apply the name map; verify every required entry is produced once."""
    entries: dict[str, np.ndarray] = {}
    for rule in rules:
        if rule.target in entries:
            raise MappingError(f"entry {rule.target!r} produced more than once")
        entries[rule.target] = _apply_rule(rule, state)
    required = required_entries(config)
    missing = [name for name in required if name not in entries]
    if missing:
        raise MappingError(f"name map leaves required entries unmapped: {missing}")
    extra = [name for name in entries if name not in set(required)]
    if extra:
        raise MappingError(f"name map produces entries the config never uses: {extra}")
    # archive order follows the config's requirement order
    return {name: entries[name] for name in required}


def export_checkpoint(ckpt_path, rules: list[Rule], out_archive_path, config: dict,
                      quantize: bool = False) -> dict:
    """Checkpoint file + rules + config -> engine archive on disk.

    Returns a summary dict (entry count, payload bytes, dtype).
    """
    state = torch.load(ckpt_path, map_location="cpu", weights_only=True)
    entries = convert_state_dict(state, rules, config)
    if quantize:
        entries = {name: quantize_f16(arr, name) for name, arr in entries.items()}
    write_whar(entries, json.dumps(config, sort_keys=True), out_archive_path)
    payload = sum(arr.nbytes for arr in entries.values())
    return {"entries": len(entries), "payload_bytes": payload,
            "dtype": "f16" if quantize else "f32",
            "archive": str(out_archive_path)}


def _zscore(window: np.ndarray) -> np.ndarray:
    mean = window.mean(axis=0, keepdims=True)
    std = np.maximum(window.std(axis=0, keepdims=True), 1e-6)
    return ((window - mean) / std).astype(np.float32)


def _write_case_tensor(out_dir, name, arr: np.ndarray) -> dict:
    path = os.path.join(out_dir, name)
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(arr.astype("<f4").tobytes(order="C"))
    return {"file": name, "dtype": "f32", "shape": list(arr.shape)}


def emit_parity_fixtures(ckpt_path, config: dict, out_dir, n_cases: int = 10,
                         seed: int = 0, tolerance: float = 1e-4) -> dict:
    """Write (input, training-side output) pairs for both models.

    The fixture index embeds the full model config (frontend included) so
    the consuming stack runs identical STFT/mel parameters. Inputs are
    stored model-ready: IMU windows already z-scored, waveforms raw.
    """
    os.makedirs(out_dir, exist_ok=True)
    state = torch.load(ckpt_path, map_location="cpu", weights_only=True)
    detector = TorchEventDetector(config)
    classifier = TorchClassifier(config)
    det_state = {k[len("detector."):]: v for k, v in state.items()
                 if k.startswith("detector.")}
    clf_state = {k[len("classifier."):]: v for k, v in state.items()
                 if k.startswith("classifier.")}
    detector.load_state_dict(det_state)
    classifier.load_state_dict(clf_state)
    detector.eval()
    classifier.eval()

    rng = np.random.default_rng(seed)
    d = config["event_detector"]
    t_imu = config["imu_encoder"]["window_samples"]
    n_wave = config["audio_frontend"]["window_samples"]
    cases = []
    with torch.no_grad():
        for i in range(n_cases):
            window = _zscore(rng.normal(size=(d["input_len"], d["in_channels"]))).T
            prob = detector(torch.from_numpy(window[None].copy()))
            cases.append({
                "model": "detector",
                "inputs": {"window": _write_case_tensor(out_dir, f"det{i:03d}_window.bin",
                                                        window)},
                "outputs": {"prob": _write_case_tensor(out_dir, f"det{i:03d}_prob.bin",
                                                       prob.numpy())},
            })
        for i in range(n_cases):
            imu = _zscore(rng.normal(size=(t_imu, 6)))
            wave = (0.2 * rng.normal(size=n_wave)).astype(np.float32)
            logits = classifier(torch.from_numpy(imu[None, None].copy()),
                                torch.from_numpy(wave[None].copy()))
            cases.append({
                "model": "classifier",
                "inputs": {"imu": _write_case_tensor(out_dir, f"clf{i:03d}_imu.bin", imu),
                           "wave": _write_case_tensor(out_dir, f"clf{i:03d}_wave.bin",
                                                      wave)},
                "outputs": {"logits": _write_case_tensor(out_dir, f"clf{i:03d}_logits.bin",
                                                         logits.numpy()[0])},
            })
    index = {"config": config, "tolerance": tolerance, "seed": seed, "cases": cases}
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


def read_case_tensor(fixture_dir, spec: dict) -> np.ndarray:
    raw = open(os.path.join(fixture_dir, spec["file"]), "rb").read()
    return np.frombuffer(raw, dtype="<f4").reshape(spec["shape"]).copy()
