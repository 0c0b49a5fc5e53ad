"""Name-mapping rules: checkpoint parameter -> archive entry.

A rule renames one tensor and may transform it on the way:

    - {from: classifier.fusion.head.weight, to: fusion/head_w}
    - {from: encoder.fc.weight, to: imu_encoder/fc0_w, transpose: [1, 0]}
    - {from: classifier.audio_encoder.stem.weight, to: audio_encoder/stem_w,
       fold_bn: classifier.audio_encoder.stem_bn}
    - {to: audio_encoder/stem_b, fold_bn: classifier.audio_encoder.stem_bn,
       role: bias}

``fold_bn`` names a batchnorm module whose running statistics are fused
into the mapped weight (role "weight") or bias (role "bias"; the rule may
omit ``from`` entirely when the conv has no bias of its own). The role is
inferred from the source suffix when not given.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml


@dataclass(frozen=True)
class Rule:
    target: str
    source: str | None = None
    transpose: tuple | None = None
    reshape: tuple | None = None
    fold_bn: str | None = None
    role: str | None = None
    eps: float = 1e-5

    def resolved_role(self) -> str | None:
        if self.role is not None:
            return self.role
        if self.source is None:
            return None
        if self.source.endswith(".weight"):
            return "weight"
        if self.source.endswith(".bias"):
            return "bias"
        return None


def load_name_map(path) -> list[Rule]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    rules = []
    for entry in doc["rules"]:
        rules.append(Rule(
            target=entry["to"],
            source=entry.get("from"),
            transpose=tuple(entry["transpose"]) if "transpose" in entry else None,
            reshape=tuple(entry["reshape"]) if "reshape" in entry else None,
            fold_bn=entry.get("fold_bn"),
            role=entry.get("role"),
            eps=float(entry.get("eps", 1e-5)),
        ))
    return rules


def write_name_map(rules: list[Rule], path) -> None:
    doc = {"rules": []}
    for r in rules:
        entry: dict = {"to": r.target}
        if r.source is not None:
            entry["from"] = r.source
        if r.transpose is not None:
            entry["transpose"] = list(r.transpose)
        if r.reshape is not None:
            entry["reshape"] = list(r.reshape)
        if r.fold_bn is not None:
            entry["fold_bn"] = r.fold_bn
        if r.role is not None:
            entry["role"] = r.role
        if r.eps != 1e-5:
            entry["eps"] = r.eps
        doc["rules"].append(entry)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def required_entries(config: dict) -> list[str]:
    """Every archive entry the engine's loaders will demand for this config."""
    names: list[str] = []
    if "event_detector" in config:
        d = config["event_detector"]
        for i in range(len(d["channels"])):
            names += [f"event_detector/b{i}/dw_w", f"event_detector/b{i}/dw_b",
                      f"event_detector/b{i}/pw_w", f"event_detector/b{i}/pw_b"]
        for j in range(len(d["head"]) + 1):
            names += [f"event_detector/fc{j}_w", f"event_detector/fc{j}_b"]
    if "imu_encoder" in config:
        d = config["imu_encoder"]
        for i in range(len(d["channels"])):
            names += [f"imu_encoder/conv{i}_w", f"imu_encoder/conv{i}_b"]
        names += ["imu_encoder/fc0_w", "imu_encoder/fc0_b",
                  "imu_encoder/fc1_w", "imu_encoder/fc1_b"]
    if "audio_encoder" in config:
        d = config["audio_encoder"]
        names += ["audio_encoder/stem_w", "audio_encoder/stem_b"]
        c_in = d["stem_channels"]
        for i, b in enumerate(d["blocks"]):
            if b["expand"] != c_in:
                names += [f"audio_encoder/b{i}/expand_w", f"audio_encoder/b{i}/expand_b"]
            names += [f"audio_encoder/b{i}/dw_w", f"audio_encoder/b{i}/dw_b"]
            if b["se"]:
                names += [f"audio_encoder/b{i}/se_w1", f"audio_encoder/b{i}/se_b1",
                          f"audio_encoder/b{i}/se_w2", f"audio_encoder/b{i}/se_b2"]
            names += [f"audio_encoder/b{i}/project_w", f"audio_encoder/b{i}/project_b"]
            c_in = b["out"]
        names += ["audio_encoder/head_w", "audio_encoder/head_b"]
    if "audio_frontend" in config:
        names.append(config["audio_frontend"]["mel_weights"])
        if "mel_bias" in config["audio_frontend"]:
            names.append(config["audio_frontend"]["mel_bias"])
    if "fusion" in config:
        d = config["fusion"]
        names += ["fusion/proj_imu_w", "fusion/proj_imu_b",
                  "fusion/proj_audio_w", "fusion/proj_audio_b"]
        if d["variant"] == "gated":
            names += ["fusion/gate_imu_w", "fusion/gate_imu_b",
                      "fusion/gate_audio_w", "fusion/gate_audio_b",
                      "fusion/fuse_w", "fusion/fuse_b",
                      "fusion/head_w", "fusion/head_b"]
        elif d["variant"] == "concat":
            names += ["fusion/head_w", "fusion/head_b"]
        else:
            names += ["fusion/head_imu_w", "fusion/head_imu_b",
                      "fusion/head_audio_w", "fusion/head_audio_b"]
    return names


def default_name_map(config: dict) -> list[Rule]:
    """Mechanical rules for checkpoints produced by the reference models
    in ``torch_models`` (detector.* / classifier.* prefixes)."""
    rules: list[Rule] = []

    def plain(src, dst):
        rules.append(Rule(target=dst, source=src))

    def folded(src_conv, bn, dst_w, dst_b, conv_has_bias):
        rules.append(Rule(target=dst_w, source=f"{src_conv}.weight", fold_bn=bn))
        if conv_has_bias:
            rules.append(Rule(target=dst_b, source=f"{src_conv}.bias", fold_bn=bn))
        else:
            rules.append(Rule(target=dst_b, fold_bn=bn, role="bias"))

    if "event_detector" in config:
        d = config["event_detector"]
        for i in range(len(d["channels"])):
            base = f"detector.blocks.{i}"
            plain(f"{base}.dw.weight", f"event_detector/b{i}/dw_w")
            plain(f"{base}.dw.bias", f"event_detector/b{i}/dw_b")
            folded(f"{base}.pw", f"{base}.bn",
                   f"event_detector/b{i}/pw_w", f"event_detector/b{i}/pw_b",
                   conv_has_bias=True)
        for j in range(len(d["head"]) + 1):
            plain(f"detector.head.{j}.weight", f"event_detector/fc{j}_w")
            plain(f"detector.head.{j}.bias", f"event_detector/fc{j}_b")

    if "imu_encoder" in config:
        d = config["imu_encoder"]
        for i in range(len(d["channels"])):
            plain(f"classifier.imu_encoder.convs.{i}.weight", f"imu_encoder/conv{i}_w")
            plain(f"classifier.imu_encoder.convs.{i}.bias", f"imu_encoder/conv{i}_b")
        for j in range(2):
            plain(f"classifier.imu_encoder.fc{j}.weight", f"imu_encoder/fc{j}_w")
            plain(f"classifier.imu_encoder.fc{j}.bias", f"imu_encoder/fc{j}_b")

    if "audio_encoder" in config:
        d = config["audio_encoder"]
        enc = "classifier.audio_encoder"
        folded(f"{enc}.stem", f"{enc}.stem_bn",
               "audio_encoder/stem_w", "audio_encoder/stem_b", conv_has_bias=False)
        c_in = d["stem_channels"]
        for i, b in enumerate(d["blocks"]):
            base = f"{enc}.blocks.{i}"
            dst = f"audio_encoder/b{i}"
            if b["expand"] != c_in:
                folded(f"{base}.expand", f"{base}.expand_bn",
                       f"{dst}/expand_w", f"{dst}/expand_b", conv_has_bias=False)
            folded(f"{base}.dw", f"{base}.dw_bn",
                   f"{dst}/dw_w", f"{dst}/dw_b", conv_has_bias=False)
            if b["se"]:
                plain(f"{base}.se.fc1.weight", f"{dst}/se_w1")
                plain(f"{base}.se.fc1.bias", f"{dst}/se_b1")
                plain(f"{base}.se.fc2.weight", f"{dst}/se_w2")
                plain(f"{base}.se.fc2.bias", f"{dst}/se_b2")
            folded(f"{base}.project", f"{base}.project_bn",
                   f"{dst}/project_w", f"{dst}/project_b", conv_has_bias=False)
            c_in = b["out"]
        folded(f"{enc}.head", f"{enc}.head_bn",
               "audio_encoder/head_w", "audio_encoder/head_b", conv_has_bias=False)

    if "audio_frontend" in config:
        plain("classifier.frontend.mel.weight", config["audio_frontend"]["mel_weights"])

    if "fusion" in config and config["fusion"]["variant"] == "gated":
        for part in ("proj_imu", "proj_audio", "gate_imu", "gate_audio", "fuse", "head"):
            plain(f"classifier.fusion.{part}.weight", f"fusion/{part}_w")
            plain(f"classifier.fusion.{part}.bias", f"fusion/{part}_b")

    return rules
