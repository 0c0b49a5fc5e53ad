"""Network assembly: the IMU event detector, the audio and IMU encoders,
gated fusion, FLOPs accounting and archive-level quantization.

Each network is built from a WeightArchive plus the archive's embedded
JSON config. Construction runs a shape-inference pass: every parameter is
checked against the shape the config implies and a layer plan (name, kind,
nominal output shape, FLOPs) is recorded before any numeric work. Forward
passes execute the same step list the plan was built from, so the trace
cannot drift from the arithmetic.

FLOPs conventions (multiply-add counted as 2):
    conv:   2*K*(in_ch/groups)*out_ch*spatial_out (+ out_ch*spatial_out bias)
    dense:  2*in*out + out
    pool / activation / elementwise add or scale: one FLOP per output element

Weights stored as f16 are upcast to f32 at load; all compute is f32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .archive import WeightArchive
from .dsp import DbConfig, MelConfig, StftConfig, frame_count, logmel
from .errors import ConfigError, ShapeError
from .ops import (
    ConvSpec,
    InvResWeights,
    SeWeights,
    activation,
    conv,
    conv_out_len,
    global_avg_pool,
    inverted_residual,
    linear,
    maxpool,
)
from .tensor import Tensor, quantize_f16


@dataclass(frozen=True)
class LayerInfo:
    name: str
    kind: str
    out_shape: tuple
    flops: int


def _prod(shape) -> int:
    return int(np.prod(shape, dtype=np.int64)) if shape else 1


def conv_flops(spec: ConvSpec, out_spatial, bias: bool) -> int:
    k = _prod(spec.kernel)
    spatial = _prod(out_spatial)
    f = 2 * k * (spec.in_ch // spec.groups) * spec.out_ch * spatial
    if bias:
        f += spec.out_ch * spatial
    return f


def dense_flops(n_in: int, n_out: int) -> int:
    return 2 * n_in * n_out + n_out


def count_flops(*models) -> int:
    """Total forward-pass FLOPs; additive over graph composition."""
    total = 0
    for m in models:
        total += sum(layer.flops for layer in m.plan)
    return total


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class EventDetectorConfig:
    in_channels: int = 6
    input_len: int = 150
    channels: tuple = (64, 64, 128, 128)
    kernels: tuple = (10, 8, 6, 5)
    head: tuple = (512, 256, 128)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "head", tuple(self.head))
        if len(self.channels) != 4 or len(self.kernels) != 4:
            raise ConfigError("event detector needs exactly 4 conv blocks")
        if self.channels[0] != 64 or self.channels[-1] != 128 or \
                any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"block channels must rise 64 -> 128, got {self.channels}")
        if self.kernels[0] != 10 or self.kernels[-1] != 5 or \
                any(b > a for a, b in zip(self.kernels, self.kernels[1:])):
            raise ConfigError(f"block kernels must fall 10 -> 5, got {self.kernels}")

    def to_dict(self):
        return {"in_channels": self.in_channels, "input_len": self.input_len,
                "channels": list(self.channels), "kernels": list(self.kernels),
                "head": list(self.head)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["in_channels"], d["input_len"], tuple(d["channels"]),
                   tuple(d["kernels"]), tuple(d["head"]))


@dataclass(frozen=True)
class ImuEncoderConfig:
    window_samples: int = 50
    in_width: int = 6
    channels: tuple = (64, 128, 256)
    kernel: int = 5
    hidden: int = 512
    embedding_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.channels) != 3:
            raise ConfigError("IMU encoder uses exactly 3 conv layers")
        if self.kernel != 5:
            raise ConfigError(f"IMU encoder kernels are 5x1, got {self.kernel}")

    def to_dict(self):
        return {"window_samples": self.window_samples, "in_width": self.in_width,
                "channels": list(self.channels), "kernel": self.kernel,
                "hidden": self.hidden, "embedding_dim": self.embedding_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["window_samples"], d["in_width"], tuple(d["channels"]),
                   d["kernel"], d["hidden"], d["embedding_dim"])


@dataclass(frozen=True)
class AudioBlockConfig:
    kernel: int
    expand: int
    out: int
    se: bool
    act: str
    stride: int

    def to_dict(self):
        return {"kernel": self.kernel, "expand": self.expand, "out": self.out,
                "se": self.se, "act": self.act, "stride": self.stride}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kernel"], d["expand"], d["out"], d["se"], d["act"], d["stride"])


# MobileNetV3-Small body adapted to one input channel; the classifier head
# is replaced by the pooled 576-d embedding.
MOBILENETV3_SMALL_BLOCKS = (
    AudioBlockConfig(3, 16, 16, True, "relu", 2),
    AudioBlockConfig(3, 72, 24, False, "relu", 2),
    AudioBlockConfig(3, 88, 24, False, "relu", 1),
    AudioBlockConfig(5, 96, 40, True, "hardswish", 2),
    AudioBlockConfig(5, 240, 40, True, "hardswish", 1),
    AudioBlockConfig(5, 240, 40, True, "hardswish", 1),
    AudioBlockConfig(5, 120, 48, True, "hardswish", 1),
    AudioBlockConfig(5, 144, 48, True, "hardswish", 1),
    AudioBlockConfig(5, 288, 96, True, "hardswish", 2),
    AudioBlockConfig(5, 576, 96, True, "hardswish", 1),
    AudioBlockConfig(5, 576, 96, True, "hardswish", 1),
)

MIN_AUDIO_FRAMES = 32


def se_mid_channels(expand: int) -> int:
    return max(8, expand // 4)


@dataclass(frozen=True)
class AudioEncoderConfig:
    in_frames: int = 63
    n_mels: int = 64
    stem_channels: int = 16
    blocks: tuple = MOBILENETV3_SMALL_BLOCKS
    head_channels: int = 576

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def embedding_dim(self) -> int:
        return self.head_channels

    def to_dict(self):
        return {"in_frames": self.in_frames, "n_mels": self.n_mels,
                "stem_channels": self.stem_channels,
                "blocks": [b.to_dict() for b in self.blocks],
                "head_channels": self.head_channels}

    @classmethod
    def from_dict(cls, d):
        return cls(d["in_frames"], d["n_mels"], d["stem_channels"],
                   tuple(AudioBlockConfig.from_dict(b) for b in d["blocks"]),
                   d["head_channels"])


FUSION_VARIANTS = ("gated", "concat", "softmax_avg")
# reserved for configuration compatibility; not implemented in this build
RESERVED_FUSION_VARIANTS = ("self_attention",)


@dataclass(frozen=True)
class FusionConfig:
    variant: str = "gated"
    shared_dim: int = 256
    n_classes: int = 2
    imu_dim: int = 256
    audio_dim: int = 576

    def __post_init__(self):
        if self.variant not in FUSION_VARIANTS:
            raise ConfigError(f"unknown fusion variant {self.variant!r}; "
                              f"available: {FUSION_VARIANTS}")
        if self.variant == "gated" and self.shared_dim != 256:
            raise ConfigError(f"gated fusion is defined on a 256-d shared space, "
                              f"got {self.shared_dim}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")

    def to_dict(self):
        return {"variant": self.variant, "shared_dim": self.shared_dim,
                "n_classes": self.n_classes, "imu_dim": self.imu_dim,
                "audio_dim": self.audio_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], d["shared_dim"], d["n_classes"],
                   d["imu_dim"], d["audio_dim"])


@dataclass(frozen=True)
class FrontendConfig:
    stft: StftConfig
    mel: MelConfig
    db: DbConfig
    window_samples: int
    mel_weights_name: str = "audio_frontend/mel_w"
    mel_bias_name: str | None = None

    def to_dict(self):
        d = {"sample_rate": self.stft.sample_rate, "n_fft": self.stft.n_fft,
             "hop": self.stft.hop, "center_pad": self.stft.center_pad,
             "n_mels": self.mel.n_mels, "f_min": self.mel.f_min,
             "f_max": self.mel.f_max, "norm": self.mel.norm,
             "amin": self.db.amin, "ref": self.db.ref, "top_db": self.db.top_db,
             "window_samples": self.window_samples,
             "mel_weights": self.mel_weights_name}
        if self.mel_bias_name is not None:
            d["mel_bias"] = self.mel_bias_name
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            StftConfig(d["sample_rate"], d["n_fft"], d["hop"], center_pad=d["center_pad"]),
            MelConfig(d["n_mels"], d["f_min"], d["f_max"], d.get("norm", "peak-one")),
            DbConfig(d["amin"], d["ref"], d["top_db"]),
            d["window_samples"], d["mel_weights"], d.get("mel_bias"))


# ---------------------------------------------------------------------------
# parameter bookkeeping


def _pull_params(archive: WeightArchive, specs: dict[str, tuple], owner: str):
    params = {}
    missing, wrong = [], []
    for name, shape in specs.items():
        t = archive.entries.get(name)
        if t is None:
            missing.append(name)
        elif t.shape != tuple(shape):
            wrong.append(f"{name}: archive {t.shape} != config {tuple(shape)}")
        else:
            params[name] = t.astype_f32()
    if missing:
        raise ConfigError(f"{owner}: archive is missing entries {missing}")
    if wrong:
        raise ConfigError(f"{owner}: shape mismatches: {wrong}")
    return params


class EventDetector:
    """1D depthwise-separable CNN over a normalized (6, 150) IMU window."""

    PREFIX = "event_detector"

    def __init__(self, cfg: EventDetectorConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.plan: list[LayerInfo] = []
        self._steps = []
        self._build()

    @classmethod
    def param_specs(cls, cfg: EventDetectorConfig) -> dict[str, tuple]:
        p = cls.PREFIX
        specs = {}
        c_in = cfg.in_channels
        for i, (c_out, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            specs[f"{p}/b{i}/dw_w"] = (c_in, 1, k)
            specs[f"{p}/b{i}/dw_b"] = (c_in,)
            specs[f"{p}/b{i}/pw_w"] = (c_out, c_in, 1)
            specs[f"{p}/b{i}/pw_b"] = (c_out,)
            c_in = c_out
        length = cfg.input_len
        for k in cfg.kernels:
            length = (length - k) + 1
            length = (length - 2) // 2 + 1
        n_in = cfg.channels[-1] * length
        dims = (n_in,) + cfg.head + (1,)
        for j in range(len(dims) - 1):
            specs[f"{p}/fc{j}_w"] = (dims[j + 1], dims[j])
            specs[f"{p}/fc{j}_b"] = (dims[j + 1],)
        return specs

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "EventDetector":
        cfg = EventDetectorConfig.from_dict(archive.config_dict["event_detector"])
        return cls(cfg, _pull_params(archive, cls.param_specs(cfg), cls.PREFIX))

    def _build(self):
        cfg = self.cfg
        p = self.PREFIX
        specs = self.param_specs(cfg)
        for name, shape in specs.items():
            if self.params.get(name) is None or self.params[name].shape != shape:
                raise ConfigError(f"{p}: parameter {name} missing or misshaped")
        c_in, length = cfg.in_channels, cfg.input_len
        for i, (c_out, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            dw_spec = ConvSpec(1, c_in, c_in, k, 1, "valid", groups=c_in)
            pw_spec = ConvSpec(1, c_in, c_out, 1, 1, "valid")
            dw_w, dw_b = self.params[f"{p}/b{i}/dw_w"], self.params[f"{p}/b{i}/dw_b"]
            pw_w, pw_b = self.params[f"{p}/b{i}/pw_w"], self.params[f"{p}/b{i}/pw_b"]
            length_dw = conv_out_len(length, k, 1, "valid")
            self._add(f"b{i}/dw", "conv", (c_in, length_dw),
                      conv_flops(dw_spec, (length_dw,), True),
                      lambda x, w=dw_w, b=dw_b, s=dw_spec: conv(x, w, b, s))
            self._add(f"b{i}/pw", "conv", (c_out, length_dw),
                      conv_flops(pw_spec, (length_dw,), True),
                      lambda x, w=pw_w, b=pw_b, s=pw_spec: conv(x, w, b, s))
            self._add(f"b{i}/relu", "activation", (c_out, length_dw),
                      c_out * length_dw, lambda x: activation(x, "relu"))
            length = (length_dw - 2) // 2 + 1
            self._add(f"b{i}/pool", "maxpool", (c_out, length), c_out * length,
                      lambda x: maxpool(x, 2, 2, 1))
            c_in = c_out
        n_flat = c_in * length
        self._add("flatten", "reshape", (n_flat,), 0, lambda x: x.reshape(-1))
        dims = (n_flat,) + cfg.head + (1,)
        n_fc = len(dims) - 1
        for j in range(n_fc):
            w, b = self.params[f"{p}/fc{j}_w"], self.params[f"{p}/fc{j}_b"]
            self._add(f"fc{j}", "dense", (dims[j + 1],), dense_flops(dims[j], dims[j + 1]),
                      lambda x, w=w, b=b: linear(x, w, b))
            if j < n_fc - 1:
                self._add(f"fc{j}/relu", "activation", (dims[j + 1],), dims[j + 1],
                          lambda x: activation(x, "relu"))
        self._add("sigmoid", "activation", (1,), 1, lambda x: activation(x, "sigmoid"))

    def _add(self, name, kind, out_shape, flops, fn):
        self.plan.append(LayerInfo(name, kind, tuple(out_shape), int(flops)))
        self._steps.append(fn)

    def forward(self, window: np.ndarray) -> float:
        """Probability of an ongoing event for one normalized window."""
        x = np.asarray(window, dtype=np.float32)
        if x.shape != (self.cfg.in_channels, self.cfg.input_len):
            raise ShapeError(f"detector expects {(self.cfg.in_channels, self.cfg.input_len)}, "
                             f"got {x.shape}")
        for step in self._steps:
            x = step(x)
        return float(x[0])

    @property
    def flops(self) -> int:
        return count_flops(self)


class ImuEncoder:
    """3-layer 2D CNN with 5x1 kernels over a (1, T, 6) normalized window."""

    PREFIX = "imu_encoder"

    def __init__(self, cfg: ImuEncoderConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.plan: list[LayerInfo] = []
        self._steps = []
        self._build()

    @classmethod
    def feature_shape(cls, cfg: ImuEncoderConfig) -> tuple:
        t = cfg.window_samples
        for i in range(3):
            t = t - cfg.kernel + 1
            if i < 2:
                t = (t - 2) // 2 + 1
        if t < 1:
            raise ConfigError(f"window of {cfg.window_samples} samples is too short "
                              f"for the conv/pool stack")
        return (cfg.channels[-1], t, cfg.in_width)

    @classmethod
    def param_specs(cls, cfg: ImuEncoderConfig) -> dict[str, tuple]:
        p = cls.PREFIX
        specs = {}
        c_in = 1
        for i, c_out in enumerate(cfg.channels):
            specs[f"{p}/conv{i}_w"] = (c_out, c_in, cfg.kernel, 1)
            specs[f"{p}/conv{i}_b"] = (c_out,)
            c_in = c_out
        n_flat = _prod(cls.feature_shape(cfg))
        specs[f"{p}/fc0_w"] = (cfg.hidden, n_flat)
        specs[f"{p}/fc0_b"] = (cfg.hidden,)
        specs[f"{p}/fc1_w"] = (cfg.embedding_dim, cfg.hidden)
        specs[f"{p}/fc1_b"] = (cfg.embedding_dim,)
        return specs

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "ImuEncoder":
        cfg = ImuEncoderConfig.from_dict(archive.config_dict["imu_encoder"])
        return cls(cfg, _pull_params(archive, cls.param_specs(cfg), cls.PREFIX))

    def _build(self):
        cfg, p = self.cfg, self.PREFIX
        for name, shape in self.param_specs(cfg).items():
            if self.params.get(name) is None or self.params[name].shape != shape:
                raise ConfigError(f"{p}: parameter {name} missing or misshaped")
        c_in, t, w_axis = 1, cfg.window_samples, cfg.in_width
        for i, c_out in enumerate(cfg.channels):
            spec = ConvSpec(2, c_in, c_out, (cfg.kernel, 1), (1, 1), "valid")
            cw, cb = self.params[f"{p}/conv{i}_w"], self.params[f"{p}/conv{i}_b"]
            t = t - cfg.kernel + 1
            self._add(f"conv{i}", "conv", (c_out, t, w_axis),
                      conv_flops(spec, (t, w_axis), True),
                      lambda x, w=cw, b=cb, s=spec: conv(x, w, b, s))
            self._add(f"conv{i}/relu", "activation", (c_out, t, w_axis),
                      c_out * t * w_axis, lambda x: activation(x, "relu"))
            if i < 2:
                t = (t - 2) // 2 + 1
                self._add(f"pool{i}", "maxpool", (c_out, t, w_axis), c_out * t * w_axis,
                          lambda x: maxpool(x, (2, 1), (2, 1), 2))
            c_in = c_out
        n_flat = c_in * t * w_axis
        self._add("flatten", "reshape", (n_flat,), 0, lambda x: x.reshape(-1))
        fc0_w, fc0_b = self.params[f"{p}/fc0_w"], self.params[f"{p}/fc0_b"]
        self._add("fc0", "dense", (cfg.hidden,), dense_flops(n_flat, cfg.hidden),
                  lambda x: linear(x, fc0_w, fc0_b))
        self._add("fc0/relu", "activation", (cfg.hidden,), cfg.hidden,
                  lambda x: activation(x, "relu"))
        # dropout sits here during training; identity at inference, so no step
        fc1_w, fc1_b = self.params[f"{p}/fc1_w"], self.params[f"{p}/fc1_b"]
        self._add("fc1", "dense", (cfg.embedding_dim,),
                  dense_flops(cfg.hidden, cfg.embedding_dim),
                  lambda x: linear(x, fc1_w, fc1_b))

    def _add(self, name, kind, out_shape, flops, fn):
        self.plan.append(LayerInfo(name, kind, tuple(out_shape), int(flops)))
        self._steps.append(fn)

    def forward(self, window: np.ndarray) -> np.ndarray:
        x = np.asarray(window, dtype=np.float32)
        if x.ndim == 2:
            x = x[None]
        if x.shape != (1, self.cfg.window_samples, self.cfg.in_width):
            raise ShapeError(f"IMU encoder expects (1, {self.cfg.window_samples}, "
                             f"{self.cfg.in_width}), got {x.shape}")
        for step in self._steps:
            x = step(x)
        return x

    @property
    def flops(self) -> int:
        return count_flops(self)


class AudioEncoder:
    """MobileNetV3-Small-style stack over a (1, frames, n_mels) log-mel image.

    Global average pooling at the tail makes the embedding length
    independent of the frame count, so the same weights serve both the 63
    and 690 frame presets.
    """

    PREFIX = "audio_encoder"

    def __init__(self, cfg: AudioEncoderConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.plan: list[LayerInfo] = []
        self._steps = []
        self._build()

    @classmethod
    def param_specs(cls, cfg: AudioEncoderConfig) -> dict[str, tuple]:
        p = cls.PREFIX
        specs = {f"{p}/stem_w": (cfg.stem_channels, 1, 3, 3),
                 f"{p}/stem_b": (cfg.stem_channels,)}
        c_in = cfg.stem_channels
        for i, b in enumerate(cfg.blocks):
            if b.expand != c_in:
                specs[f"{p}/b{i}/expand_w"] = (b.expand, c_in, 1, 1)
                specs[f"{p}/b{i}/expand_b"] = (b.expand,)
            specs[f"{p}/b{i}/dw_w"] = (b.expand, 1, b.kernel, b.kernel)
            specs[f"{p}/b{i}/dw_b"] = (b.expand,)
            if b.se:
                mid = se_mid_channels(b.expand)
                specs[f"{p}/b{i}/se_w1"] = (mid, b.expand)
                specs[f"{p}/b{i}/se_b1"] = (mid,)
                specs[f"{p}/b{i}/se_w2"] = (b.expand, mid)
                specs[f"{p}/b{i}/se_b2"] = (b.expand,)
            specs[f"{p}/b{i}/project_w"] = (b.out, b.expand, 1, 1)
            specs[f"{p}/b{i}/project_b"] = (b.out,)
            c_in = b.out
        specs[f"{p}/head_w"] = (cfg.head_channels, c_in, 1, 1)
        specs[f"{p}/head_b"] = (cfg.head_channels,)
        return specs

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "AudioEncoder":
        cfg = AudioEncoderConfig.from_dict(archive.config_dict["audio_encoder"])
        return cls(cfg, _pull_params(archive, cls.param_specs(cfg), cls.PREFIX))

    def _block_weights(self, i: int, block: AudioBlockConfig, c_in: int) -> InvResWeights:
        p = self.PREFIX
        g = self.params.get
        se = None
        if block.se:
            se = SeWeights(g(f"{p}/b{i}/se_w1"), g(f"{p}/b{i}/se_b1"),
                           g(f"{p}/b{i}/se_w2"), g(f"{p}/b{i}/se_b2"))
        return InvResWeights(g(f"{p}/b{i}/expand_w"), g(f"{p}/b{i}/expand_b"),
                             g(f"{p}/b{i}/dw_w"), g(f"{p}/b{i}/dw_b"), se,
                             g(f"{p}/b{i}/project_w"), g(f"{p}/b{i}/project_b"))

    def _block_flops(self, block: AudioBlockConfig, c_in: int, spatial_in) -> int:
        h, w = spatial_in
        flops = 0
        if block.expand != c_in:
            flops += conv_flops(ConvSpec(2, c_in, block.expand, 1, 1), (h, w), True)
            flops += block.expand * h * w  # activation
        ho = -(-h // block.stride)
        wo = -(-w // block.stride)
        flops += conv_flops(ConvSpec(2, block.expand, block.expand, block.kernel,
                                      block.stride, "same", groups=block.expand),
                             (ho, wo), True)
        flops += block.expand * ho * wo
        if block.se:
            mid = se_mid_channels(block.expand)
            flops += block.expand  # gap
            flops += dense_flops(block.expand, mid) + mid
            flops += dense_flops(mid, block.expand) + block.expand
            flops += block.expand * ho * wo  # scaling
        flops += conv_flops(ConvSpec(2, block.expand, block.out, 1, 1), (ho, wo), True)
        if block.stride == 1 and c_in == block.out:
            flops += block.out * ho * wo  # residual add
        return flops

    def _build(self):
        cfg, p = self.cfg, self.PREFIX
        for name, shape in self.param_specs(cfg).items():
            if self.params.get(name) is None or self.params[name].shape != shape:
                raise ConfigError(f"{p}: parameter {name} missing or misshaped")
        h, w = cfg.in_frames, cfg.n_mels
        stem_spec = ConvSpec(2, 1, cfg.stem_channels, 3, 2, "same")
        stem_w, stem_b = self.params[f"{p}/stem_w"], self.params[f"{p}/stem_b"]
        h, w = -(-h // 2), -(-w // 2)
        self._add("stem", "conv", (cfg.stem_channels, h, w),
                  conv_flops(stem_spec, (h, w), True),
                  lambda x: conv(x, stem_w, stem_b, stem_spec))
        self._add("stem/hardswish", "activation", (cfg.stem_channels, h, w),
                  cfg.stem_channels * h * w, lambda x: activation(x, "hardswish"))
        c_in = cfg.stem_channels
        for i, block in enumerate(cfg.blocks):
            weights = self._block_weights(i, block, c_in)
            flops = self._block_flops(block, c_in, (h, w))
            h, w = -(-h // block.stride), -(-w // block.stride)
            self._add(f"b{i}", "inverted_residual", (block.out, h, w), flops,
                      lambda x, wt=weights, bk=block, ci=c_in: inverted_residual(
                          x, wt, kernel=bk.kernel, stride=bk.stride, act=bk.act,
                          in_ch=ci, exp_ch=bk.expand, out_ch=bk.out))
            c_in = block.out
        head_spec = ConvSpec(2, c_in, cfg.head_channels, 1, 1)
        head_w, head_b = self.params[f"{p}/head_w"], self.params[f"{p}/head_b"]
        self._add("head", "conv", (cfg.head_channels, h, w),
                  conv_flops(head_spec, (h, w), True),
                  lambda x: conv(x, head_w, head_b, head_spec))
        self._add("head/hardswish", "activation", (cfg.head_channels, h, w),
                  cfg.head_channels * h * w, lambda x: activation(x, "hardswish"))
        self._add("gap", "global_avg_pool", (cfg.head_channels,), cfg.head_channels,
                  global_avg_pool)

    def _add(self, name, kind, out_shape, flops, fn):
        self.plan.append(LayerInfo(name, kind, tuple(out_shape), int(flops)))
        self._steps.append(fn)

    def forward(self, image: np.ndarray, *, return_features: bool = False):
        x = np.asarray(image, dtype=np.float32)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[0] != 1 or x.shape[2] != self.cfg.n_mels:
            raise ShapeError(f"audio encoder expects (1, frames, {self.cfg.n_mels}), "
                             f"got {x.shape}")
        if x.shape[1] < MIN_AUDIO_FRAMES:
            raise ShapeError(f"need at least {MIN_AUDIO_FRAMES} frames for the stride "
                             f"stack, got {x.shape[1]}")
        for step, info in zip(self._steps, self.plan):
            x = step(x)
            if return_features and info.name == "head/hardswish":
                return x
        return x

    @property
    def flops(self) -> int:
        return count_flops(self)


class AudioFrontend:
    """STFT + mel + dB stage, configured from the archive."""

    def __init__(self, cfg: FrontendConfig, mel_weights: np.ndarray,
                 mel_bias: np.ndarray | None = None):
        if mel_weights.shape != (cfg.mel.n_mels, cfg.stft.n_bins):
            raise ConfigError(f"mel weights {mel_weights.shape} do not match frontend "
                              f"({cfg.mel.n_mels}, {cfg.stft.n_bins})")
        self.cfg = cfg
        self.mel_weights = mel_weights
        self.mel_bias = mel_bias
        frames = frame_count(cfg.stft, cfg.window_samples)
        bins = cfg.stft.n_bins
        stft_flops = 2 * conv_flops(
            ConvSpec(1, 1, bins, cfg.stft.n_fft, cfg.stft.hop, "valid"), (frames,), False)
        power_flops = 3 * frames * bins  # re^2, im^2, add
        mel_flops = frames * (2 * bins * cfg.mel.n_mels)
        if mel_bias is not None:
            mel_flops += frames * cfg.mel.n_mels
        db_flops = frames * cfg.mel.n_mels
        self.plan = [
            LayerInfo("stft", "conv", (frames, bins), stft_flops),
            LayerInfo("power", "elementwise", (frames, bins), power_flops),
            LayerInfo("mel", "dense", (frames, cfg.mel.n_mels), mel_flops),
            LayerInfo("db", "activation", (frames, cfg.mel.n_mels), db_flops),
        ]

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "AudioFrontend":
        cfg = FrontendConfig.from_dict(archive.config_dict["audio_frontend"])
        mel_w = archive.entries[cfg.mel_weights_name].astype_f32()
        mel_b = None
        if cfg.mel_bias_name is not None:
            mel_b = archive.entries[cfg.mel_bias_name].astype_f32()
        return cls(cfg, mel_w, mel_b)

    def logmel(self, wave: np.ndarray) -> np.ndarray:
        return logmel(wave, self.cfg.stft, self.mel_weights, self.cfg.db, self.mel_bias)

    @property
    def flops(self) -> int:
        return count_flops(self)


class FusionHead:
    """Projects both embeddings to a shared space and classifies.

    gated:       g_m = sigmoid(gate_m(p_m)); logits = head(W_f(g_i*p_i + g_a*p_a))
    concat:      logits = head(p_i || p_a)
    softmax_avg: scores = (softmax(head_i(p_i)) + softmax(head_a(p_a))) / 2
    """

    PREFIX = "fusion"

    def __init__(self, cfg: FusionConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.plan: list[LayerInfo] = []
        self._build()

    @classmethod
    def param_specs(cls, cfg: FusionConfig) -> dict[str, tuple]:
        p, d = cls.PREFIX, cfg.shared_dim
        specs = {f"{p}/proj_imu_w": (d, cfg.imu_dim), f"{p}/proj_imu_b": (d,),
                 f"{p}/proj_audio_w": (d, cfg.audio_dim), f"{p}/proj_audio_b": (d,)}
        if cfg.variant == "gated":
            specs.update({f"{p}/gate_imu_w": (d, d), f"{p}/gate_imu_b": (d,),
                          f"{p}/gate_audio_w": (d, d), f"{p}/gate_audio_b": (d,),
                          f"{p}/fuse_w": (d, d), f"{p}/fuse_b": (d,),
                          f"{p}/head_w": (cfg.n_classes, d), f"{p}/head_b": (cfg.n_classes,)})
        elif cfg.variant == "concat":
            specs.update({f"{p}/head_w": (cfg.n_classes, 2 * d),
                          f"{p}/head_b": (cfg.n_classes,)})
        else:  # softmax_avg
            specs.update({f"{p}/head_imu_w": (cfg.n_classes, d),
                          f"{p}/head_imu_b": (cfg.n_classes,),
                          f"{p}/head_audio_w": (cfg.n_classes, d),
                          f"{p}/head_audio_b": (cfg.n_classes,)})
        return specs

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "FusionHead":
        cfg = FusionConfig.from_dict(archive.config_dict["fusion"])
        return cls(cfg, _pull_params(archive, cls.param_specs(cfg), cls.PREFIX))

    def _build(self):
        cfg, p = self.cfg, self.PREFIX
        for name, shape in self.param_specs(cfg).items():
            if self.params.get(name) is None or self.params[name].shape != shape:
                raise ConfigError(f"{p}: parameter {name} missing or misshaped")
        d, c = cfg.shared_dim, cfg.n_classes
        add = lambda name, shape, flops: self.plan.append(
            LayerInfo(name, "dense", shape, flops))
        add("proj_imu", (d,), dense_flops(cfg.imu_dim, d))
        add("proj_audio", (d,), dense_flops(cfg.audio_dim, d))
        if cfg.variant == "gated":
            add("gate_imu", (d,), dense_flops(d, d) + 2 * d)   # sigmoid + scale
            add("gate_audio", (d,), dense_flops(d, d) + 2 * d)
            add("fuse", (d,), d + dense_flops(d, d))            # sum + linear
            add("head", (c,), dense_flops(d, c))
        elif cfg.variant == "concat":
            add("head", (c,), dense_flops(2 * d, c))
        else:
            add("head_imu", (c,), dense_flops(d, c) + c)
            add("head_audio", (c,), dense_flops(d, c) + c)
            self.plan.append(LayerInfo("avg", "elementwise", (c,), c))

    def forward(self, imu_emb: np.ndarray, audio_emb: np.ndarray):
        """Returns (scores, predicted class id); ties go to the lowest id."""
        cfg, g = self.cfg, self.params.get
        p = self.PREFIX
        imu_emb = np.asarray(imu_emb, dtype=np.float32)
        audio_emb = np.asarray(audio_emb, dtype=np.float32)
        if imu_emb.shape != (cfg.imu_dim,) or audio_emb.shape != (cfg.audio_dim,):
            raise ShapeError(f"embeddings {imu_emb.shape}/{audio_emb.shape} do not match "
                             f"configured dims ({cfg.imu_dim},)/({cfg.audio_dim},)")
        p_i = linear(imu_emb, g(f"{p}/proj_imu_w"), g(f"{p}/proj_imu_b"))
        p_a = linear(audio_emb, g(f"{p}/proj_audio_w"), g(f"{p}/proj_audio_b"))
        if cfg.variant == "gated":
            g_i = activation(linear(p_i, g(f"{p}/gate_imu_w"), g(f"{p}/gate_imu_b")), "sigmoid")
            g_a = activation(linear(p_a, g(f"{p}/gate_audio_w"), g(f"{p}/gate_audio_b")),
                             "sigmoid")
            fused = linear(g_i * p_i + g_a * p_a, g(f"{p}/fuse_w"), g(f"{p}/fuse_b"))
            logits = linear(fused, g(f"{p}/head_w"), g(f"{p}/head_b"))
        elif cfg.variant == "concat":
            logits = linear(np.concatenate([p_i, p_a]), g(f"{p}/head_w"), g(f"{p}/head_b"))
        else:
            s_i = activation(linear(p_i, g(f"{p}/head_imu_w"), g(f"{p}/head_imu_b")), "softmax")
            s_a = activation(linear(p_a, g(f"{p}/head_audio_w"), g(f"{p}/head_audio_b")),
                             "softmax")
            logits = (s_i + s_a) / 2.0
        return logits, int(np.argmax(logits))

    @property
    def flops(self) -> int:
        return count_flops(self)


class ActivityClassifier:
    """Frontend + both encoders + fusion: one tick of the second stage."""

    def __init__(self, frontend: AudioFrontend, audio_encoder: AudioEncoder,
                 imu_encoder: ImuEncoder, fusion: FusionHead):
        if fusion.cfg.imu_dim != imu_encoder.cfg.embedding_dim:
            raise ConfigError("fusion imu_dim disagrees with the IMU encoder")
        if fusion.cfg.audio_dim != audio_encoder.cfg.embedding_dim:
            raise ConfigError("fusion audio_dim disagrees with the audio encoder")
        self.frontend = frontend
        self.audio_encoder = audio_encoder
        self.imu_encoder = imu_encoder
        self.fusion = fusion

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "ActivityClassifier":
        return cls(AudioFrontend.from_archive(archive),
                   AudioEncoder.from_archive(archive),
                   ImuEncoder.from_archive(archive),
                   FusionHead.from_archive(archive))

    def forward(self, imu_window: np.ndarray, wave: np.ndarray):
        """(normalized (T, 6) IMU window, raw mono wave) -> (class id, scores)."""
        mel_image = self.frontend.logmel(wave)
        audio_emb = self.audio_encoder.forward(mel_image[None])
        imu_emb = self.imu_encoder.forward(np.asarray(imu_window, dtype=np.float32)[None])
        logits, class_id = self.fusion.forward(imu_emb, audio_emb)
        return class_id, logits

    @property
    def plan(self) -> list[LayerInfo]:
        out = []
        for prefix, model in (("frontend", self.frontend),
                              ("audio_encoder", self.audio_encoder),
                              ("imu_encoder", self.imu_encoder),
                              ("fusion", self.fusion)):
            out.extend(LayerInfo(f"{prefix}/{l.name}", l.kind, l.out_shape, l.flops)
                       for l in model.plan)
        return out

    @property
    def flops(self) -> int:
        return count_flops(self.frontend, self.audio_encoder, self.imu_encoder, self.fusion)


@dataclass
class ModelBundle:
    """Everything an archive deploys: detector, classifier, label vocabulary."""

    detector: EventDetector | None
    classifier: ActivityClassifier | None
    class_names: list[str] = field(default_factory=list)
    contexts: list[str] = field(default_factory=list)

    @classmethod
    def from_archive(cls, archive: WeightArchive) -> "ModelBundle":
        cfg = archive.config_dict
        detector = EventDetector.from_archive(archive) if "event_detector" in cfg else None
        classifier = None
        if "fusion" in cfg:
            classifier = ActivityClassifier.from_archive(archive)
        return cls(detector, classifier,
                   list(cfg.get("class_names", [])), list(cfg.get("contexts", [])))

    @property
    def detector_fn(self):
        if self.detector is None:
            raise ConfigError("archive carries no event detector")
        return self.detector.forward

    @property
    def classifier_fn(self):
        if self.classifier is None:
            return None
        return self.classifier.forward


def load_models(archive: WeightArchive) -> ModelBundle:
    return ModelBundle.from_archive(archive)


def quantize_archive_f16(archive: WeightArchive) -> WeightArchive:
    """Halve the payload: every f32 entry becomes f16; f16 entries pass
    through, so a second application is the identity."""
    entries = {name: quantize_f16(t, name) for name, t in archive.entries.items()}
    return WeightArchive(entries, archive.config, archive.version)


def build_archive(configs: dict, params: dict[str, np.ndarray],
                  class_names=(), contexts=()) -> WeightArchive:
    """Assemble an archive from config dataclasses and a flat param dict.

    ``configs`` maps section key -> dataclass (event_detector, imu_encoder,
    audio_encoder, fusion, audio_frontend).
    """
    cfg = {}
    for key, obj in configs.items():
        cfg[key] = obj.to_dict()
    if class_names:
        cfg["class_names"] = list(class_names)
    if contexts:
        cfg["contexts"] = list(contexts)
    entries = {name: Tensor(np.asarray(arr, dtype=np.float32))
               for name, arr in params.items()}
    return WeightArchive(entries, json.dumps(cfg, sort_keys=True))
