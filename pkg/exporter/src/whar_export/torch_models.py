"""Training-side reference networks, built from the archive config schema.

These modules mirror the inference engine's graphs exactly: TF-style
"same" padding (extra sample on the trailing side), hardsigmoid as
clamp((x+3)/6, 0, 1), squeeze-excitation width max(8, expand // 4), and a
global-average-pooled 576-d audio embedding. Batchnorms appear where a
training stack would put them; export folds them away.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def samosa_config(n_classes: int = 6) -> dict:
    """Archive config for the 1 kHz preset (63x64 log-mel, 1 s windows)."""
    blocks = [
        {"kernel": 3, "expand": 16, "out": 16, "se": True, "act": "relu", "stride": 2},
        {"kernel": 3, "expand": 72, "out": 24, "se": False, "act": "relu", "stride": 2},
        {"kernel": 3, "expand": 88, "out": 24, "se": False, "act": "relu", "stride": 1},
        {"kernel": 5, "expand": 96, "out": 40, "se": True, "act": "hardswish", "stride": 2},
        {"kernel": 5, "expand": 240, "out": 40, "se": True, "act": "hardswish", "stride": 1},
        {"kernel": 5, "expand": 240, "out": 40, "se": True, "act": "hardswish", "stride": 1},
        {"kernel": 5, "expand": 120, "out": 48, "se": True, "act": "hardswish", "stride": 1},
        {"kernel": 5, "expand": 144, "out": 48, "se": True, "act": "hardswish", "stride": 1},
        {"kernel": 5, "expand": 288, "out": 96, "se": True, "act": "hardswish", "stride": 2},
        {"kernel": 5, "expand": 576, "out": 96, "se": True, "act": "hardswish", "stride": 1},
        {"kernel": 5, "expand": 576, "out": 96, "se": True, "act": "hardswish", "stride": 1},
    ]
    return {
        "event_detector": {"in_channels": 6, "input_len": 150,
                           "channels": [64, 64, 128, 128], "kernels": [10, 8, 6, 5],
                           "head": [512, 256, 128]},
        "imu_encoder": {"window_samples": 50, "in_width": 6, "channels": [64, 128, 256],
                        "kernel": 5, "hidden": 512, "embedding_dim": 256},
        "audio_encoder": {"in_frames": 63, "n_mels": 64, "stem_channels": 16,
                          "blocks": blocks, "head_channels": 576},
        "fusion": {"variant": "gated", "shared_dim": 256, "n_classes": n_classes,
                   "imu_dim": 256, "audio_dim": 576},
        "audio_frontend": {"sample_rate": 1000.0, "n_fft": 128, "hop": 16,
                           "center_pad": True, "n_mels": 64, "f_min": 0.0,
                           "f_max": 500.0, "norm": "peak-one", "amin": 1e-10,
                           "ref": 1.0, "top_db": 80.0, "window_samples": 1000,
                           "mel_weights": "audio_frontend/mel_w"},
        "class_names": [f"class_{i}" for i in range(n_classes)],
        "contexts": ["kitchen", "bathroom", "workshop", "misc"],
    }


def se_mid_channels(expand: int) -> int:
    return max(8, expand // 4)


def _same_pad_2d(x, kernel, stride):
    # TF SAME: total = max((ceil(L/s)-1)*s + k - L, 0), extra trailing
    pads = []
    for axis in (3, 2):  # F.pad wants (w_lo, w_hi, h_lo, h_hi)
        extent = x.shape[axis]
        out = -(-extent // stride)
        total = max((out - 1) * stride + kernel - extent, 0)
        pads.extend([total // 2, total - total // 2])
    return F.pad(x, pads)


class Activation(nn.Module):
    def __init__(self, kind: str):
        super().__init__()
        self.kind = kind

    def forward(self, x):
        if self.kind == "relu":
            return F.relu(x)
        if self.kind == "hardswish":
            return x * torch.clamp((x + 3.0) / 6.0, 0.0, 1.0)
        raise ValueError(self.kind)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        mid = se_mid_channels(channels)
        self.fc1 = nn.Linear(channels, mid)
        self.fc2 = nn.Linear(mid, channels)

    def forward(self, x):
        z = x.mean(dim=(2, 3))
        s = torch.clamp((self.fc2(F.relu(self.fc1(z))) + 3.0) / 6.0, 0.0, 1.0)
        return x * s[:, :, None, None]


class TorchEventDetector(nn.Module):
    """Depthwise-separable 1D CNN with batchnorm after each pointwise conv."""

    def __init__(self, cfg: dict):
        super().__init__()
        d = cfg["event_detector"]
        blocks = []
        c_in = d["in_channels"]
        for c_out, k in zip(d["channels"], d["kernels"]):
            blocks.append(nn.ModuleDict({
                "dw": nn.Conv1d(c_in, c_in, k, groups=c_in),
                "pw": nn.Conv1d(c_in, c_out, 1),
                "bn": nn.BatchNorm1d(c_out),
            }))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        length = d["input_len"]
        for k in d["kernels"]:
            length = (length - k + 1 - 2) // 2 + 1
        dims = [c_in * length] + list(d["head"]) + [1]
        self.head = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims, dims[1:]))

    def forward(self, x):  # (N, 6, 150), already z-scored per channel
        for block in self.blocks:
            x = block["bn"](block["pw"](block["dw"](x)))
            x = F.max_pool1d(F.relu(x), 2, 2)
        x = x.flatten(1)
        for i, fc in enumerate(self.head):
            x = fc(x)
            if i < len(self.head) - 1:
                x = F.relu(x)
        return torch.sigmoid(x)[:, 0]


class TorchImuEncoder(nn.Module):
    def __init__(self, cfg: dict):
        super().__init__()
        d = cfg["imu_encoder"]
        c_in, convs = 1, []
        for c_out in d["channels"]:
            convs.append(nn.Conv2d(c_in, c_out, (d["kernel"], 1)))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        t = d["window_samples"]
        for i in range(3):
            t = t - d["kernel"] + 1
            if i < 2:
                t = (t - 2) // 2 + 1
        self.fc0 = nn.Linear(c_in * t * d["in_width"], d["hidden"])
        self.drop = nn.Dropout(p=0.5)
        self.fc1 = nn.Linear(d["hidden"], d["embedding_dim"])

    def forward(self, x):  # (N, 1, T, 6), already z-scored per channel
        for i, conv in enumerate(self.convs):
            x = F.relu(conv(x))
            if i < 2:
                x = F.max_pool2d(x, (2, 1), (2, 1))
        x = self.drop(F.relu(self.fc0(x.flatten(1))))
        return self.fc1(x)


class InvertedResidual(nn.Module):
    def __init__(self, c_in: int, spec: dict):
        super().__init__()
        expand, out = spec["expand"], spec["out"]
        self.spec = spec
        self.use_skip = spec["stride"] == 1 and c_in == out
        self.act = Activation(spec["act"])
        if expand != c_in:
            self.expand = nn.Conv2d(c_in, expand, 1, bias=False)
            self.expand_bn = nn.BatchNorm2d(expand)
        else:
            self.expand = None
        self.dw = nn.Conv2d(expand, expand, spec["kernel"], stride=spec["stride"],
                            groups=expand, bias=False)
        self.dw_bn = nn.BatchNorm2d(expand)
        self.se = SqueezeExcite(expand) if spec["se"] else None
        self.project = nn.Conv2d(expand, out, 1, bias=False)
        self.project_bn = nn.BatchNorm2d(out)

    def forward(self, x):
        h = x
        if self.expand is not None:
            h = self.act(self.expand_bn(self.expand(h)))
        h = _same_pad_2d(h, self.spec["kernel"], self.spec["stride"])
        h = self.act(self.dw_bn(self.dw(h)))
        if self.se is not None:
            h = self.se(h)
        h = self.project_bn(self.project(h))
        return x + h if self.use_skip else h


class TorchAudioEncoder(nn.Module):
    def __init__(self, cfg: dict):
        super().__init__()
        d = cfg["audio_encoder"]
        self.stem = nn.Conv2d(1, d["stem_channels"], 3, stride=2, bias=False)
        self.stem_bn = nn.BatchNorm2d(d["stem_channels"])
        self.hswish = Activation("hardswish")
        blocks, c_in = [], d["stem_channels"]
        for spec in d["blocks"]:
            blocks.append(InvertedResidual(c_in, spec))
            c_in = spec["out"]
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(c_in, d["head_channels"], 1, bias=False)
        self.head_bn = nn.BatchNorm2d(d["head_channels"])

    def forward(self, x):  # (N, 1, frames, n_mels)
        x = _same_pad_2d(x, 3, 2)
        x = self.hswish(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        x = self.hswish(self.head_bn(self.head(x)))
        return x.mean(dim=(2, 3))


class TorchFrontend(nn.Module):
    """Conv-STFT + mel projection + clamped dB, matching the engine math."""

    def __init__(self, cfg: dict):
        super().__init__()
        d = cfg["audio_frontend"]
        self.n_fft = d["n_fft"]
        self.hop = d["hop"]
        self.center_pad = d["center_pad"]
        self.amin = d["amin"]
        self.ref = d["ref"]
        self.top_db = d["top_db"]
        n = np.arange(self.n_fft, dtype=np.float64)
        k = np.arange(self.n_fft // 2 + 1, dtype=np.float64)[:, None]
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.n_fft)
        phase = 2.0 * np.pi * k * n / self.n_fft
        real = torch.from_numpy((w * np.cos(phase)).astype(np.float32))
        imag = torch.from_numpy((-w * np.sin(phase)).astype(np.float32))
        self.register_buffer("real_kernels", real[:, None, :])
        self.register_buffer("imag_kernels", imag[:, None, :])
        fb = triangular_mel_filterbank(d)
        self.mel = nn.Linear(self.n_fft // 2 + 1, d["n_mels"], bias=False)
        with torch.no_grad():
            self.mel.weight.copy_(torch.from_numpy(fb))

    def forward(self, wave):  # (N, L)
        x = wave[:, None, :]
        if self.center_pad:
            x = F.pad(x, (self.n_fft // 2, self.n_fft // 2), mode="reflect")
        re = F.conv1d(x, self.real_kernels, stride=self.hop)
        im = F.conv1d(x, self.imag_kernels, stride=self.hop)
        power = (re * re + im * im).transpose(1, 2)  # (N, frames, bins)
        mel_power = self.mel(power)
        db = 10.0 * torch.log10(torch.clamp(mel_power, min=self.amin))
        db = db - 10.0 * math.log10(max(self.amin, self.ref))
        floor = db.amax(dim=(1, 2), keepdim=True) - self.top_db
        return torch.maximum(db, floor)


def triangular_mel_filterbank(frontend_cfg: dict) -> np.ndarray:
    """Triangular init (peak-one norm), same formula family as the engine."""
    n_fft = frontend_cfg["n_fft"]
    sr = frontend_cfg["sample_rate"]
    n_mels = frontend_cfg["n_mels"]
    mel = lambda f: 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)
    inv = lambda m: 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)
    corners = inv(np.linspace(mel(frontend_cfg["f_min"]), mel(frontend_cfg["f_max"]),
                              n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1, dtype=np.float64) * sr / n_fft
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, center, hi = corners[m], corners[m + 1], corners[m + 2]
        rising = (bin_hz - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    fb /= fb.max(axis=1, keepdims=True)
    return fb.astype(np.float32)


class TorchFusion(nn.Module):
    def __init__(self, cfg: dict):
        super().__init__()
        d = cfg["fusion"]
        if d["variant"] != "gated":
            raise ValueError(f"exporter reference model implements the gated variant, "
                             f"got {d['variant']!r}")
        shared = d["shared_dim"]
        self.proj_imu = nn.Linear(d["imu_dim"], shared)
        self.proj_audio = nn.Linear(d["audio_dim"], shared)
        self.gate_imu = nn.Linear(shared, shared)
        self.gate_audio = nn.Linear(shared, shared)
        self.fuse = nn.Linear(shared, shared)
        self.head = nn.Linear(shared, d["n_classes"])

    def forward(self, imu_emb, audio_emb):
        p_i = self.proj_imu(imu_emb)
        p_a = self.proj_audio(audio_emb)
        g_i = torch.sigmoid(self.gate_imu(p_i))
        g_a = torch.sigmoid(self.gate_audio(p_a))
        return self.head(self.fuse(g_i * p_i + g_a * p_a))


class TorchClassifier(nn.Module):
    """Frontend + both encoders + gated fusion; the trainable unit."""

    def __init__(self, cfg: dict):
        super().__init__()
        self.frontend = TorchFrontend(cfg)
        self.audio_encoder = TorchAudioEncoder(cfg)
        self.imu_encoder = TorchImuEncoder(cfg)
        self.fusion = TorchFusion(cfg)

    def forward(self, imu_window, wave):
        mel_image = self.frontend(wave)[:, None, :, :]
        audio_emb = self.audio_encoder(mel_image)
        imu_emb = self.imu_encoder(imu_window)
        return self.fusion(imu_emb, audio_emb)


def randomize_batchnorm_stats(model: nn.Module, seed: int = 0) -> None:
    """Give running stats non-trivial values so folding is actually tested."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
                module.running_mean.copy_(
                    0.3 * torch.randn(module.num_features, generator=gen))
                module.running_var.copy_(
                    0.5 + torch.rand(module.num_features, generator=gen))
                module.weight.copy_(
                    0.5 + torch.rand(module.num_features, generator=gen))
                module.bias.copy_(
                    0.3 * torch.randn(module.num_features, generator=gen))


def build_models(cfg: dict, seed: int = 0):
    """Randomly initialized detector + classifier in eval mode."""
    torch.manual_seed(seed)
    detector = TorchEventDetector(cfg)
    classifier = TorchClassifier(cfg)
    randomize_batchnorm_stats(detector, seed + 1)
    randomize_batchnorm_stats(classifier, seed + 2)
    detector.eval()
    classifier.eval()
    return detector, classifier


def full_state_dict(cfg: dict, seed: int = 0) -> dict:
    """One flat tensor dictionary holding both models (the checkpoint)."""
    detector, classifier = build_models(cfg, seed)
    state = {}
    for prefix, model in (("detector", detector), ("classifier", classifier)):
        for name, tensor in model.state_dict().items():
            state[f"{prefix}.{name}"] = tensor
    return state
