"""Event-gated multimodal activity recognition engine.

A cheap IMU-only detector runs continuously over a 3 s rolling window;
when its smoothed output crosses a threshold the microphone is switched
on and an audio+IMU classifier runs on aligned 1 s windows. The audio
preprocessing (STFT, mel filterbank, dB conversion) is expressed as
network layers so the whole classifier is a single inference graph.
"""

from .archive import WeightArchive, read_archive, write_archive
from .models import ModelBundle, count_flops, load_models, quantize_archive_f16
from .presets import PRESETS, get_preset
from .stream import PipelineConfig, PredictionEvent, run_session
from .tensor import Tensor, to_f16_roundtrip

__all__ = [
    "PRESETS",
    "ModelBundle",
    "PipelineConfig",
    "PredictionEvent",
    "Tensor",
    "WeightArchive",
    "count_flops",
    "get_preset",
    "load_models",
    "quantize_archive_f16",
    "read_archive",
    "run_session",
    "to_f16_roundtrip",
    "write_archive",
]

__version__ = "0.1.0"
