"""Checkpoint exporter for the WHAR engine.

Converts PyTorch ``state_dict`` checkpoints into the engine's archive
format (folding batchnorms on the way) and emits parity fixtures: random
inputs paired with training-stack forward outputs, so the engine can
assert numerical agreement without ever reading a checkpoint itself.
"""

from .export import MappingError, emit_parity_fixtures, export_checkpoint
from .namemap import Rule, default_name_map, load_name_map, write_name_map
from .torch_models import TorchClassifier, TorchEventDetector, samosa_config

__all__ = [
    "MappingError",
    "Rule",
    "TorchClassifier",
    "TorchEventDetector",
    "default_name_map",
    "emit_parity_fixtures",
    "export_checkpoint",
    "load_name_map",
    "samosa_config",
    "write_name_map",
]

__version__ = "0.1.0"
