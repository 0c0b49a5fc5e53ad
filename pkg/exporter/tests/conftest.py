import os

import pytest
import torch

from whar_export import default_name_map, samosa_config
from whar_export.torch_models import full_state_dict


@pytest.fixture(scope="session")
def config():
    return samosa_config()


@pytest.fixture(scope="session")
def checkpoint(config, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    torch.save(full_state_dict(config, seed=3), path)
    return path


@pytest.fixture(scope="session")
def rules(config):
    return default_name_map(config)


@pytest.fixture(scope="session")
def exported_archive(checkpoint, rules, config, tmp_path_factory):
    from whar_export import export_checkpoint
    path = tmp_path_factory.mktemp("archive") / "model.whar"
    export_checkpoint(checkpoint, rules, path, config)
    return path
