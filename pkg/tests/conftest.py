"""Shared expensive fixtures: generated archives and one replayed session."""

import pytest

from whar.harness.fixtures import gen_fixtures
from whar.models import ModelBundle
from whar.stream import PipelineConfig, run_session


@pytest.fixture(scope="session")
def fixtures42():
    return gen_fixtures(seed=42, preset_name="samosa-1k")


@pytest.fixture(scope="session")
def energy_bundle(fixtures42):
    return ModelBundle.from_archive(fixtures42.energy_archive)


@pytest.fixture(scope="session")
def default_cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def s00_replay(fixtures42, energy_bundle, default_cfg):
    """(events, telemetry) of the planted-motion session through the energy
    archive; replayed once per test run."""
    telemetry = {}
    events = run_session(fixtures42.sessions[0], energy_bundle, default_cfg,
                         telemetry=telemetry)
    return events, telemetry


@pytest.fixture(scope="session")
def s02_replay(fixtures42, energy_bundle, default_cfg):
    """All-idle session replay (the gating/privacy contract probe)."""
    telemetry = {}
    events = run_session(fixtures42.sessions[2], energy_bundle, default_cfg,
                         telemetry=telemetry)
    return events, telemetry
