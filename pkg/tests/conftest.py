import os

import numpy as np
import pytest

from harness import parse_config
from models import RunConfig

TINY_CONFIG = """
[topology]
aps_per_ec = 2
transmitters = 4

[drl]
batch_size = 8
update_period = 5
hidden_layers = 8

[replay]
capacity = 200

[federate]
rounds = 3
steps_per_round = 20

[experiment]
seeds = 1,2
final_k = 2
"""


def make_config(**sections) -> RunConfig:
    """RunConfig from per-section override dicts, e.g. make_config(drl={"gamma": 0.9})."""
    return RunConfig.model_validate(sections)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config_text():
    return TINY_CONFIG


@pytest.fixture
def tiny_config():
    return parse_config(TINY_CONFIG)


@pytest.fixture
def static_config():
    """Deterministic link budget: no shadowing, no fading, no interference, no mobility."""
    return make_config(
        topology={"aps_per_ec": 2, "transmitters": 4, "speed": 0.0, "coverage_radius": 10.0},
        channel={"shadowing_sigma": 0.0, "fading_model": "none", "interference_mode": "noise_limited"},
    )


@pytest.fixture
def output_dir(tmp_path):
    out = tmp_path / "results"
    out.mkdir()
    return out


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FEDRAN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set FEDRAN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
