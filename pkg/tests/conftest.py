from __future__ import annotations

import pytest

from stixelflow.domain import DomainBox
from stixelflow.grids import StixelConfig
from stixelflow.synth import generate_world, sample_observations


@pytest.fixture(scope="session")
def domain() -> DomainBox:
    return DomainBox(0.0, 100.0, 0.0, 100.0)


@pytest.fixture(scope="session")
def world(domain):
    return generate_world(7, domain, 4)


@pytest.fixture(scope="session")
def small_obs(world):
    """1,500 observations; enough for a handful of trained stixels."""
    return sample_observations(world, 1500, 7)


@pytest.fixture(scope="session")
def small_config() -> StixelConfig:
    return StixelConfig(cell_width_deg=25.0, cell_height_deg=25.0,
                        window_weeks=13, layers=3, min_train=10, seed=7)
