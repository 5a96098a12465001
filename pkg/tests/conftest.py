import math

import numpy as np
import pytest

from ris_lab.channel import dbm_to_watts
from ris_lab.codebooks import build_beam_codebook, build_phase_codebook, default_directions
from ris_lab.grid import default_grid, grid_from_layout
from ris_lab.models import ArrayGeometry, ChannelParams, DynamicsParams, LinkBudget, Scenario, ToyGameSpec


def make_scenario(grid=None, n_beams=4, n_phases=3, frozen=False, n_rays=3, geometry=None) -> Scenario:
    grid = default_grid() if grid is None else grid
    geometry = geometry or ArrayGeometry(n_ap=4, n_ue=2, ris_h=2, ris_v=2)
    return Scenario(
        grid=grid,
        geometry=geometry,
        budget=LinkBudget(tx_power=dbm_to_watts(46), bandwidth=1e9, noise_density=dbm_to_watts(-88)),
        beams=build_beam_codebook(n_beams),
        phases=build_phase_codebook(geometry, math.pi / 5, (-math.pi / 2, math.pi / 2), default_directions(n_phases)),
        channel=ChannelParams(n_rays=n_rays),
        dynamics=DynamicsParams(frozen=frozen),
    )


@pytest.fixture
def scenario():
    return make_scenario()


@pytest.fixture
def open_scenario():
    # no walls and no surfaces: the direct link alone
    return make_scenario(grid=grid_from_layout(np.zeros((5, 7), dtype=bool), ap=(0, 2), ris=[]), n_beams=5)


@pytest.fixture
def two_arm_game():
    # arm 0 pays 0 or 2 with equal odds, arm 1 pays 0.6 for sure
    return ToyGameSpec(
        n_beams=2, n_phases=1, n_ris=0, horizon=1,
        rewards=[[0.0, 0.6], [2.0, 0.6]],
        transitions=[[0.5, 0.5], [0.5, 0.5]],
    )


@pytest.fixture
def frozen_game():
    # A=2, B=2, G=1, T=2; joint (1, 1) is best
    return ToyGameSpec(n_beams=2, n_phases=2, n_ris=1, horizon=2, rewards=[[0.2, 0.3, 0.4, 1.0]])
