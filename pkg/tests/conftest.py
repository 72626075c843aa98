"""Shared model fixtures.

Three networks are used throughout the suite:

* mainline5 -- five identical mainline cells with a slower final cell
  (bottleneck), no on-ramps, capacity drop after the peak.
* ramp4 -- four cells with an uncontrolled mid on-ramp.
* toy3 -- small three-cell network with ramps and exits, numbers chosen
  so every flow in a hand-worked step stays an exact binary fraction.
"""

import numpy as np
import pytest

from freeflow.demand import PiecewiseLinearDemand
from freeflow.model import CellParams, FreewayModel


def mainline_demand():
    # rises 5/11 up to 55 -> 25, drops to 18 at 87.2, flat to 170
    return PiecewiseLinearDemand(
        [[0.0, 0.0], [55.0, 25.0], [87.2, 18.0], [170.0, 18.0]], critical=55.0
    )


def bottleneck_demand():
    # rises 4/11 up to 55 -> 20, drops to 17 at 72.25, flat to 170
    return PiecewiseLinearDemand(
        [[0.0, 0.0], [55.0, 20.0], [72.25, 17.0], [170.0, 17.0]], critical=55.0
    )


def plateau_demand():
    # rises 9/10 up to 40 -> 36, drops to 35 at 370/9, flat to 80
    return PiecewiseLinearDemand(
        [[0.0, 0.0], [40.0, 36.0], [370.0 / 9.0, 35.0], [80.0, 35.0]], critical=40.0
    )


def toy_demand():
    return PiecewiseLinearDemand([[0.0, 0.0], [5.0, 4.0], [10.0, 3.0]], critical=5.0)


@pytest.fixture(scope="session")
def mainline5():
    main = mainline_demand()
    last = bottleneck_demand()
    cells = [
        CellParams(jam=170.0, supply_gain=25.0 / 115.0, inflow_cap=25.0, exit_split=0.0, demand=main)
        for _ in range(4)
    ]
    cells.append(
        CellParams(jam=170.0, supply_gain=20.0 / 115.0, inflow_cap=20.0, exit_split=1.0, demand=last)
    )
    return FreewayModel(cells)


@pytest.fixture(scope="session")
def ramp4():
    dem = plateau_demand()
    cells = [
        CellParams(jam=80.0, supply_gain=0.9, inflow_cap=36.0, exit_split=p, demand=dem)
        for p in (0.0, 0.0, 0.0, 1.0)
    ]
    return FreewayModel(cells)


@pytest.fixture(scope="session")
def toy3():
    dem = toy_demand()
    cells = [
        CellParams(jam=10.0, supply_gain=1.0, inflow_cap=4.0, exit_split=p, demand=dem)
        for p in (0.2, 0.5, 1.0)
    ]
    return FreewayModel(cells)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_states(model, m, rng):
    """Uniform sample of m valid states (0, a]."""
    a = np.array([cell.jam for cell in model.cells])
    return a * (1.0 - rng.uniform(size=(m, model.n)))
