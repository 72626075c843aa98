"""Cell chain dynamics: steps, flow breakdowns, invariance, equilibria."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from freeflow.errors import ModelValidationError, NoEquilibriumError, ScenarioError
from freeflow.model import CellParams, FreewayModel

from conftest import mainline_demand, random_states, toy_demand


class TestStepOracle:
    """Hand-worked single steps, frozen to exact fractions."""

    def test_mainline_congested_step(self, mainline5):
        x = np.array([60.0, 57.0, 58.0, 60.0, 62.0])
        u = np.array([19.99, 0.0, 0.0, 0.0, 0.0])
        x1, flows = mainline5.step(x, u, d=0.5)

        # demands: 25 - (x - 55) * 5/23 upstream, 20 - (x - 55) * 4/23 at the end
        assert_allclose(
            mainline5.demand_values(x),
            [550 / 23, 565 / 23, 560 / 23, 550 / 23, 432 / 23],
            rtol=1e-13,
        )
        # supplies bind at every interface, so the pass-through fractions
        # are pure supply/demand ratios and the priorities drop out
        assert_allclose(flows.split, [1.0, 112 / 113, 55 / 56, 216 / 275], rtol=1e-13)
        assert_allclose(
            x1,
            [
                56.07695652173913,
                57 - 10 / 23,
                58 + 10 / 23,
                60 + 118 / 23,
                62.0,
            ],
            rtol=1e-13,
        )
        assert_allclose(flows.accept, [1.0, 1.0, 1.0, 1.0, 1.0])
        assert_allclose(flows.offramp[:4], 0.0)
        assert_allclose(flows.offramp[4], 432 / 23, rtol=1e-13)

    def test_toy_step_with_mixed_priorities(self, toy3):
        x = np.array([9.0, 8.0, 2.0])
        u = np.array([3.0, 1.0, 0.5])
        x1, flows = toy3.step(x, u, d=np.array([0.25, 0.75]))

        assert_allclose(flows.inflow, [1.0, 2.0, 2.2], rtol=1e-13)
        assert flows.split[0] == pytest.approx(0.48828125, abs=1e-15)
        assert flows.split[1] == 1.0
        assert_allclose(flows.accept, [1 / 3, 0.75, 1.0], rtol=1e-13)
        assert flows.outflow[0] == pytest.approx(1.5625, abs=1e-14)
        assert_allclose(x1, [8.4375, 6.6, 2.6], rtol=1e-13)
        # outflow fractions: exit splits 0.2 / 0.5 / 1
        assert_allclose(flows.offramp, 0.2 * flows.outflow * [1, 2.5, 5], rtol=1e-13)
        assert_allclose(flows.mainstream[-1], 0.0)

    def test_priority_extremes_bracket_the_split(self, toy3):
        x = np.array([9.0, 8.0, 2.0])
        u = np.array([3.0, 1.0, 0.5])
        lo = toy3.step(x, u, d=0.0)[1].split
        hi = toy3.step(x, u, d=1.0)[1].split
        mid = toy3.step(x, u, d=0.5)[1].split
        assert np.all(lo <= mid + 1e-15) and np.all(mid <= hi + 1e-15)
        assert_allclose(mid, 0.5 * (lo + hi), rtol=1e-13)

    def test_priorities_irrelevant_without_downstream_ramps(self, mainline5, rng):
        X = random_states(mainline5, 64, rng)
        U = np.zeros((64, 5))
        U[:, 0] = rng.uniform(0.0, 30.0, size=64)
        base, _ = mainline5.step_batch(X, U, 0.0)
        for d in (0.3, 0.5, 1.0):
            other, _ = mainline5.step_batch(X, U, d)
            assert np.array_equal(base, other)


class TestInvariance:
    def test_counts_stay_in_band(self, mainline5, rng):
        X = random_states(mainline5, 512, rng)
        U = rng.uniform(0.0, 30.0, size=(512, 5))
        D = rng.uniform(0.0, 1.0, size=(512, 4))
        X1, _ = mainline5.step_batch(X, U, D)
        assert np.all(X1 > 0.0)
        assert np.all(X1 <= mainline5.jams * (1.0 + 1e-14))

    def test_counts_stay_in_band_toy(self, toy3, rng):
        X = random_states(toy3, 512, rng)
        U = rng.uniform(0.0, 6.0, size=(512, 3))
        D = rng.uniform(0.0, 1.0, size=(512, 2))
        X1, _ = toy3.step_batch(X, U, D)
        assert np.all(X1 > 0.0)
        assert np.all(X1 <= toy3.jams * (1.0 + 1e-14))

    def test_iterated_steps_stay_in_band(self, ramp4, rng):
        x = ramp4.jams * 0.999
        for _ in range(200):
            u = rng.uniform(0.0, 40.0, size=4)
            d = rng.uniform(0.0, 1.0, size=3)
            x, _ = ramp4.step(x, u, d)
            assert np.all(x > 0.0) and np.all(x <= ramp4.jams * (1.0 + 1e-14))


class TestConservation:
    """Position-weighted total count balances inflows against discharges.

    With weights n+1-i, one step changes the total by the weighted sum
    of accepted ramp flows minus sum over cells of
    (1 + exit_split * (n - i)) * outflow.
    """

    @pytest.mark.parametrize("fixture", ["mainline5", "toy3", "ramp4"])
    def test_identity(self, fixture, rng, request):
        model = request.getfixturevalue(fixture)
        n = model.n
        iw = np.arange(n, 0, -1.0)
        X = random_states(model, 256, rng)
        U = rng.uniform(0.0, 30.0, size=(256, n))
        D = rng.uniform(0.0, 1.0, size=(256, n - 1))
        X1, flows = model.step_batch(X, U, D)
        gain = (flows.accept * U) @ iw
        drain = flows.outflow @ (1.0 + model.exit_splits * (iw - 1.0))
        assert_allclose(X1 @ iw, X @ iw + gain - drain, rtol=1e-9, atol=1e-9)


class TestFixedPoints:
    def test_congested_attractor_is_fixed(self, mainline5):
        x = np.array([91.8, 91.8, 91.8, 91.8, 72.25])
        u = np.array([19.99, 0.0, 0.0, 0.0, 0.0])
        for d in (0.0, 0.25, 0.5, 1.0):
            x1, _ = mainline5.step(x, u, d)
            assert_allclose(x1, x, rtol=0, atol=1e-12)

    def test_equilibrium_is_fixed_for_any_priority(self, toy3):
        u = np.array([3.0, 1.0, 0.5])
        x_star, _ = toy3.equilibrium_from_inflows(u)
        for d in (0.0, 0.5, 1.0):
            x1, _ = toy3.step(x_star, u, d)
            assert_allclose(x1, x_star, rtol=0, atol=1e-12)

    def test_free_flow_cascade(self, mainline5):
        x = np.array([30.0, 40.0, 25.0, 35.0, 45.0])
        u = np.array([5.0, 1.0, 0.5, 2.0, 0.0])
        f = mainline5.demand_values(x)
        expected = np.empty(5)
        expected[0] = (x[0] - f[0]) + u[0]
        for i in range(1, 5):
            expected[i] = (x[i] - f[i]) + (u[i] + f[i - 1])
        x1, flows = mainline5.step(x, u, d=0.5)
        assert_allclose(x1, expected, rtol=0, atol=1e-12)
        assert_allclose(flows.split, 1.0)
        assert_allclose(flows.accept, 1.0)


class TestEquilibrium:
    def test_mainline_closed_form(self, mainline5):
        x_star, phi = mainline5.equilibrium_from_inflows([19.99, 0, 0, 0, 0])
        assert_allclose(x_star, [43.978] * 4 + [54.9725], rtol=1e-13)
        assert_allclose(phi, 19.99, rtol=1e-13)

    def test_toy_closed_form(self, toy3):
        x_star, phi = toy3.equilibrium_from_inflows([3.0, 1.0, 0.5])
        assert_allclose(phi, [3.0, 3.4, 2.2], rtol=1e-13)
        assert_allclose(x_star, [3.75, 4.25, 2.75], rtol=1e-13)

    def test_no_margin_at_the_bottleneck(self, mainline5):
        with pytest.raises(NoEquilibriumError) as err:
            mainline5.equilibrium_from_inflows([20.0, 0, 0, 0, 0])
        assert err.value.cell == 5

    def test_flow_above_peak_rejected(self, toy3):
        with pytest.raises(NoEquilibriumError) as err:
            toy3.equilibrium_from_inflows([3.0, 2.0, 0.0])
        assert err.value.cell == 2

    def test_zero_flow_rejected(self, toy3):
        with pytest.raises(NoEquilibriumError) as err:
            toy3.equilibrium_from_inflows([0.0, 0.0, 1.0])
        assert err.value.cell == 1


class TestValidation:
    def test_state_outside_band_rejected(self, toy3):
        u = np.zeros(3)
        with pytest.raises(ModelValidationError, match="cell 2"):
            toy3.step(np.array([1.0, 0.0, 1.0]), u)
        with pytest.raises(ModelValidationError, match="cell 3"):
            toy3.step(np.array([1.0, 1.0, 10.1]), u)
        with pytest.raises(ModelValidationError, match="cell 1"):
            toy3.step(np.array([np.nan, 1.0, 1.0]), u)

    def test_negative_control_rejected(self, toy3):
        with pytest.raises(ModelValidationError, match="inflow"):
            toy3.step(np.ones(3), np.array([1.0, -0.1, 0.0]))

    def test_priority_outside_unit_interval_rejected(self, toy3):
        with pytest.raises(ModelValidationError, match="priorities"):
            toy3.step(np.ones(3), np.zeros(3), d=1.5)

    def test_chain_needs_three_cells(self):
        cell = CellParams(10.0, 1.0, 4.0, 1.0, toy_demand())
        with pytest.raises(ModelValidationError, match="3 cells"):
            FreewayModel((cell, cell))

    def test_last_cell_must_exit_fully(self):
        mid = CellParams(10.0, 1.0, 4.0, 0.2, toy_demand())
        with pytest.raises(ModelValidationError, match="last cell"):
            FreewayModel((mid, mid, mid))

    def test_interior_cell_cannot_exit_fully(self):
        mid = CellParams(10.0, 1.0, 4.0, 0.2, toy_demand())
        last = CellParams(10.0, 1.0, 4.0, 1.0, toy_demand())
        with pytest.raises(ModelValidationError, match="cell 2"):
            FreewayModel((mid, last, last))

    def test_demand_jam_mismatch_names_cell(self):
        bad = CellParams(12.0, 1.0, 4.0, 0.2, toy_demand())
        last = CellParams(10.0, 1.0, 4.0, 1.0, toy_demand())
        with pytest.raises(ModelValidationError, match="cell 1"):
            FreewayModel((bad, last, last))

    def test_supply_gain_bounds(self):
        with pytest.raises(ModelValidationError, match="supply gain"):
            CellParams(10.0, 1.2, 4.0, 0.2, toy_demand()).validate()


class TestSerialization:
    def test_roundtrip(self, mainline5):
        doc = mainline5.to_dict()
        again = FreewayModel.from_dict(doc)
        assert again == mainline5

    def test_unknown_cell_key_rejected(self):
        cell = CellParams(10.0, 1.0, 4.0, 1.0, toy_demand()).to_dict()
        cell["lanes"] = 3
        with pytest.raises(ScenarioError, match="lanes"):
            FreewayModel.from_dict({"cells": [cell, cell, cell]})


def test_supply_formula(mainline5):
    x = np.array([60.0, 57.0, 58.0, 60.0, 62.0])
    assert_allclose(
        mainline5.supply(x),
        [550 / 23, 565 / 23, 560 / 23, 550 / 23, 432 / 23],
        rtol=1e-13,
    )


def test_mainline_demand_fixture_certificates(mainline5):
    holds = [cert.hold_lipschitz for cert in mainline5.certificates]
    assert_allclose(holds, [6 / 11] * 4 + [7 / 11], rtol=1e-13)
