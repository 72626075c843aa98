"""Controller tests: throttling feedback, PI regulator bank, constants."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_states
from freeflow.control import (
    ConstantInflow,
    RlbPiController,
    RlbPiParams,
    RlbPiState,
    StabilizingFeedback,
)
from freeflow.synthesis import synthesize

MAINLINE_INFLOWS = np.array([19.99, 0.0, 0.0, 0.0, 0.0])
CONGESTED = np.array([60.0, 57.0, 58.0, 60.0, 62.0])


@pytest.fixture(scope="module")
def tuned(mainline5):
    """Hand-tuned law on the bottleneck corridor: weight 0.7, gain 0.6,
    floor 0.2 on the single metered inflow."""
    x_star, _ = mainline5.equilibrium_from_inflows(MAINLINE_INFLOWS)
    return StabilizingFeedback(
        x_star=x_star,
        u_star=MAINLINE_INFLOWS,
        sigma=0.7,
        R=(1,),
        gamma=(0.6,),
        b=(0.2,),
    )


class TestStabilizingFeedback:
    def test_congestion_excess_value(self, tuned):
        """Hand sum of 0.7^i max(0, x_i - x_i*) for x = (60, 57, 58, 60, 62):
        0.7*16.022 + 0.49*13.022 + 0.343*14.022 + 0.2401*16.022
        + 0.16807*7.0275 = 27.433720125."""
        assert_allclose(tuned.xi(CONGESTED), 27.433720125, rtol=1e-9)

    def test_excess_zero_at_equilibrium(self, tuned):
        assert tuned.xi(np.array(tuned.x_star)) == 0.0
        u, state = tuned.command(np.array(tuned.x_star))
        assert_allclose(u, MAINLINE_INFLOWS, rtol=0, atol=0)
        assert state is None

    def test_excess_ignores_underfull_cells(self, tuned):
        assert tuned.xi(np.full(5, 1.0)) == 0.0

    def test_excess_linear_in_active_cell(self, tuned):
        bumped = CONGESTED.copy()
        bumped[0] += 1.0
        assert_allclose(tuned.xi(bumped) - tuned.xi(CONGESTED), 0.7, rtol=1e-12)

    def test_command_value(self, tuned):
        """u_1 = max(19.99 - 0.6 * 27.433720125, 0.2) = 3.529767925."""
        u, _ = tuned.command(CONGESTED)
        assert_allclose(u[0], 3.529767925, rtol=1e-9)
        assert np.all(u[1:] == 0.0)

    def test_floor_engages_under_heavy_congestion(self, tuned):
        u, _ = tuned.command(np.full(5, 170.0))
        assert u[0] == 0.2

    def test_command_range(self, tuned, rng, mainline5):
        U = tuned.command_batch(random_states(mainline5, 500, rng))
        assert np.all(U[:, 0] >= 0.2)
        assert np.all(U[:, 0] <= 19.99)

    def test_batch_matches_single(self, tuned, rng, mainline5):
        X = random_states(mainline5, 64, rng)
        U = tuned.command_batch(X)
        for row, x in zip(U, X):
            u, _ = tuned.command(x)
            assert np.array_equal(row, u)

    def test_lipschitz_in_state(self, tuned, rng, mainline5):
        """|k_i(x) - k_i(y)| <= gamma_i sum_j sigma^j |x_j - y_j|."""
        X = random_states(mainline5, 200, rng)
        Y = random_states(mainline5, 200, rng)
        wpow = 0.7 ** np.arange(1, 6)
        UX = tuned.command_batch(X)
        UY = tuned.command_batch(Y)
        bound = 0.6 * (np.abs(X - Y) @ wpow)
        assert np.all(np.abs(UX[:, 0] - UY[:, 0]) <= bound + 1e-12)

    def test_from_certificate(self, toy3):
        cert = synthesize(toy3, [3.0, 1.0, 0.5])
        fb = StabilizingFeedback.from_certificate(cert)
        assert fb.x_star == cert.x_star
        assert fb.u_star == cert.u_star
        assert fb.sigma == cert.sigma
        assert fb.R == cert.R
        assert fb.gamma == cert.gamma
        assert fb.b == cert.b
        u, _ = fb.command(np.array(cert.x_star))
        assert_allclose(u, cert.u_star, rtol=0, atol=1e-15)

    def test_validation(self, tuned):
        good = dict(
            x_star=tuned.x_star,
            u_star=tuned.u_star,
            sigma=0.7,
            R=(1,),
            gamma=(0.6,),
            b=(0.2,),
        )
        with pytest.raises(ValueError, match="weight"):
            StabilizingFeedback(**{**good, "sigma": 0.0})
        with pytest.raises(ValueError, match="gains"):
            StabilizingFeedback(**{**good, "gamma": (-0.5,)})
        with pytest.raises(ValueError, match="floor"):
            StabilizingFeedback(**{**good, "b": (19.99,)})
        with pytest.raises(ValueError, match="floor"):
            StabilizingFeedback(**{**good, "R": (2,), "b": (0.2,)})
        with pytest.raises(ValueError, match="controlled"):
            StabilizingFeedback(**{**good, "R": (), "gamma": (), "b": ()})
        with pytest.raises(ValueError, match="align"):
            StabilizingFeedback(**{**good, "gamma": (0.6, 0.6)})


class TestRlbPi:
    def test_first_step_values(self, mainline5):
        """With x(-1) = x(0) the proportional term vanishes, the ceiling is
        min(25, (5/23)(170 - 60), 20) + 4 = 24, and each regulator moves by
        (55 - x_i)/90; the smoothed minimum sits at cell 5, whose
        unsmoothed value 20 - 7/90 becomes the command."""
        ctl = RlbPiController(mainline5)
        state = ctl.init_state(CONGESTED)
        u, state = ctl.command(CONGESTED, state, 0)
        expected_v = 20.0 + (55.0 - CONGESTED) / 90.0
        assert_allclose(u[0], 20.0 - 7.0 / 90.0, rtol=1e-12)
        assert np.all(u[1:] == 0.0)
        assert_allclose(state.v, expected_v, rtol=1e-12)
        assert_allclose(state.v_sm, 0.5 * expected_v + 10.0, rtol=1e-12)
        assert state.u_prev == u[0]
        assert state.x_prev == tuple(CONGESTED)

    def test_init_state(self, mainline5):
        ctl = RlbPiController(mainline5, RlbPiParams(initial_command=25.0))
        state = ctl.init_state(CONGESTED)
        assert state.v == (25.0,) * 5
        assert state.v_sm == (25.0,) * 5
        assert state.u_prev == 25.0
        assert state.x_prev == tuple(CONGESTED)

    def test_saturates_at_floor_when_jammed(self, mainline5):
        """A jump to the jam density drives every regulator to the floor:
        the proportional term alone is -(5/18)*110 on cell 1."""
        ctl = RlbPiController(mainline5)
        state = ctl.init_state(CONGESTED)
        _, state = ctl.command(CONGESTED, state, 0)
        u, _ = ctl.command(np.full(5, 170.0), state, 1)
        assert u[0] == 0.2

    def test_tie_selects_smallest_index(self, mainline5):
        """Regulators 2 and 3 tie in smoothed value (4.5) while their
        unsmoothed values differ (2 vs 3); the command must take the
        smaller index."""
        ctl = RlbPiController(mainline5)
        state = RlbPiState(
            v=(1.0, 2.0, 3.0, 4.0, 5.0),
            v_sm=(9.0, 7.0, 6.0, 9.0, 9.0),
            u_prev=20.0,
            x_prev=(55.0,) * 5,
        )
        u, new_state = ctl.command(np.full(5, 55.0), state, 3)
        assert_allclose(new_state.v_sm[1], new_state.v_sm[2], rtol=0, atol=0)
        assert u[0] == 2.0

    def test_command_bounds_along_random_walk(self, mainline5, rng):
        """Commands stay inside [command_min, min(command_max,
        previous supply bound + headroom)] and the bank values stay in
        the command range after the first step."""
        ctl = RlbPiController(mainline5)
        X = random_states(mainline5, 50, rng)
        state = ctl.init_state(X[0])
        for t, x in enumerate(X):
            ceiling = (
                min(25.0, (25.0 / 115.0) * (170.0 - state.x_prev[0]), state.u_prev)
                + 4.0
            )
            u, state = ctl.command(x, state, t)
            assert 0.2 <= u[0] <= min(25.0, ceiling) + 1e-12
            assert np.all(np.asarray(state.v) >= 0.2)
            assert np.all(np.asarray(state.v) <= 25.0)
            assert np.all(np.asarray(state.v_sm) >= 0.2)
            assert np.all(np.asarray(state.v_sm) <= 25.0)

    def test_observe_tracks_realized_inflow_when_asked(self, mainline5):
        """Jammed cells accept nothing, so with tracking on the anti-windup
        bound collapses to the headroom alone on the following step."""
        x_jam = np.full(5, 170.0)
        tracking = RlbPiController(
            mainline5, RlbPiParams(track_realized_inflow=True)
        )
        state = tracking.init_state(x_jam)
        u, state = tracking.command(x_jam, state, 0)
        _, flows = mainline5.step(x_jam, u)
        assert flows.inflow[0] == 0.0
        state = tracking.observe(state, flows)
        assert state.u_prev == 0.0
        u, state = tracking.command(x_jam, state, 1)
        assert u[0] <= 4.0

        plain = RlbPiController(mainline5)
        state = plain.init_state(x_jam)
        u, state = plain.command(x_jam, state, 0)
        before = state.u_prev
        state = plain.observe(state, flows)
        assert state.u_prev == before

    def test_pass_through_inflows(self, toy3):
        ctl = RlbPiController(toy3, other_inflows=(0.7, 0.3))
        state = ctl.init_state(np.array([5.0, 5.0, 5.0]))
        u, _ = ctl.command(np.array([5.0, 5.0, 5.0]), state, 0)
        assert np.array_equal(u[1:], [0.7, 0.3])

    def test_default_setpoints_are_critical_densities(self, mainline5, toy3):
        assert np.array_equal(
            RlbPiController(mainline5).setpoints, np.full(5, 55.0)
        )
        assert np.array_equal(RlbPiController(toy3).setpoints, np.full(3, 5.0))

    def test_validation(self, mainline5):
        with pytest.raises(ValueError, match="smoothing"):
            RlbPiParams(smoothing=1.0)
        with pytest.raises(ValueError, match="gains"):
            RlbPiParams(proportional_gain=0.0)
        with pytest.raises(ValueError, match="command_min"):
            RlbPiParams(command_min=30.0)
        with pytest.raises(ValueError, match="setpoint"):
            RlbPiController(mainline5, RlbPiParams(setpoints=(55.0, 55.0)))
        with pytest.raises(ValueError, match="pass-through"):
            RlbPiController(mainline5, other_inflows=(1.0,))
        with pytest.raises(ValueError, match="state"):
            RlbPiController(mainline5).command(CONGESTED, None, 0)


class TestConstantInflow:
    def test_returns_configured_vector(self):
        ctl = ConstantInflow((19.99, 0.0, 0.0, 0.0, 0.0))
        state = ctl.init_state(CONGESTED)
        u, state = ctl.command(np.full(5, 170.0), state, 7)
        assert np.array_equal(u, [19.99, 0.0, 0.0, 0.0, 0.0])
        assert state is None
        assert ctl.observe(state, None) is None

    def test_validation(self):
        with pytest.raises(ValueError, match="nonnegative"):
            ConstantInflow((1.0, -2.0, 0.0))
