import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from distvolt.agent import (Agent, CostParams, InfeasibleLocalSet, Limits, Message, dual_update,
                            local_control, local_control_general, make_alpha, make_beta, update_z)

from oracles import grid_argmin_1d, grid_argmin_disk

finite = st.floats(-2, 2, allow_nan=False)


def one_bus(a_p=1.0, b_p=0.0, a_q=1.0, b_q=0.0, box=0.1, s_bar=None):
    cost = CostParams(a_p, b_p, 0.0, a_q, b_q, 0.0)
    lim = Limits(-box, box, -box, box, 0.9025, 1.1025, s_bar)
    return cost, lim


class TestParams:
    def test_a_min(self):
        c = CostParams([1.0, 0.5], [0, 0], [0, 0], [2.0, 3.0], [0, 0], [0, 0])
        assert c.a_min == 0.5

    def test_rejects_nonpositive_curvature(self):
        with pytest.raises(ValueError):
            CostParams.uniform(3, a_p=0.0)

    def test_limits_validation(self):
        with pytest.raises(ValueError):
            Limits(0.1, -0.1, -0.1, 0.1, 0.9, 1.1)
        with pytest.raises(ValueError):
            Limits(-0.1, 0.1, -0.1, 0.1, 1.1, 1.1)
        with pytest.raises(ValueError):
            Limits(-0.1, 0.1, -0.1, 0.1, 0.9, 1.1, s_bar=0.0)

    def test_magnitudes_are_squared(self):
        lim = Limits.from_magnitudes(2, v_min=0.95, v_max=1.05)
        np.testing.assert_allclose(lim.v_lo, 0.9025)
        np.testing.assert_allclose(lim.v_hi, 1.1025)

    def test_total_cost(self):
        c = CostParams.uniform(2, a_p=2.0, b_p=1.0, c_p=0.5, a_q=4.0)
        assert c.total(np.array([1.0, 0.0]), np.array([0.5, 0.0])) == pytest.approx(
            (1 + 1 + 0.5) + 0.5 + 0.5)


class TestLocalControl:
    def test_origin(self):
        assert local_control(0.0, 0.0, *one_bus()) == (0.0, 0.0)

    def test_saturation_hand_value(self):
        p, _ = local_control(0.5, 0.0, *one_bus(a_p=2.0))
        assert p == 0.1

    @given(st.floats(0.1, 5), st.floats(-1, 1), finite, st.floats(0.01, 0.5))
    def test_matches_grid_argmin(self, a, b, z, box):
        cost, lim = one_bus(a_p=a, b_p=b, box=box)
        p, _ = local_control(z, 0.0, cost, lim)
        assert abs(p - grid_argmin_1d(a, b, z, -box, box)) <= 1e-6

    @given(finite, finite)
    def test_always_in_box(self, zp, zq):
        p, q = local_control(zp, zq, *one_bus())
        assert -0.1 <= p <= 0.1 and -0.1 <= q <= 0.1


class TestGeneralStep:
    def test_origin(self):
        assert local_control_general(0.0, 0.0, *one_bus(s_bar=0.05)) == (0.0, 0.0)

    @given(st.floats(-0.08, 0.08), st.floats(-0.08, 0.08))
    def test_inactive_disk_matches_box_step(self, zp, zq):
        cost, lim = one_bus(s_bar=0.2)
        assert local_control_general(zp, zq, cost, lim) == local_control(zp, zq, cost, lim)

    @given(st.floats(0.5, 3), st.floats(0.5, 3), st.floats(-1, 1), st.floats(-1, 1),
           st.floats(0.02, 0.12))
    def test_active_disk_matches_grid(self, ap, aq, zp, zq, s):
        cost, lim = one_bus(a_p=ap, a_q=aq, s_bar=s)
        bp, bq = local_control(zp, zq, cost, lim)
        assume(bp * bp + bq * bq > s * s * 1.01)
        p, q = local_control_general(zp, zq, cost, lim)
        assert p * p + q * q <= s * s + 1e-9
        gp, gq = grid_argmin_disk(ap, 0.0, zp, aq, 0.0, zq, -0.1, 0.1, -0.1, 0.1, s)
        assert abs(p - gp) <= 1e-6 and abs(q - gq) <= 1e-6

    def test_vectorised_matches_scalar(self, rng):
        n = 40
        cost = CostParams(rng.uniform(0.5, 2, n), rng.uniform(-0.1, 0.1, n), np.zeros(n),
                          rng.uniform(0.5, 2, n), rng.uniform(-0.1, 0.1, n), np.zeros(n))
        lim = Limits.from_magnitudes(n, s_bar=0.12)
        zp, zq = rng.uniform(-0.5, 0.5, (2, n))
        p, q = local_control_general(zp, zq, cost, lim)
        for k in range(n):
            pk, qk = local_control_general(zp[k], zq[k], cost.row(k), lim.row(k))
            assert p[k] == pk and q[k] == qk
        assert np.all(p * p + q * q <= 0.12**2 + 1e-9)

    def test_infeasible_set(self):
        cost = CostParams(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        lim = Limits(0.2, 0.3, 0.2, 0.3, 0.9, 1.1, s_bar=0.1)
        with pytest.raises(InfeasibleLocalSet):
            local_control_general(0.25, 0.25, cost, lim)


class TestPrices:
    def test_interior_voltage_keeps_zero(self):
        assert dual_update(0.0, 0.0, 1.0, 0.9025, 1.1025, 0.5) == (0.0, 0.0, 0.0)

    def test_on_upper_boundary(self):
        _, hi, _ = dual_update(0.0, 0.0, 1.1025, 0.9025, 1.1025, 0.5)
        assert hi == 0.0

    def test_lower_hand_value(self):
        lo, hi, lam = dual_update(0.2, 0.0, 0.8825, 0.9025, 1.1025, 0.5)
        assert lo == pytest.approx(0.21, abs=1e-15) and hi == 0.0 and lam == lo

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0.5, 1.5), st.floats(1e-4, 10))
    def test_nonnegative(self, lo, hi, v, g):
        a, b, lam = dual_update(lo, hi, v, 0.9025, 1.1025, g)
        assert a >= 0 and b >= 0 and lam == a - b


class TestMessages:
    def test_alpha_leaf(self):
        assert make_alpha(0.3, {}) == 0.3

    def test_alpha_hand_sum(self):
        assert make_alpha(0.1, {4: 0.2, 5: -0.05}) == pytest.approx(0.25)

    def test_beta_all_zero(self):
        assert make_beta(0.0, 2, {2: 0.0}, (0.0, 0.0), 0.4, 0.8) == (0.0, 0.0)

    def test_beta_hand_value(self):
        bp, bq = make_beta(0.1, 2, {2: 5.0, 3: 0.2}, (0.0, 0.0), 0.4, 0.8)
        assert bp == pytest.approx(0.12) and bq == pytest.approx(0.24)

    @given(finite, finite)
    def test_beta_ignores_target_alpha(self, a1, a2):
        b1 = make_beta(0.1, 2, {2: a1, 3: 0.2}, (0.01, 0.02), 0.4, 0.8)
        b2 = make_beta(0.1, 2, {2: a2, 3: 0.2}, (0.01, 0.02), 0.4, 0.8)
        assert b1 == b2

    def test_update_z_zero(self):
        assert update_z(0.0, {}, (0.0, 0.0), 0.4, 0.8) == (0.0, 0.0)

    def test_update_z_leaf_hand_value(self):
        zp, zq = update_z(0.05, {}, (0.12, 0.24), 0.4, 0.8)
        assert zp == pytest.approx(0.14) and zq == pytest.approx(0.28)


class TestAgent:
    def make(self, parent=1, children=(3, 4)):
        cost, lim = one_bus()
        return Agent(2, parent, children, 0.4, 0.8, cost, lim)

    def test_outbox_directions(self):
        a = self.make()
        box = a.outbox(1)
        assert [(m.kind, m.receiver) for m in box] == [("alpha", 1), ("beta", 3), ("beta", 4)]
        assert all(m.sender == 2 and m.gen_iter == 1 for m in box)

    def test_stale_message_dropped(self):
        a = self.make()
        a.receive(Message("alpha", 3, 2, 0.5, 4))
        a.receive(Message("alpha", 3, 2, 0.9, 2))
        assert a.state.alpha_in[3] == 0.5 and a.state.alpha_gen[3] == 4
        a.receive(Message("beta", 1, 2, (0.1, 0.2), 3))
        a.receive(Message("beta", 1, 2, (0.7, 0.7), 1))
        assert a.state.beta_in == (0.1, 0.2)

    def test_zero_state_is_fixed_point(self):
        a = self.make()
        for t in range(5):
            a.price_step(1.0, 0.3)
            assert a.outbox(t + 1)[0].payload == 0.0
            a.refresh_z()
            assert a.control() == (0.0, 0.0)
