import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efm.core import TransportError, seeded_stream
from efm.field import EmpiricalField, PlateSet
from efm.transport import (TransportPolicy, direction_probability, euler_step,
                           map_batch, map_batch_fn, stochastic_map,
                           stop_probability, trace_batch_z, trace_line_t,
                           trace_line_z)


def uniform_up_field(pts):
    pts = np.atleast_2d(pts)
    out = np.zeros_like(pts)
    out[:, -1] = 1.0
    return out


def two_point_capacitor(a=0.0, b=0.0, gap=6.0, dim=1, eps=1e-4):
    pos = PlateSet(np.full((1, dim), float(a)), 0.0, +1)
    neg = PlateSet(np.full((1, dim), float(b)), gap, -1)
    return EmpiricalField(pos, neg, eps)


class TestEulerStep:
    def test_unit_slope(self):
        out = euler_step(np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.5)
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_pure_z_advance(self):
        out = euler_step(np.array([0.3, 1.0]), np.array([0.0, 1.0]), 0.25)
        np.testing.assert_allclose(out, [0.3, 1.25])

    def test_degenerate_rejected(self):
        with pytest.raises(TransportError, match="degenerate"):
            euler_step(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0.1)


class TestStopProbability:
    def test_opposite_signs_stop(self):
        assert stop_probability(2.0, -1.0) == 1.0

    def test_same_sign_flux_fraction(self):
        assert stop_probability(4.0, 1.0) == pytest.approx(0.75)

    def test_equal_limits_continue(self):
        assert stop_probability(3.0, 3.0) == 0.0

    def test_zero_limit_stops(self):
        assert stop_probability(0.0, 1.0) == 1.0
        assert stop_probability(1.0, 0.0) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(-1e6, 1e6), b=st.floats(-1e6, 1e6))
    def test_always_in_unit_interval(self, a, b):
        assert 0.0 <= stop_probability(a, b) <= 1.0


class TestDirectionProbability:
    def test_opposite_signs_flux_split(self):
        assert direction_probability(1.0, -3.0) == pytest.approx(0.25)

    def test_same_sign_always_forward(self):
        assert direction_probability(2.0, 5.0) == 1.0

    def test_symmetric_split(self):
        assert direction_probability(1.0, -1.0) == pytest.approx(0.5)

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(-1e6, 1e6), b=st.floats(-1e6, 1e6))
    def test_always_in_unit_interval(self, a, b):
        assert 0.0 <= direction_probability(a, b) <= 1.0


class TestTraceLineZ:
    def test_uniform_field_straight_line(self):
        traj = trace_line_z(np.array([0.7, -0.2, 0.0]), uniform_up_field, 0.3, 6.0)
        assert traj.termination == "reached_target_plate"
        np.testing.assert_allclose(traj.points[-1], [0.7, -0.2, 6.0], atol=1e-12)
        assert len(traj.points) == 21

    def test_exact_field_eval_count(self):
        calls = []

        def counting(pts):
            calls.append(len(np.atleast_2d(pts)))
            return uniform_up_field(pts)

        trace_line_z(np.array([0.0, 0.0]), counting, 0.3, 6.0)
        assert sum(calls) == 20  # L / dtau evaluations exactly

    def test_two_charge_symmetry_axis(self):
        field = two_point_capacitor(0.0, 0.0, 6.0, dim=2)
        start = np.array([0.0, 0.0, 0.0])
        traj = trace_line_z(start, field.as_field_fn(), 0.3, 6.0)
        np.testing.assert_allclose(traj.points[:, :2], 0.0, atol=1e-12)

    def test_bad_dtau_rejected(self):
        with pytest.raises(TransportError, match="evenly divide"):
            trace_line_z(np.array([0.0, 0.0]), uniform_up_field, 0.7, 6.0)

    def test_first_order_convergence(self):
        # oracle: Richardson comparison against a dtau/64 reference. The
        # trace runs mid-gap (smooth field, away from the terminal charge
        # whose basin would swallow the endpoint error).
        field = two_point_capacitor(0.0, 1.0, 4.0, dim=1)
        fn = field.as_field_fn()
        start = np.array([-0.35, 1.0])  # off the straight inter-charge line
        span = 3.0 - 1.0

        def endpoint(dtau):
            return trace_line_z(start, fn, dtau, 3.0).points[-1][0]

        ref = endpoint(span / 1280)
        err1 = abs(endpoint(span / 20) - ref)
        err2 = abs(endpoint(span / 40) - ref)
        order = math.log2(err1 / err2)
        assert 0.8 < order < 1.2

    def test_batch_matches_per_line(self):
        field = two_point_capacitor(0.0, 1.0, 6.0, dim=2)
        fn = field.as_field_fn()
        starts = np.array([[0.1, 0.0], [0.4, -0.3], [-0.2, 0.2]])
        history, terms = trace_batch_z(starts, fn, 0.3, 6.0)
        for i, x in enumerate(starts):
            traj = trace_line_z(np.append(x, 0.0), fn, 0.3, 6.0)
            np.testing.assert_allclose(history[:, i, :], traj.points, rtol=1e-12)
            assert terms[i] == traj.termination


class TestTraceLineT:
    def test_uniform_field_stops_at_plate(self):
        traj = trace_line_t(np.array([0.5, 0.001]), uniform_up_field, +1,
                            plate_gap=6.0)
        assert traj.termination == "reached_target_plate"
        assert traj.points[-1][-1] == pytest.approx(6.0, abs=1e-9)
        assert traj.points[-1][0] == pytest.approx(0.5, abs=1e-9)
        assert traj.crossings and traj.crossings[-1][1] == 6.0

    def test_round_trip_retraces(self):
        # oracle: forward-then-backward integration must return to the start;
        # the tracer's event plane serves as the turn-around marker
        field = two_point_capacitor(0.0, 1.5, 6.0, dim=1)
        fn = field.as_field_fn()
        start = np.array([0.3, 0.5])
        fwd = trace_line_t(start, fn, +1, plate_gap=3.0)
        mid = fwd.points[-1]
        assert mid[-1] == pytest.approx(3.0, abs=1e-9)
        back = trace_line_t(mid, fn, -1, plate_gap=0.5)
        end = back.points[-1]
        assert np.linalg.norm(end - start) < 10 * 1e-4

    def test_degenerate_field_flagged(self):
        zero_fn = lambda pts: np.zeros_like(np.atleast_2d(pts))
        traj = trace_line_t(np.array([0.0, 0.5]), zero_fn, +1, plate_gap=6.0)
        assert traj.termination == "field_degenerate"

    def test_step_limit(self):
        # lateral field never reaches the plate
        def sideways(pts):
            pts = np.atleast_2d(pts)
            out = np.zeros_like(pts)
            out[:, 0] = 1.0
            return out

        traj = trace_line_t(np.array([0.0, 3.0]), sideways, +1, plate_gap=6.0,
                            max_steps=50)
        assert traj.termination == "step_limit"

    def test_no_revisiting_on_exact_field(self):
        # no closed loops: the polyline never returns near an earlier point
        # after having moved away
        field = two_point_capacitor(-0.5, 0.5, 6.0, dim=1)
        traj = trace_line_t(np.array([-0.5, 0.01]), field.as_field_fn(), +1,
                            plate_gap=6.0)
        pts = traj.points
        assert traj.termination == "reached_target_plate"
        for i in range(len(pts)):
            ahead = pts[i + 2:]
            if len(ahead) == 0:
                continue
            d = np.linalg.norm(ahead - pts[i], axis=1)
            moved_away = np.maximum.accumulate(d) > 0.5
            returned = (d < 1e-6) & moved_away
            assert not returned.any()


class TestStochasticMap:
    def test_two_point_system_practical(self):
        # the straight segment between the two charges is itself a field
        # line, so the z-stepped scheme follows it exactly
        field = two_point_capacitor(a=0.0, b=2.0, gap=6.0)
        policy = TransportPolicy(step=0.05)
        x, traj = stochastic_map(np.array([0.0]), field, policy,
                                 seeded_stream(0, "t"))
        assert traj.termination == "reached_target_plate"
        assert x[0] == pytest.approx(2.0, abs=1e-6)

    def test_two_point_system_theoretical(self):
        field = two_point_capacitor(a=0.0, b=2.0, gap=6.0)
        policy = TransportPolicy("theoretical_stochastic", "bidirectional", 0.05)
        for k in range(4):
            x, traj = stochastic_map(np.array([0.05]), field, policy,
                                     seeded_stream(k, "t"))
            assert traj.termination in ("reached_target_plate",
                                        "continued_past_plate_then_returned")
            assert x[0] == pytest.approx(2.0, abs=0.05)

    def test_separated_targets_produce_multi_crossing_lines(self):
        # widely separated negative blobs push some lines past the far
        # plate before they curve back
        stream = seeded_stream(1, "sep")
        pos = PlateSet(stream.standard_normal((400, 1)), 0.0, +1)
        side = stream.integers(0, 2, size=400) * 2 - 1
        neg = PlateSet((stream.standard_normal((400, 1)) * 0.5 + side[:, None] * 4.0),
                       6.0, -1)
        field = EmpiricalField(pos, neg, 1e-4)
        policy = TransportPolicy("theoretical_stochastic", "forward_only", 0.05,
                                 max_steps=40_000)
        multi = 0
        for k in range(12):
            x0 = np.array([stream.normal() * 0.3])
            _, traj = stochastic_map(x0, field, policy, seeded_stream(k, "line"))
            far_crossings = [c for c in traj.crossings if c[1] == 6.0]
            if len(far_crossings) >= 2:
                multi += 1
        assert multi >= 1

    def test_practical_policy_validation(self):
        with pytest.raises(TransportError, match="forward_only"):
            TransportPolicy("practical_stop_at_L", "bidirectional", 0.1)


class TestMapBatch:
    def test_batch_of_one_matches_single_call(self):
        field = two_point_capacitor(a=0.0, b=1.0, gap=6.0)
        policy = TransportPolicy(step=0.1)
        res = map_batch(np.array([[0.2]]), field=field, policy=policy, seed=3)
        x, _ = stochastic_map(np.array([0.2]), field, policy, seeded_stream(3, "x"))
        np.testing.assert_allclose(res.mapped[0], x, rtol=1e-12)

    def test_permutation_equivariance(self):
        field = two_point_capacitor(a=0.0, b=1.0, gap=6.0)
        policy = TransportPolicy("theoretical_stochastic", "bidirectional", 0.1)
        pts = seeded_stream(4, "pts").standard_normal((6, 1)) * 0.2
        fwd = map_batch(pts, field=field, policy=policy, seed=7)
        perm = np.array([3, 1, 5, 0, 2, 4])
        back = map_batch(pts[perm], field=field, policy=policy, seed=7)
        np.testing.assert_allclose(back.mapped, fwd.mapped[perm], rtol=1e-12)

    def test_network_batch_transport(self):
        res = map_batch_fn(np.array([[0.1], [0.5]]), uniform_up_field, 6.0,
                           TransportPolicy(step=0.3))
        assert res.ok.all()
        np.testing.assert_allclose(res.mapped, [[0.1], [0.5]], atol=1e-12)
        assert all(t.n_field_evals == 20 for t in res.trajectories)

    def test_failures_recorded_batch_continues(self):
        def sideways(pts):
            pts = np.atleast_2d(pts)
            out = np.zeros_like(pts)
            out[:, 0] = 1.0
            return out

        res = map_batch_fn(np.array([[0.1], [0.5]]), sideways, 6.0,
                           TransportPolicy(step=0.3))
        assert not res.ok.any()
        assert len(res.failures) == 2
        assert res.failures[0][1] == "field_degenerate"
