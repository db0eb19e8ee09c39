import math

import numpy as np
import pytest

from apecs.operators import Command
from apecs.sim import (
    Course,
    VehicleParams,
    VehicleState,
    benchmark_course,
    cross_track_error,
    cross_track_sign_changes,
    project_on_course,
    rmse,
    run_closed_loop,
    step_vehicle,
    wrap_angle,
)

PARAMS = VehicleParams()


def straight_course(length=100.0):
    xs = np.arange(0.0, length + 1.0, 1.0)
    return Course(waypoints=np.column_stack([xs, np.zeros_like(xs)]))


class TestWrapAngle:
    @pytest.mark.parametrize(
        "a,expected",
        [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi), (2 * math.pi, 0.0)],
    )
    def test_values(self, a, expected):
        assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)


class TestStepVehicle:
    def test_zero_command_zero_speed_is_fixed_point(self):
        s = VehicleState(1.0, 2.0, 0.5, 0.0)
        out = step_vehicle(s, Command(0.0, 0.0), PARAMS, 0.1)
        assert (out.x_pos, out.y_pos, out.heading, out.speed) == (1.0, 2.0, 0.5, 0.0)

    def test_straight_displacement(self):
        s = VehicleState(0.0, 0.0, 0.7, 4.0)
        out = step_vehicle(s, Command(0.0, 0.0), PARAMS, 0.1)
        assert out.x_pos == pytest.approx(0.4 * math.cos(0.7), abs=1e-12)
        assert out.y_pos == pytest.approx(0.4 * math.sin(0.7), abs=1e-12)
        assert out.speed == 4.0

    def test_coasting_preserves_speed_exactly(self):
        s = VehicleState(0.0, 0.0, 0.0, 3.123456789)
        for _ in range(100):
            s = step_vehicle(s, Command(0.3, 0.0), PARAMS, 0.1)
        assert s.speed == 3.123456789

    def test_no_reverse(self):
        s = VehicleState(0.0, 0.0, 0.0, 0.1)
        out = step_vehicle(s, Command(0.0, -1.0), PARAMS, 0.1)
        assert out.speed == 0.0

    def test_constant_steer_traces_circle(self):
        # radius = wheelbase / tan(steering angle); integrate one revolution
        steer_cmd = 0.5
        delta = steer_cmd * PARAMS.max_steer_rad
        radius = PARAMS.wheelbase_m / math.tan(delta)
        speed = 5.0
        dt = 0.01
        period = 2 * math.pi * radius / speed
        s = VehicleState(0.0, 0.0, 0.0, speed)
        max_err = 0.0
        for _ in range(int(period / dt)):
            s = step_vehicle(s, Command(steer_cmd, 0.0), PARAMS, dt)
            r = math.hypot(s.x_pos - 0.0, s.y_pos - radius)
            max_err = max(max_err, abs(r - radius))
        assert max_err <= 0.005 * radius

    def test_heading_stays_wrapped(self):
        s = VehicleState(0.0, 0.0, 3.0, 5.0)
        for _ in range(500):
            s = step_vehicle(s, Command(1.0, 0.0), PARAMS, 0.1)
            assert -math.pi < s.heading <= math.pi

    def test_dt_validated(self):
        with pytest.raises(ValueError):
            step_vehicle(VehicleState(), Command(), PARAMS, 0.0)


class TestCrossTrackError:
    def test_on_waypoint_is_zero(self):
        course = straight_course()
        assert cross_track_error(VehicleState(x_pos=50.0, y_pos=0.0), course) == 0.0

    def test_left_offset_is_positive(self):
        course = straight_course()
        assert cross_track_error(VehicleState(x_pos=50.0, y_pos=2.0), course) == pytest.approx(2.0)
        assert cross_track_error(VehicleState(x_pos=50.0, y_pos=-2.0), course) == pytest.approx(-2.0)

    def test_zero_iff_on_polyline(self):
        course = benchmark_course()
        s = 123.456
        p = course.point_at(s)
        assert abs(cross_track_error(VehicleState(x_pos=p[0], y_pos=p[1]), course)) <= 1e-9
        q = VehicleState(x_pos=p[0], y_pos=p[1] + 0.01)
        assert cross_track_error(q, course) != 0.0

    def test_against_dense_resampling_oracle(self):
        course = benchmark_course()
        # brute force: resample the polyline at 1 mm and take the min distance
        pts = []
        for i in range(len(course.waypoints) - 1):
            a, b = course.waypoints[i], course.waypoints[i + 1]
            n = max(2, int(np.hypot(*(b - a)) / 0.001))
            t = np.linspace(0.0, 1.0, n, endpoint=False)
            pts.append(a + t[:, None] * (b - a))
        pts.append(course.waypoints[-1:])
        dense = np.vstack(pts)
        rng = np.random.default_rng(12)
        for _ in range(30):
            x = float(rng.uniform(-20, 320))
            y = float(rng.uniform(-60, 60))
            got = abs(cross_track_error(VehicleState(x_pos=x, y_pos=y), course))
            brute = float(np.min(np.hypot(dense[:, 0] - x, dense[:, 1] - y)))
            assert abs(got - brute) <= 2e-3


class TestCourse:
    def test_needs_two_distinct_waypoints(self):
        with pytest.raises(ValueError):
            Course(waypoints=np.array([[0.0, 0.0]]))
        with pytest.raises(ValueError):
            Course(waypoints=np.array([[0.0, 0.0], [0.0, 0.0]]))

    def test_arclength_monotone(self):
        course = benchmark_course()
        assert np.all(np.diff(course.arclength) > 0.0)

    def test_curvature_of_arcs(self):
        course = benchmark_course()
        # interior of the first left arc (radius 25 m) has curvature ~ +1/25
        s = 50.0 + 20.0
        assert course.curvature_at(s) == pytest.approx(1.0 / 25.0, rel=0.05)

    def test_point_at_clamps(self):
        course = straight_course(10.0)
        assert np.array_equal(course.point_at(-5.0), course.waypoints[0])
        assert np.array_equal(course.point_at(999.0), course.waypoints[-1])


class _ConstantSource:
    def __init__(self, steer=0.0, throttle=0.0):
        self.cmd = Command(steer, throttle)

    def command(self, state, course):
        return self.cmd


class TestRunClosedLoop:
    def test_zero_command_runs_to_max_steps(self):
        trace = run_closed_loop(_ConstantSource(), straight_course(), PARAMS, 0.1, 50)
        assert len(trace) == 50
        assert not trace.aborted
        assert np.all(trace.cte == 0.0)

    def test_divergence_aborts(self):
        # full throttle with hard left steer leaves the corridor
        trace = run_closed_loop(_ConstantSource(1.0, 1.0), straight_course(500.0), PARAMS, 0.1, 5000)
        assert trace.aborted
        assert abs(trace.cte[-1]) > 50.0

    def test_deterministic(self):
        from apecs.operators import ExpertConfig, ExpertOperator

        course = benchmark_course()
        a = run_closed_loop(ExpertOperator(ExpertConfig(), PARAMS, 0.1), course, PARAMS, 0.1, 2000)
        b = run_closed_loop(ExpertOperator(ExpertConfig(), PARAMS, 0.1), course, PARAMS, 0.1, 2000)
        for field in ("t", "x", "y", "heading", "speed", "steer", "throttle", "cte"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_expert_tracks_straight_course(self):
        from apecs.operators import ExpertConfig, ExpertOperator

        course = straight_course(150.0)
        trace = run_closed_loop(ExpertOperator(ExpertConfig(), PARAMS, 0.1), course, PARAMS, 0.1, 2000)
        assert not trace.aborted
        assert abs(trace.cte[-1]) <= 0.05

    def test_max_steps_validated(self):
        with pytest.raises(ValueError):
            run_closed_loop(_ConstantSource(), straight_course(), PARAMS, 0.1, 0)


class TestRmse:
    def _trace_with(self, cte):
        n = len(cte)
        z = np.zeros(n)
        from apecs.sim import RunTrace

        return RunTrace(dt=0.1, t=np.arange(n) * 0.1, x=z, y=z, heading=z, speed=z, steer=z, throttle=z, cte=np.asarray(cte, dtype=float))

    def test_zero(self):
        assert rmse(self._trace_with([0.0, 0.0, 0.0])) == 0.0

    def test_constant(self):
        assert rmse(self._trace_with([2.0] * 10)) == pytest.approx(2.0)

    def test_hand_computed(self):
        assert rmse(self._trace_with([3.0, 4.0])) == pytest.approx(math.sqrt(12.5), rel=1e-12)

    def test_permutation_and_reversal_invariant(self):
        rng = np.random.default_rng(0)
        cte = rng.normal(size=101)
        base = rmse(self._trace_with(cte))
        assert rmse(self._trace_with(cte[::-1])) == pytest.approx(base, rel=1e-15)
        assert rmse(self._trace_with(rng.permutation(cte))) == pytest.approx(base, rel=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse(self._trace_with([]))

    def test_sign_change_hysteresis(self):
        trace = self._trace_with([0.01, -0.01, 0.02, -0.02, 0.5, -0.5, 0.5])
        assert cross_track_sign_changes(trace, band=0.3) == 2
