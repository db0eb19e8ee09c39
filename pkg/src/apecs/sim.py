"""Kinematic vehicle plant, reference courses, and path-tracking metrics.

Conventions used throughout: world frame x/y in meters, headings in radians
wrapped to (-pi, pi], counterclockwise positive.  Steering command > 0 turns
left; cross-track error > 0 means the vehicle is left of the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Course",
    "RunTrace",
    "VehicleParams",
    "VehicleState",
    "benchmark_course",
    "cross_track_error",
    "cross_track_sign_changes",
    "project_on_course",
    "rmse",
    "run_closed_loop",
    "step_vehicle",
    "wrap_angle",
]

DIVERGENCE_LIMIT_M = 50.0
COURSE_END_TOL_M = 0.5


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass
class VehicleState:
    x_pos: float = 0.0
    y_pos: float = 0.0
    heading: float = 0.0
    speed: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    wheelbase_m: float = 2.9
    max_steer_rad: float = 0.6
    max_accel_mps2: float = 2.0


def step_vehicle(s: VehicleState, cmd, params: VehicleParams, dt: float) -> VehicleState:
    """One Euler step of the kinematic bicycle.

    ``cmd`` needs normalized ``steer`` and ``throttle`` attributes in
    [-1, 1]; they scale to the physical steering angle and acceleration.
    Speed is floored at zero (no reverse).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    steer = min(1.0, max(-1.0, float(cmd.steer))) * params.max_steer_rad
    accel = min(1.0, max(-1.0, float(cmd.throttle))) * params.max_accel_mps2
    heading = wrap_angle(s.heading + s.speed / params.wheelbase_m * math.tan(steer) * dt)
    return VehicleState(
        x_pos=s.x_pos + s.speed * math.cos(s.heading) * dt,
        y_pos=s.y_pos + s.speed * math.sin(s.heading) * dt,
        heading=heading,
        speed=max(0.0, s.speed + accel * dt),
    )


@dataclass
class Course:
    """Ordered waypoint polyline with cumulative arclength and curvature."""

    waypoints: np.ndarray  # (N, 2)
    arclength: np.ndarray = field(default=None)  # (N,)
    curvature: np.ndarray = field(default=None)  # (N,), signed, left positive

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a course needs at least two (x, y) waypoints")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive waypoints must be distinct")
        self.waypoints = pts
        if self.arclength is None:
            self.arclength = np.concatenate([[0.0], np.cumsum(seg_len)])
        if self.curvature is None:
            self.curvature = _discrete_curvature(pts)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.arclength, s, side="right")) - 1
        i = min(max(i, 0), len(self.waypoints) - 2)
        seg = self.arclength[i + 1] - self.arclength[i]
        t = (s - self.arclength[i]) / seg
        return self.waypoints[i] * (1.0 - t) + self.waypoints[i + 1] * t

    def tangent_heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.arclength, s, side="right")) - 1
        i = min(max(i, 0), len(self.waypoints) - 2)
        d = self.waypoints[i + 1] - self.waypoints[i]
        return math.atan2(d[1], d[0])

    def curvature_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.arclength, s, side="right")) - 1
        i = min(max(i, 0), len(self.waypoints) - 1)
        return float(self.curvature[i])


def _discrete_curvature(pts: np.ndarray) -> np.ndarray:
    """Signed Menger curvature at each interior waypoint (zero at the ends)."""
    kappa = np.zeros(len(pts))
    a, b, c = pts[:-2], pts[1:-1], pts[2:]
    ab, bc, ac = b - a, c - b, c - a
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = (
        np.hypot(ab[:, 0], ab[:, 1]) * np.hypot(bc[:, 0], bc[:, 1]) * np.hypot(ac[:, 0], ac[:, 1])
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(denom > 0.0, 2.0 * cross / denom, 0.0)
    kappa[1:-1] = k
    return kappa


def project_on_course(course: Course, x: float, y: float):
    """Closest point on the polyline.

    Returns (arclength, signed cross-track distance, tangent heading).  The
    sign is positive when the point lies left of the path.
    """
    p = np.array([x, y])
    a = course.waypoints[:-1]
    b = course.waypoints[1:]
    d = b - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / seg_len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    diff = p - proj
    dist2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(dist2))
    # left-of-segment test via the z component of d x (p - a)
    cross = d[i, 0] * (p[1] - a[i, 1]) - d[i, 1] * (p[0] - a[i, 0])
    sign = 1.0 if cross > 0.0 else (-1.0 if cross < 0.0 else 0.0)
    s = course.arclength[i] + t[i] * math.sqrt(seg_len2[i])
    heading = math.atan2(d[i, 1], d[i, 0])
    return s, sign * math.sqrt(dist2[i]), heading


def cross_track_error(state: VehicleState, course: Course) -> float:
    """Signed perpendicular distance from the vehicle to the course."""
    return project_on_course(course, state.x_pos, state.y_pos)[1]


@dataclass
class RunTrace:
    """Uniform-dt closed-loop record of states, issued commands, and errors."""

    dt: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    steer: np.ndarray
    throttle: np.ndarray
    cte: np.ndarray
    aborted: bool = False

    def __len__(self) -> int:
        return len(self.t)


def run_closed_loop(
    source,
    course: Course,
    params: VehicleParams,
    dt: float,
    max_steps: int,
    transform=None,
    initial_state: VehicleState | None = None,
    divergence_limit: float = DIVERGENCE_LIMIT_M,
) -> RunTrace:
    """Iterate sense -> operator command -> optional transform -> plant step.

    ``source`` supplies the raw command through ``source.command(state,
    course)``; ``transform(cmd, state)``, when given, maps it to the command
    actually issued to the plant.  The run ends at the course end, at
    ``max_steps``, or with ``aborted=True`` once the cross-track error
    exceeds ``divergence_limit``.
    """
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    state = initial_state
    if state is None:
        state = VehicleState(
            x_pos=float(course.waypoints[0, 0]),
            y_pos=float(course.waypoints[0, 1]),
            heading=course.tangent_heading_at(0.0),
            speed=0.0,
        )
    rows = []
    aborted = False
    for k in range(max_steps):
        cmd = source.command(state, course)
        if transform is not None:
            cmd = transform(cmd, state)
        s, cte, _ = project_on_course(course, state.x_pos, state.y_pos)
        rows.append(
            (k * dt, state.x_pos, state.y_pos, state.heading, state.speed, cmd.steer, cmd.throttle, cte)
        )
        if abs(cte) > divergence_limit:
            aborted = True
            break
        if s >= course.length - COURSE_END_TOL_M:
            break
        state = step_vehicle(state, cmd, params, dt)
    data = np.array(rows, dtype=float)
    return RunTrace(
        dt=dt,
        t=data[:, 0],
        x=data[:, 1],
        y=data[:, 2],
        heading=data[:, 3],
        speed=data[:, 4],
        steer=data[:, 5],
        throttle=data[:, 6],
        cte=data[:, 7],
        aborted=aborted,
    )


def rmse(trace: RunTrace) -> float:
    """Root-mean-square cross-track error over all recorded steps."""
    if len(trace) == 0:
        raise ValueError("rmse: empty trace")
    return float(np.sqrt(np.mean(trace.cte**2)))


def cross_track_sign_changes(trace: RunTrace, band: float = 0.3) -> int:
    """Count zero crossings of the cross-track error with hysteresis.

    A crossing counts only when the error has actually swung past ``band``
    meters on each side, so millimeter-level jitter around the path does not
    register as oscillation.
    """
    changes = 0
    last_side = 0
    for v in trace.cte:
        side = 1 if v > band else (-1 if v < -band else 0)
        if side != 0:
            if last_side != 0 and side != last_side:
                changes += 1
            last_side = side
    return changes


def _arc_points(start, heading, curvature, length, spacing):
    """Polyline points along a straight or circular arc, excluding the start."""
    n = max(2, int(math.ceil(length / spacing)))
    ss = np.linspace(0.0, length, n + 1)[1:]
    x0, y0 = start
    if abs(curvature) < 1e-12:
        return np.column_stack([x0 + ss * math.cos(heading), y0 + ss * math.sin(heading)]), heading
    r = 1.0 / curvature
    ang = heading + curvature * ss
    cx = x0 - r * math.sin(heading)
    cy = y0 + r * math.cos(heading)
    pts = np.column_stack([cx + r * np.sin(ang), cy - r * np.cos(ang)])
    return pts, heading + curvature * length


def course_from_segments(segments, spacing: float = 1.0, start=(0.0, 0.0), heading: float = 0.0) -> Course:
    """Build a polyline course from (curvature, length) segments."""
    pts = [np.asarray(start, dtype=float)]
    h = heading
    for curvature, length in segments:
        new_pts, h = _arc_points(pts[-1], h, curvature, length, spacing)
        pts.extend(new_pts)
    return Course(waypoints=np.vstack(pts))


# Benchmark geometry: an S-curve between straightaways, long enough to excite
# sustained oscillation in a badly tuned operator (~300 m).
BENCHMARK_SEGMENTS = (
    (0.0, 50.0),
    (1.0 / 25.0, 25.0 * math.radians(100.0)),
    (0.0, 30.0),
    (-1.0 / 20.0, 20.0 * math.radians(120.0)),
    (0.0, 40.0),
    (1.0 / 30.0, 30.0 * math.radians(60.0)),
    (0.0, 50.0),
)


def benchmark_course(spacing: float = 1.0) -> Course:
    return course_from_segments(BENCHMARK_SEGMENTS, spacing=spacing)
