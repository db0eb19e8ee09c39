"""The controller's 7-feature input vector and its physical decoding.

Layout (all entries scaled to [-1, 1]):

    0  steer command          (already normalized)
    1  throttle command       (already normalized)
    2  cross-track error      / 10 m
    3  heading error          / pi
    4  speed error            / 5 m/s
    5  path curvature at the lookahead point, x 10 m
    6  speed                  / 10 m/s

Indices 0-1 are the raw command x, 2-4 the tracking-error block e, 5-6 the
environment block E.  ``environment_features`` produces entries 2-6 from a
live vehicle state; ``expert_label`` reconstructs a local course geometry
from a feature row and asks the expert operator what it would command there,
which is how training targets are produced for uniformly sampled features.
"""

from __future__ import annotations

import math

import numpy as np

from .operators import ExpertConfig, PidState, pid_speed, pure_pursuit_steer
from .sim import Course, VehicleParams, VehicleState, course_from_segments, wrap_angle

__all__ = [
    "FEATURE_NAMES",
    "N_COMMAND",
    "N_FEATURES",
    "environment_features",
    "expert_label",
    "synthetic_arc_course",
]

FEATURE_NAMES = (
    "steer_cmd",
    "throttle_cmd",
    "cross_track_err",
    "heading_err",
    "speed_err",
    "path_curvature",
    "speed",
)
N_FEATURES = len(FEATURE_NAMES)
N_COMMAND = 2

CTE_SCALE_M = 10.0
HEADING_SCALE_RAD = math.pi
SPEED_ERR_SCALE_MPS = 5.0
CURVATURE_SCALE_PER_M = 0.1  # feature is curvature / this, i.e. curvature x 10 m
SPEED_SCALE_MPS = 10.0

# Synthetic geometry for decoding a feature row: one arc through the origin,
# extended backward so the vehicle's projection is always interior.
_ARC_BACK_M = 20.0
_ARC_FORWARD_M = 30.0
_ARC_SPACING_M = 0.5


def environment_features(state: VehicleState, course: Course, cfg: ExpertConfig) -> np.ndarray:
    """Features 2-6 for a live state, each clamped to [-1, 1]."""
    from .sim import project_on_course

    s, cte, tangent = project_on_course(course, state.x_pos, state.y_pos)
    heading_err = wrap_angle(state.heading - tangent)
    speed_err = cfg.target_speed_mps - state.speed
    kappa = course.curvature_at(s + cfg.lookahead(state.speed))
    raw = np.array(
        [
            cte / CTE_SCALE_M,
            heading_err / HEADING_SCALE_RAD,
            speed_err / SPEED_ERR_SCALE_MPS,
            kappa / CURVATURE_SCALE_PER_M,
            state.speed / SPEED_SCALE_MPS,
        ]
    )
    return np.clip(raw, -1.0, 1.0)


def synthetic_arc_course(curvature: float) -> Course:
    """Constant-curvature course through the origin with tangent +x there."""
    if abs(curvature) < 1e-12:
        start = (-_ARC_BACK_M, 0.0)
        return course_from_segments(((0.0, _ARC_BACK_M + _ARC_FORWARD_M),), spacing=_ARC_SPACING_M, start=start)
    # walk backward along the arc to find the start pose, then sweep forward
    r = 1.0 / curvature
    ang = -curvature * _ARC_BACK_M
    cx, cy = 0.0, r
    start = (cx + r * math.sin(ang), cy - r * math.cos(ang))
    heading = ang
    return course_from_segments(
        ((curvature, _ARC_BACK_M + _ARC_FORWARD_M),), spacing=_ARC_SPACING_M, start=start, heading=heading
    )


def expert_label(
    features: np.ndarray, cfg: ExpertConfig, params: VehicleParams, dt: float
) -> np.ndarray:
    """Expert command for one feature row.

    Steering: pure pursuit on the decoded local arc with the vehicle offset
    by the decoded cross-track and heading errors.  Throttle: PID from rest
    on the decoded speed error.  Decoded speed is floored at zero.
    """
    f = np.asarray(features, dtype=float)
    cte = f[2] * CTE_SCALE_M
    heading_err = f[3] * HEADING_SCALE_RAD
    speed_err = f[4] * SPEED_ERR_SCALE_MPS
    curvature = f[5] * CURVATURE_SCALE_PER_M
    speed = max(0.0, f[6] * SPEED_SCALE_MPS)

    course = synthetic_arc_course(curvature)
    state = VehicleState(x_pos=0.0, y_pos=cte, heading=heading_err, speed=speed)
    steer = pure_pursuit_steer(state, course, cfg, params)
    throttle = pid_speed(cfg.target_speed_mps - speed_err, cfg.target_speed_mps, PidState(), dt, cfg)
    return np.array([steer, throttle])
