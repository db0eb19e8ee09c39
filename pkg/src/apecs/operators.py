"""Reference command sources: a pure-pursuit expert and a detuned fuzzy novice.

Both emit normalized commands in [-1, 1]^2 (steer, throttle).  The expert
combines pure-pursuit steering with PID speed control.  The novice is a
zero-order Sugeno fuzzy controller over cross-track and heading error with
an input delay buffer and a deliberately excessive output gain, which makes
it overshoot and oscillate around the course.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .sim import Course, VehicleParams, VehicleState, project_on_course, wrap_angle

__all__ = [
    "Command",
    "ExpertConfig",
    "ExpertOperator",
    "NoviceConfig",
    "NoviceOperator",
    "PidState",
    "pid_speed",
    "pure_pursuit_steer",
    "triangular_memberships",
]


def _clamp(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return min(hi, max(lo, v))


@dataclass(frozen=True)
class Command:
    """Normalized control command; both components clamped to [-1, 1]."""

    steer: float = 0.0
    throttle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steer", _clamp(float(self.steer)))
        object.__setattr__(self, "throttle", _clamp(float(self.throttle)))

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.throttle])


@dataclass(frozen=True)
class ExpertConfig:
    lookahead_base_m: float = 2.0
    lookahead_gain_s: float = 0.3
    kp: float = 0.5
    ki: float = 0.05
    kd: float = 0.05
    target_speed_mps: float = 5.0

    def __post_init__(self):
        if self.lookahead_base_m <= 0.0:
            raise ValueError(f"lookahead_base_m must be > 0, got {self.lookahead_base_m}")
        for name in ("lookahead_gain_s", "kp", "ki", "kd", "target_speed_mps"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def lookahead(self, speed: float) -> float:
        return self.lookahead_base_m + self.lookahead_gain_s * max(0.0, speed)


def pure_pursuit_steer(
    state: VehicleState, course: Course, cfg: ExpertConfig, params: VehicleParams
) -> float:
    """Normalized pure-pursuit steering command.

    Chases the course point one lookahead arclength past the vehicle's
    projection (clamped to the course end): curvature 2 sin(alpha) / L_d,
    mapped through the wheel-angle arctangent and normalized by the maximum
    steering angle.
    """
    if len(course.waypoints) < 2:
        raise ValueError("pure pursuit needs a course with at least two waypoints")
    s_proj, _, _ = project_on_course(course, state.x_pos, state.y_pos)
    l_d = cfg.lookahead(state.speed)
    target = course.point_at(s_proj + l_d)
    dx = target[0] - state.x_pos
    dy = target[1] - state.y_pos
    chord = math.hypot(dx, dy)
    if chord < 1e-9:
        return 0.0
    alpha = wrap_angle(math.atan2(dy, dx) - state.heading)
    kappa = 2.0 * math.sin(alpha) / max(chord, 1e-9)
    wheel_angle = math.atan(params.wheelbase_m * kappa)
    return _clamp(wheel_angle / params.max_steer_rad)


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def pid_speed(
    current_speed: float,
    target_speed: float,
    state: PidState,
    dt: float,
    cfg: ExpertConfig,
    integral_limit: float = 5.0,
) -> float:
    """Positional PID on speed error with an anti-windup clamp, in [-1, 1]."""
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    error = target_speed - current_speed
    state.integral = _clamp(state.integral + error * dt, -integral_limit, integral_limit)
    derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    state.prev_error = error
    return _clamp(cfg.kp * error + cfg.ki * state.integral + cfg.kd * derivative)


class ExpertOperator:
    """Pure-pursuit steering plus PID speed tracking."""

    def __init__(self, cfg: ExpertConfig, params: VehicleParams, dt: float):
        self.cfg = cfg
        self.params = params
        self.dt = dt
        self.pid = PidState()

    def reset(self) -> None:
        self.pid = PidState()

    def command(self, state: VehicleState, course: Course) -> Command:
        return Command(
            steer=pure_pursuit_steer(state, course, self.cfg, self.params),
            throttle=pid_speed(state.speed, self.cfg.target_speed_mps, self.pid, self.dt, self.cfg),
        )


def triangular_memberships(value: float, breakpoints) -> np.ndarray:
    """Triangular fuzzy partition with saturating shoulders.

    Membership i peaks at breakpoints[i] and decays linearly to zero at the
    neighboring breakpoints; outside the first/last breakpoint the end sets
    stay at 1.  The weights sum to 1 everywhere.
    """
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or len(bp) < 2 or np.any(np.diff(bp) <= 0.0):
        raise ValueError("breakpoints must be strictly increasing with length >= 2")
    w = np.zeros(len(bp))
    if value <= bp[0]:
        w[0] = 1.0
        return w
    if value >= bp[-1]:
        w[-1] = 1.0
        return w
    i = int(np.searchsorted(bp, value, side="right")) - 1
    t = (value - bp[i]) / (bp[i + 1] - bp[i])
    w[i] = 1.0 - t
    w[i + 1] = t
    return w


@dataclass(frozen=True)
class NoviceConfig:
    """Detuned Sugeno controller parameters.

    ``gain_excess`` > 1 amplifies every output beyond what the rule table
    asks for and ``reaction_delay_steps`` delays the sensed inputs, the two
    ingredients of the novice's characteristic overshoot oscillation.
    """

    cte_breakpoints_m: tuple = (-8.0, -2.5, 0.0, 2.5, 8.0)
    heading_breakpoints_rad: tuple = (-1.5, -0.5, 0.0, 0.5, 1.5)
    speed_err_breakpoints_mps: tuple = (-5.0, -2.0, 0.0, 2.0, 5.0)
    steer_cte_weight: float = 0.7
    steer_heading_weight: float = 0.9
    throttle_levels: tuple = (-1.0, -0.6, 0.0, 0.6, 1.0)
    gain_excess: float = 1.6
    reaction_delay_steps: int = 4
    target_speed_mps: float = 5.0

    def __post_init__(self):
        if self.gain_excess <= 1.0:
            raise ValueError(f"gain_excess must be > 1, got {self.gain_excess}")
        if self.reaction_delay_steps < 0:
            raise ValueError("reaction_delay_steps must be >= 0")

    def steer_rule_table(self) -> np.ndarray:
        """Consequent singletons for each (cte set, heading set) pair.

        Level grids run negative-to-positive; being left of the path or
        pointing left both demand steering right (negative), hence the
        minus sign.
        """
        levels = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
        n_c = len(self.cte_breakpoints_m)
        n_h = len(self.heading_breakpoints_rad)
        lc = levels[:n_c] if n_c == 5 else np.linspace(-1.0, 1.0, n_c)
        lh = levels[:n_h] if n_h == 5 else np.linspace(-1.0, 1.0, n_h)
        raw = -(self.steer_cte_weight * lc[:, None] + self.steer_heading_weight * lh[None, :])
        return np.clip(raw, -1.0, 1.0)


class NoviceOperator:
    """Zero-order Sugeno fuzzy controller with delayed inputs.

    Steering defuzzifies a 2-d rule table over (cross-track error, heading
    error); throttle a 1-d table over speed error.  Deterministic: the same
    state history always reproduces the same commands.
    """

    def __init__(self, cfg: NoviceConfig):
        self.cfg = cfg
        self.table = cfg.steer_rule_table()
        self._buffer: deque = deque(maxlen=cfg.reaction_delay_steps + 1)

    def reset(self) -> None:
        self._buffer.clear()

    def _sense(self, state: VehicleState, course: Course):
        _, cte, tangent = project_on_course(course, state.x_pos, state.y_pos)
        heading_err = wrap_angle(state.heading - tangent)
        speed_err = self.cfg.target_speed_mps - state.speed
        return cte, heading_err, speed_err

    def command(self, state: VehicleState, course: Course) -> Command:
        if len(course.waypoints) < 2:
            raise ValueError("novice needs a course with at least two waypoints")
        self._buffer.append(self._sense(state, course))
        cte, heading_err, speed_err = self._buffer[0]  # delayed perception

        w_c = triangular_memberships(cte, self.cfg.cte_breakpoints_m)
        w_h = triangular_memberships(heading_err, self.cfg.heading_breakpoints_rad)
        steer = float(w_c @ self.table @ w_h)

        w_v = triangular_memberships(speed_err, self.cfg.speed_err_breakpoints_mps)
        throttle = float(w_v @ np.asarray(self.cfg.throttle_levels))

        g = self.cfg.gain_excess
        return Command(steer=_clamp(g * steer), throttle=_clamp(g * throttle))
