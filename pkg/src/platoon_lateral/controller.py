"""Weighted feedforward + feedback steering law.

Two target trajectories are tracked at once: one built from the lead vehicle's
trace and one from the preceding vehicle's trace. ``alpha`` weights the
preceding-vehicle terms and ``1 - alpha`` the lead-vehicle terms, in both the
feedforward and the feedback parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .trajectory import R_MIN, ErrorSignals
from .vehicle_model import VehicleParams


class GainVector(NamedTuple):
    k_e: float
    k_theta: float
    k_omega: float


DESIGN_GAINS = GainVector(0.06, 0.96, 0.08)


@dataclass(frozen=True)
class ControllerConfig:
    gains: GainVector = DESIGN_GAINS
    alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if not all(math.isfinite(g) for g in self.gains):
            raise ValueError(f"gains must be finite, got {self.gains!r}")
        object.__setattr__(self, "gains", GainVector(*self.gains))


def single_feedforward(R: float, p: VehicleParams, V0: float) -> float:
    """Steady-state steering that holds a circle of signed radius ``R``."""
    if math.isinf(R):
        return 0.0
    if abs(R) < R_MIN:
        raise ValueError(f"|R| = {abs(R)} is below the minimum radius {R_MIN}")
    return (p.a + p.b) / R + p.K_sg * V0 * V0 / R


def feedforward(R_l: float, R_p: float, cfg: ControllerConfig, p: VehicleParams, V0: float) -> float:
    if V0 <= 0:
        raise ValueError("V0 must be > 0")
    a = cfg.alpha
    return a * single_feedforward(R_p, p, V0) + (1.0 - a) * single_feedforward(R_l, p, V0)


def radius_of(curvature: float) -> float:
    return math.inf if curvature == 0.0 else 1.0 / curvature


def feedback(err_l: ErrorSignals, err_p: ErrorSignals, cfg: ControllerConfig) -> float:
    ke, kt, kw = cfg.gains
    a = cfg.alpha
    u_l = ke * err_l.e_lat + kt * err_l.theta_err + kw * err_l.theta_err_dot
    u_p = ke * err_p.e_lat + kt * err_p.theta_err + kw * err_p.theta_err_dot
    return -(1.0 - a) * u_l - a * u_p


def command(delta_ff: float, delta_fb: float) -> float:
    return delta_ff + delta_fb


def steering_command(err_l: ErrorSignals, err_p: ErrorSignals, cfg: ControllerConfig,
                     p: VehicleParams, V0: float) -> float:
    """Full law: feedforward from the matched curvatures plus feedback."""
    ff = feedforward(radius_of(err_l.curvature_at_match), radius_of(err_p.curvature_at_match), cfg, p, V0)
    return command(ff, feedback(err_l, err_p, cfg))
