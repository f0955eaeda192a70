"""Quintic (minimum-jerk) motion primitives for the mallet end effector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quintic_coefficients(p0, v0, a0, pf, duration, vf=0.0, af=0.0):
    """Coefficients ``c[0..5]`` of ``p(t) = sum c_k t**k`` matching both boundaries.

    Position, velocity and acceleration are matched at ``t = 0`` and
    ``t = duration``. Works on scalars or arrays (one column per axis).
    """
    T = duration
    p0, v0, a0, pf = (np.asarray(x, dtype=float) for x in (p0, v0, a0, pf))
    delta = pf - p0
    c0 = p0
    c1 = v0
    c2 = 0.5 * a0
    c3 = (20.0 * delta - (8.0 * vf + 12.0 * v0) * T - (3.0 * a0 - af) * T**2) / (2.0 * T**3)
    c4 = (-30.0 * delta + (14.0 * vf + 16.0 * v0) * T + (3.0 * a0 - 2.0 * af) * T**2) / (2.0 * T**4)
    c5 = (12.0 * delta - 6.0 * (vf + v0) * T - (a0 - af) * T**2) / (2.0 * T**5)
    return np.stack([c0, c1, c2, c3, c4, c5])


def _poly(c, t):
    pos = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    vel = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    acc = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    return pos, vel, acc


@dataclass
class ActivePrimitive:
    """Open-loop task-space trajectory toward a fixed target.

    ``coeffs`` has shape (6, 2), one quintic per axis. Past ``duration`` the
    primitive holds the target at rest.
    """

    target: tuple[float, float]
    duration: float
    coeffs: np.ndarray
    t_elapsed: float = 0.0
    _cx: list = field(init=False, repr=False)
    _cy: list = field(init=False, repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        # plain floats: this is evaluated once per physics substep
        self._cx = [float(v) for v in self.coeffs[:, 0]]
        self._cy = [float(v) for v in self.coeffs[:, 1]]

    @property
    def finished(self) -> bool:
        return self.t_elapsed >= self.duration

    def evaluate(self, t: float | None = None):
        """Return ``(pos, vel, acc)``, each an (x, y) tuple, at time ``t`` (default: now)."""
        if t is None:
            t = self.t_elapsed
        if t >= self.duration:
            return self.target, (0.0, 0.0), (0.0, 0.0)
        px, vx, ax = _poly(self._cx, t)
        py, vy, ay = _poly(self._cy, t)
        return (px, py), (vx, vy), (ax, ay)

    def advance(self, dt: float):
        self.t_elapsed += dt
        return self.evaluate()


def plan_quintic(target, position, velocity, acceleration=(0.0, 0.0), duration=0.4) -> ActivePrimitive:
    """Plan a rest-terminated quintic from the current kinematic state to ``target``."""
    coeffs = quintic_coefficients(position, velocity, acceleration, target, duration)
    return ActivePrimitive(
        target=(float(target[0]), float(target[1])),
        duration=float(duration),
        coeffs=coeffs,
    )


def rest_to_rest_peak_speed(distance: float, duration: float) -> float:
    # max of 30 s^2 (1 - s)^2 is 15/8 at s = 1/2
    return 15.0 / 8.0 * abs(distance) / duration
