"""Planar air-hockey table with a mallet driven by two motion primitives.

Robot frame: ``x`` runs along the table length away from the robot,
``y`` across the table with 0 on the centre line. The puck slides without
friction, walls are perfectly elastic and the mallet behaves as an
infinite-mass disc that follows its planned quintic exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .primitives import ActivePrimitive, plan_quintic


class ContractError(RuntimeError):
    """Raised when an operation is called outside its contract (e.g. stepping a finished episode)."""


@dataclass(frozen=True)
class TableGeometry:
    length_x: float = 1.948
    width_y: float = 1.038
    puck_radius: float = 0.03165
    mallet_radius: float = 0.04835

    def __post_init__(self):
        if self.puck_radius <= 0 or self.mallet_radius <= 0:
            raise ValueError("puck_radius and mallet_radius must be positive")
        if self.length_x <= 0 or self.width_y <= 0:
            raise ValueError("table dimensions must be positive")

    @property
    def contact_dist(self) -> float:
        return self.puck_radius + self.mallet_radius

    @property
    def half_width(self) -> float:
        return 0.5 * self.width_y


@dataclass
class PuckState:
    x_p: float
    y_p: float
    v_x: float
    v_y: float

    @property
    def speed(self) -> float:
        return math.hypot(self.v_x, self.v_y)


@dataclass
class MalletState:
    x_ee: float
    y_ee: float
    vx_ee: float = 0.0
    vy_ee: float = 0.0
    ax_ee: float = 0.0
    ay_ee: float = 0.0
    primitive: ActivePrimitive | None = None


@dataclass(frozen=True)
class EnvState:
    """The six scalars handed to the encoder."""

    x_p: float
    y_p: float
    v_x: float
    v_y: float
    x_ee: float
    y_ee: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x_p, self.y_p, self.v_x, self.v_y, self.x_ee, self.y_ee)


class Outcome(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    OUT_OF_PLAY = "out_of_play"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class StepResult:
    obs: EnvState
    reward: float
    done: bool
    outcome: Outcome
    contact: bool = False


@dataclass(frozen=True)
class ConditionPreset:
    """Puck launch distribution for one experimental condition.

    ``spawn_x`` is the centre of the spawn window along the table length.
    Speed is drawn uniformly from ``speed_range``; the launch is purely
    lateral (+y) from the table edge unless ``stationary`` is set, in which
    case the puck rests on the centre line.
    """

    name: str
    speed_range: tuple[float, float]
    spawn_x: float = 1.0
    spawn_x_window: float = 0.0
    stationary: bool = False
    description: str = ""

    def __post_init__(self):
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid speed_range {self.speed_range} for preset {self.name}")
        if self.spawn_x_window < 0:
            raise ValueError("spawn_x_window must be non-negative")
        if self.stationary and hi != 0:
            raise ValueError("stationary preset must have zero speed")

    @property
    def v_max(self) -> float:
        return self.speed_range[1]


PRESETS: dict[str, ConditionPreset] = {
    p.name: p
    for p in (
        ConditionPreset("C1_stationary", (0.0, 0.0), stationary=True,
                        description="puck at rest on the centre line, 1.0 m from the robot"),
        ConditionPreset("C2_lateral_const", (1.25, 1.25),
                        description="lateral launch from the table edge at constant speed"),
        ConditionPreset("C3_speed_range", (1.0, 1.5),
                        description="lateral launch, speed uniform in [1.0, 1.5] m/s"),
        ConditionPreset("C4_pos_and_speed", (1.0, 1.5), spawn_x_window=0.10,
                        description="lateral launch, speed and spawn x randomised"),
        ConditionPreset("E_narrow", (0.7, 0.9), description="encoding range [0.7, 0.9] m/s"),
        ConditionPreset("E_medium", (0.7, 1.2), description="encoding range [0.7, 1.2] m/s"),
        ConditionPreset("E_wide", (0.7, 1.5), description="encoding range [0.7, 1.5] m/s"),
        ConditionPreset("E_extreme", (0.5, 2.0), description="encoding range [0.5, 2.0] m/s"),
    )
}


def get_preset(name: str) -> ConditionPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class EnvConfig:
    home_x: float = 0.70
    forward_x: float = 1.50
    primitive_duration: float = 0.4
    control_dt: float = 0.020
    physics_dt: float = 0.001
    max_steps: int = 150
    success_x: float = 1.5
    success_vx: float = 0.1
    reward_success: float = 20.0
    reward_shaping_gain: float = 0.2
    reward_step: float = -0.1

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    def target(self, action: int) -> tuple[float, float]:
        if action == 0:
            return (self.home_x, 0.0)
        if action == 1:
            return (self.forward_x, 0.0)
        raise ValueError(f"action must be 0 or 1, got {action!r}")


def reward(puck: PuckState, mallet: MalletState, contact_dist: float = 0.08,
           cfg: EnvConfig | None = None) -> float:
    """Per-step reward: terminal bonus, then contact shaping, then time cost."""
    cfg = cfg or EnvConfig()
    if puck.x_p > cfg.success_x and puck.v_x > cfg.success_vx:
        return cfg.reward_success
    d = math.hypot(puck.x_p - mallet.x_ee, puck.y_p - mallet.y_ee)
    if d <= contact_dist:
        return cfg.reward_shaping_gain * puck.v_x
    return cfg.reward_step


def resolve_mallet_collision(puck: PuckState, mallet: MalletState, contact_dist: float = 0.08) -> PuckState:
    """Elastic bounce of the puck off an infinite-mass mallet.

    In the mallet frame the normal velocity component flips sign. The puck
    is then placed exactly ``contact_dist`` from the mallet centre. Touching
    but separating discs are left alone so they cannot stick.
    """
    dx = puck.x_p - mallet.x_ee
    dy = puck.y_p - mallet.y_ee
    dist = math.hypot(dx, dy)
    if dist > contact_dist:
        return puck
    if dist == 0.0:
        # concentric: push along the mallet's motion, or +x if it is at rest
        mv = math.hypot(mallet.vx_ee, mallet.vy_ee)
        nx, ny = (mallet.vx_ee / mv, mallet.vy_ee / mv) if mv > 0 else (1.0, 0.0)
    else:
        nx, ny = dx / dist, dy / dist
    rvx = puck.v_x - mallet.vx_ee
    rvy = puck.v_y - mallet.vy_ee
    vn = rvx * nx + rvy * ny
    if vn >= 0.0:
        return puck
    return PuckState(
        x_p=mallet.x_ee + contact_dist * nx,
        y_p=mallet.y_ee + contact_dist * ny,
        v_x=puck.v_x - 2.0 * vn * nx,
        v_y=puck.v_y - 2.0 * vn * ny,
    )


def reflect_walls(puck: PuckState, geom: TableGeometry) -> tuple[PuckState, bool, bool]:
    """Mirror the puck back inside the table.

    Returns the new state and whether an x wall / a y wall was hit.
    """
    r = geom.puck_radius
    x, y, vx, vy = puck.x_p, puck.y_p, puck.v_x, puck.v_y
    lo_x, hi_x = r, geom.length_x - r
    lo_y, hi_y = -geom.half_width + r, geom.half_width - r
    hit_x = hit_y = False
    if x < lo_x:
        x, vx, hit_x = 2 * lo_x - x, -vx, True
    elif x > hi_x:
        x, vx, hit_x = 2 * hi_x - x, -vx, True
    if y < lo_y:
        y, vy, hit_y = 2 * lo_y - y, -vy, True
    elif y > hi_y:
        y, vy, hit_y = 2 * hi_y - y, -vy, True
    if not (hit_x or hit_y):
        return puck, False, False
    return PuckState(x, y, vx, vy), hit_x, hit_y


@dataclass
class AirHockeyEnv:
    """One table, one puck, one mallet. Single-owner; not thread safe."""

    preset: ConditionPreset
    config: EnvConfig = field(default_factory=EnvConfig)
    geometry: TableGeometry = field(default_factory=TableGeometry)

    def __post_init__(self):
        if self.config.substeps < 1 or abs(self.config.substeps * self.config.physics_dt - self.config.control_dt) > 1e-12:
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        self.puck = PuckState(0.0, 0.0, 0.0, 0.0)
        self.mallet = MalletState(self.config.home_x, 0.0)
        self.steps = 0
        self.physics_steps = 0
        self.outcome = Outcome.RUNNING
        self.contacted = False
        self.crossed_centre = False
        self._lateral_exit = False
        self._target = self.config.target(0)

    # -- lifecycle ---------------------------------------------------------
    def reset(self, rng, preset: ConditionPreset | None = None) -> EnvState:
        """Spawn a puck per the preset; ``rng`` only needs a ``random()`` method."""
        if preset is not None:
            self.preset = preset
        p, g = self.preset, self.geometry
        if p.stationary:
            self.puck = PuckState(p.spawn_x, 0.0, 0.0, 0.0)
        else:
            lo, hi = p.speed_range
            x0 = p.spawn_x
            if p.spawn_x_window > 0:
                x0 += (float(rng.random()) - 0.5) * p.spawn_x_window
            speed = lo + float(rng.random()) * (hi - lo)
            self.puck = PuckState(x0, -g.half_width + g.puck_radius, 0.0, speed)
        self.mallet = MalletState(self.config.home_x, 0.0)
        self._target = self.config.target(0)
        self.steps = 0
        self.physics_steps = 0
        self.outcome = Outcome.RUNNING
        self.contacted = False
        self.crossed_centre = self.puck.y_p >= 0.0
        self._lateral_exit = False
        return self.observe()

    def observe(self) -> EnvState:
        return EnvState(self.puck.x_p, self.puck.y_p, self.puck.v_x, self.puck.v_y,
                        self.mallet.x_ee, self.mallet.y_ee)

    # -- mallet ------------------------------------------------------------
    def plan_primitive(self, action: int) -> ActivePrimitive | None:
        """Point the mallet at the action's target; keeps the running primitive if unchanged."""
        target = self.config.target(action)
        if target == self._target:
            return self.mallet.primitive
        m = self.mallet
        prim = plan_quintic(target, (m.x_ee, m.y_ee), (m.vx_ee, m.vy_ee), (m.ax_ee, m.ay_ee),
                            self.config.primitive_duration)
        m.primitive = prim
        self._target = target
        return prim

    def _advance_mallet(self, dt: float) -> None:
        m, g = self.mallet, self.geometry
        if m.primitive is None:
            return
        (x, y), (vx, vy), (ax, ay) = m.primitive.advance(dt)
        r = g.mallet_radius
        m.x_ee = min(max(x, r), g.length_x - r)
        m.y_ee = min(max(y, -g.half_width + r), g.half_width - r)
        m.vx_ee, m.vy_ee, m.ax_ee, m.ay_ee = vx, vy, ax, ay

    # -- physics -----------------------------------------------------------
    def integrate_physics(self, dt: float) -> None:
        """One fixed physics substep: mallet, ballistic puck, mallet contact, walls."""
        g = self.geometry
        self._advance_mallet(dt)
        p = self.puck
        p = PuckState(p.x_p + p.v_x * dt, p.y_p + p.v_y * dt, p.v_x, p.v_y)
        hit = resolve_mallet_collision(p, self.mallet, g.contact_dist)
        if hit is not p:
            self.contacted = True
            p = hit
        p, _, hit_y = reflect_walls(p, g)
        if p.y_p >= 0.0:
            self.crossed_centre = True
        if hit_y and self.crossed_centre and not self.contacted:
            self._lateral_exit = True
        self.puck = p
        self.physics_steps += 1

    def step_control(self, action: int) -> StepResult:
        if self.outcome is not Outcome.RUNNING:
            raise ContractError("step_control called on a finished episode; call reset() first")
        cfg = self.config
        self.plan_primitive(action)
        self._lateral_exit = False
        contacted_before = self.contacted
        for _ in range(cfg.substeps):
            self.integrate_physics(cfg.physics_dt)
        self.steps += 1
        r = reward(self.puck, self.mallet, self.geometry.contact_dist, cfg)
        if self.puck.x_p > cfg.success_x and self.puck.v_x > cfg.success_vx:
            self.outcome = Outcome.SUCCESS
        elif self._lateral_exit:
            self.outcome = Outcome.OUT_OF_PLAY
        elif self.steps >= cfg.max_steps:
            self.outcome = Outcome.TIMEOUT
        return StepResult(
            obs=self.observe(),
            reward=r,
            done=self.outcome is not Outcome.RUNNING,
            outcome=self.outcome,
            contact=self.contacted and not contacted_before,
        )
