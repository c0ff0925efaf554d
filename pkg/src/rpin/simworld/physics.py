"""Deterministic 2-D billiards with equal-mass, perfectly elastic balls.

Each frame is integrated in 8 equal substeps. Within a substep positions are
advanced, wall penetrations are mirrored back (with the normal velocity
flipped), and overlapping approaching pairs are resolved in ascending (i, j)
order: both balls are rewound to the moment of contact, their velocity
components along the centre line are exchanged, and they are advanced again
for the rewound time. Both corrections are exact for isolated events, so
kinetic energy is conserved to rounding and collision-free motion is
time-reversible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..numcore.rng import Rng

SUBSTEPS = 8
MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True)
class BallState:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    radius: float = 2.0
    color_index: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.vx, self.vy)


@dataclass(frozen=True)
class WorldState:
    balls: tuple[BallState, ...]
    width: int = 64
    height: int = 64
    time_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))

    @property
    def m(self) -> int:
        return len(self.balls)

    def as_array(self) -> np.ndarray:
        """[m, 5] float64 rows of (x, y, vx, vy, radius)."""
        return np.array([[b.x, b.y, b.vx, b.vy, b.radius] for b in self.balls], dtype=np.float64).reshape(-1, 5)

    @classmethod
    def from_array(cls, arr, width: int = 64, height: int = 64, time_index: int = 0,
                   colors: Sequence[int] | None = None) -> "WorldState":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 5)
        colors = range(len(arr)) if colors is None else colors
        balls = tuple(BallState(*map(float, row), color_index=int(c)) for row, c in zip(arr, colors))
        return cls(balls, width, height, time_index)

    def kinetic_energy(self) -> float:
        return sum(0.5 * (b.vx * b.vx + b.vy * b.vy) for b in self.balls)

    def momentum(self) -> tuple[float, float]:
        return (sum(b.vx for b in self.balls), sum(b.vy for b in self.balls))

    def at_rest(self) -> bool:
        return all(b.vx == 0.0 and b.vy == 0.0 for b in self.balls)


@dataclass(frozen=True)
class SimConfig:
    m: int = 3
    radii: tuple[float, ...] | None = None
    width: int = 64
    height: int = 64
    T_ep: int = 100
    magnitudes: tuple[float, ...] = (2, 3, 4, 5, 6)
    angle_count: int = 12
    radius: float = 2.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"SimConfig: need at least one ball, got m={self.m}")
        if any(mag <= 0 for mag in self.magnitudes):
            raise ValueError("SimConfig: magnitudes must be positive")
        if self.radii is not None and len(self.radii) != self.m:
            raise ValueError(f"SimConfig: {len(self.radii)} radii given for {self.m} balls")
        if self.T_ep < 1 or self.angle_count < 1:
            raise ValueError("SimConfig: T_ep and angle_count must be positive")

    @property
    def ball_radii(self) -> tuple[float, ...]:
        return tuple(self.radii) if self.radii is not None else (float(self.radius),) * self.m

    def to_dict(self) -> dict:
        return {"m": self.m, "radii": list(self.ball_radii), "width": self.width, "height": self.height,
                "T_ep": self.T_ep, "magnitudes": list(self.magnitudes), "angle_count": self.angle_count}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        radii = tuple(float(r) for r in d["radii"]) if d.get("radii") is not None else None
        return cls(m=int(d["m"]), radii=radii, width=int(d.get("width", 64)), height=int(d.get("height", 64)),
                   T_ep=int(d.get("T_ep", 100)), magnitudes=tuple(d.get("magnitudes", (2, 3, 4, 5, 6))),
                   angle_count=int(d.get("angle_count", 12)))


@dataclass(frozen=True)
class Action:
    """Impulse on one resting ball: direction 2*pi*angle_index/angle_count, speed ``magnitude``."""

    angle_index: int
    magnitude: float
    actor: int = 0
    angle_count: int = 12

    @property
    def theta(self) -> float:
        return 2.0 * math.pi * self.angle_index / self.angle_count

    def velocity(self) -> tuple[float, float]:
        return (self.magnitude * math.cos(self.theta), self.magnitude * math.sin(self.theta))


@dataclass
class Episode:
    config: SimConfig | None
    seed: int | None
    states: list[WorldState]
    # contacts[t] holds the (i, j) pairs resolved while stepping states[t] -> states[t+1]
    contacts: list[list[tuple[int, int]]] = field(default_factory=list)

    @property
    def T_ep(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.stack([s.as_array() for s in self.states])


def check_state(state: WorldState, tol: float = 1e-9) -> None:
    """Raise ValueError if radii are non-positive, balls leave the box, or balls overlap."""
    for k, b in enumerate(state.balls):
        if b.radius <= 0:
            raise ValueError(f"ball {k}: radius must be positive")
        if not (b.radius - tol <= b.x <= state.width - b.radius + tol
                and b.radius - tol <= b.y <= state.height - b.radius + tol):
            raise ValueError(f"ball {k} at ({b.x}, {b.y}) is outside the {state.width}x{state.height} box")
    for i in range(state.m):
        for j in range(i + 1, state.m):
            a, b = state.balls[i], state.balls[j]
            if math.hypot(a.x - b.x, a.y - b.y) < a.radius + b.radius - tol:
                raise ValueError(f"balls {i} and {j} overlap")


def init_random(config: SimConfig, rng: Rng) -> WorldState:
    """Place balls uniformly without overlap and set one random ball in motion."""
    radii = config.ball_radii
    placed: list[tuple[float, float]] = []
    for k, r in enumerate(radii):
        if 2 * r > min(config.width, config.height):
            raise ValueError(f"ball {k} with radius {r} does not fit on the board")
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x = float(rng.uniform(r, config.width - r))
            y = float(rng.uniform(r, config.height - r))
            if all(math.hypot(x - px, y - py) >= r + radii[q] for q, (px, py) in enumerate(placed)):
                placed.append((x, y))
                break
        else:
            raise ValueError(f"could not place ball {k} after {MAX_PLACEMENT_ATTEMPTS} attempts; board too crowded")
    mover = int(rng.integers(0, config.m))
    magnitude = float(config.magnitudes[int(rng.integers(0, len(config.magnitudes)))])
    angle = int(rng.integers(0, config.angle_count))
    vx, vy = Action(angle, magnitude, mover, config.angle_count).velocity()
    balls = tuple(
        BallState(x, y, vx if k == mover else 0.0, vy if k == mover else 0.0, radii[k], k)
        for k, (x, y) in enumerate(placed)
    )
    return WorldState(balls, config.width, config.height, 0)


def _walls(px, py, vx, vy, r, width, height):
    for i in range(len(px)):
        lo, hi = r[i], width - r[i]
        if px[i] < lo:
            px[i] = 2 * lo - px[i]
            if vx[i] < 0:
                vx[i] = -vx[i]
        elif px[i] > hi:
            px[i] = 2 * hi - px[i]
            if vx[i] > 0:
                vx[i] = -vx[i]
        lo, hi = r[i], height - r[i]
        if py[i] < lo:
            py[i] = 2 * lo - py[i]
            if vy[i] < 0:
                vy[i] = -vy[i]
        elif py[i] > hi:
            py[i] = 2 * hi - py[i]
            if vy[i] > 0:
                vy[i] = -vy[i]


def _collide(px, py, vx, vy, r, dt, contacts):
    m = len(px)
    for i in range(m):
        for j in range(i + 1, m):
            dx, dy = px[j] - px[i], py[j] - py[i]
            rr = r[i] + r[j]
            d2 = dx * dx + dy * dy
            if d2 >= rr * rr or d2 == 0.0:
                continue
            ux, uy = vx[j] - vx[i], vy[j] - vy[i]
            du = dx * ux + dy * uy
            if du >= 0:
                continue  # already separating
            uu = ux * ux + uy * uy
            s = min((du + math.sqrt(max(du * du - uu * (d2 - rr * rr), 0.0))) / uu, dt)
            px[i] -= vx[i] * s
            py[i] -= vy[i] * s
            px[j] -= vx[j] * s
            py[j] -= vy[j] * s
            dx, dy = px[j] - px[i], py[j] - py[i]
            dist = math.sqrt(dx * dx + dy * dy)
            nx, ny = dx / dist, dy / dist
            k = (vx[i] - vx[j]) * nx + (vy[i] - vy[j]) * ny
            vx[i] -= k * nx
            vy[i] -= k * ny
            vx[j] += k * nx
            vy[j] += k * ny
            px[i] += vx[i] * s
            py[i] += vy[i] * s
            px[j] += vx[j] * s
            py[j] += vy[j] * s
            contacts.append((i, j))


def step_with_contacts(state: WorldState) -> tuple[WorldState, list[tuple[int, int]]]:
    """Advance one frame; also return the ball pairs whose collision was resolved."""
    balls = state.balls
    px = [b.x for b in balls]
    py = [b.y for b in balls]
    vx = [b.vx for b in balls]
    vy = [b.vy for b in balls]
    r = [b.radius for b in balls]
    dt = 1.0 / SUBSTEPS
    contacts: list[tuple[int, int]] = []
    for _ in range(SUBSTEPS):
        for i in range(len(px)):
            px[i] += vx[i] * dt
            py[i] += vy[i] * dt
        _walls(px, py, vx, vy, r, state.width, state.height)
        _collide(px, py, vx, vy, r, dt, contacts)
        _walls(px, py, vx, vy, r, state.width, state.height)
    new = tuple(replace(b, x=px[k], y=py[k], vx=vx[k], vy=vy[k]) for k, b in enumerate(balls))
    return WorldState(new, state.width, state.height, state.time_index + 1), contacts


def step(state: WorldState) -> WorldState:
    return step_with_contacts(state)[0]


def rollout(state: WorldState, T: int, config: SimConfig | None = None, seed: int | None = None) -> Episode:
    """T states starting with ``state`` itself."""
    if T < 1:
        raise ValueError(f"rollout: T must be >= 1, got {T}")
    states, contacts = [state], []
    for _ in range(T - 1):
        state, c = step_with_contacts(state)
        states.append(state)
        contacts.append(c)
    return Episode(config, seed, states, contacts)


def apply_action(state: WorldState, ball_index: int, action: Action) -> WorldState:
    """Give ball ``ball_index`` the action's velocity; every ball must be at rest."""
    if not 0 <= ball_index < state.m:
        raise ValueError(f"apply_action: ball index {ball_index} out of range for {state.m} balls")
    if not state.at_rest():
        raise ValueError("apply_action: all balls must be at rest")
    if action.magnitude == 0:
        return state
    vx, vy = action.velocity()
    balls = list(state.balls)
    balls[ball_index] = replace(balls[ball_index], vx=vx, vy=vy)
    return WorldState(tuple(balls), state.width, state.height, state.time_index)


def generate_episode(config: SimConfig, seed: int) -> Episode:
    state = init_random(config, Rng(seed))
    return rollout(state, config.T_ep, config, seed)
