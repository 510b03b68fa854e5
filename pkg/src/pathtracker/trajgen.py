"""Constrained random-walk trajectories and speed scaling.

A dot moves in fixed 2 px steps. Each step rotates the heading by a turn
drawn uniformly from [-20, 20] degrees; a step that would leave the walk
domain has the offending heading component reflected instead. Speed
``k`` is realised by walking ``k`` times as far and keeping every
``k``-th point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ConfigError

STEP_LEN = 2.0
MAX_TURN_DEG = 20.0
# Keeps the 2x2 dot anchored at floor(p) and a 4x4 marker centred on
# round(p) inside the canvas without clamping.
WALK_MARGIN = 1.5

SPEEDS = {"normal": 1, "fast": 2, "very_fast": 4}
FRAME_LEVELS = (32, 64, 128)
MAX_PATH_FRAMES = 128
LAYOUTS = ("mixed", "engineered")
PRNG_ID = "numpy.PCG64+SeedSequence"


def parse_speed(value) -> int:
    if isinstance(value, str):
        key = value.strip().lower().replace(" ", "_").replace("-", "_")
        if key in SPEEDS:
            return SPEEDS[key]
        try:
            value = int(key)
        except ValueError:
            raise ConfigError(f"unknown speed {value!r}") from None
    k = int(value)
    if k not in SPEEDS.values():
        raise ConfigError(f"speed multiplier must be 1, 2 or 4, got {k}")
    return k


def valid_combos():
    return [(t, k) for t in FRAME_LEVELS for k in (1, 2, 4) if t * k <= MAX_PATH_FRAMES]


@dataclass(frozen=True)
class GenConfig:
    frames: int = 32
    distractors: int = 1
    speed: int = 1
    layout: str = "mixed"
    height: int = 32
    width: int = 32
    train_count: int = 20000
    test_count: int = 20000
    master_seed: int = 0
    max_resample_attempts: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "speed", parse_speed(self.speed))
        if self.frames not in FRAME_LEVELS:
            raise ConfigError(f"frames must be one of {FRAME_LEVELS}, got {self.frames}")
        if self.frames * self.speed > MAX_PATH_FRAMES:
            raise ConfigError(
                f"frames={self.frames} at speed x{self.speed} exceeds the "
                f"{MAX_PATH_FRAMES}-frame path length cap"
            )
        if (self.height, self.width) != (32, 32):
            raise ConfigError("canvas must be 32x32")
        if self.distractors < 0:
            raise ConfigError("distractors must be >= 0")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.train_count < 0 or self.test_count < 0:
            raise ConfigError("fold sizes must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.max_resample_attempts < 1:
            raise ConfigError("max_resample_attempts must be >= 1")

    @property
    def base_steps(self) -> int:
        return self.speed * (self.frames - 1)

    @property
    def walk_bounds(self):
        """Half-open ``[lo, hi)`` box for dot positions, identical on both axes."""
        return WALK_MARGIN, self.width - WALK_MARGIN

    def to_dict(self):
        return {
            "frames": self.frames,
            "distractors": self.distractors,
            "speed": self.speed,
            "layout": self.layout,
            "height": self.height,
            "width": self.width,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "master_seed": self.master_seed,
            "max_resample_attempts": self.max_resample_attempts,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(eq=False)
class Trajectory:
    """Positions are ``(x, y)`` in continuous pixel units, x along columns."""

    base_positions: np.ndarray
    reflected: np.ndarray
    speed: int = 1
    base_step_len: float = STEP_LEN
    positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.base_positions = np.ascontiguousarray(self.base_positions, dtype=np.float64)
        self.reflected = np.ascontiguousarray(self.reflected, dtype=bool)
        if len(self.reflected) != max(len(self.base_positions) - 1, 0):
            raise ConfigError("reflection flags must have one entry per base step")
        self.positions = self.base_positions[:: self.speed]

    @property
    def frames(self):
        return len(self.positions)

    @property
    def headings(self):
        d = np.diff(self.base_positions, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    @property
    def start(self):
        return self.positions[0]

    @property
    def end(self):
        return self.positions[-1]


def _walk_loop(x0, y0, hx0, hy0, cos_t, sin_t, step, lo, hi):
    n = cos_t.shape[0]
    out = np.empty((n + 1, 2))
    refl = np.zeros(n, dtype=np.bool_)
    x, y, hx, hy = x0, y0, hx0, hy0
    out[0, 0] = x
    out[0, 1] = y
    for i in range(n):
        nx = hx * cos_t[i] - hy * sin_t[i]
        ny = hx * sin_t[i] + hy * cos_t[i]
        norm = math.sqrt(nx * nx + ny * ny)
        hx = nx / norm
        hy = ny / norm
        px = x + step * hx
        if px < lo or px >= hi:
            hx = -hx
            refl[i] = True
        py = y + step * hy
        if py < lo or py >= hi:
            hy = -hy
            refl[i] = True
        x = x + step * hx
        y = y + step * hy
        out[i + 1, 0] = x
        out[i + 1, 1] = y
    return out, refl


_walk_numba = _accel.njit(_walk_loop)
# The walk is a sequential recurrence (reflection depends on position), so
# the numpy path runs the same loop in the interpreter.
_walk_numpy = _walk_loop


def integrate_walk(x0, y0, heading0, turns, step=STEP_LEN, bounds=(WALK_MARGIN, 32 - WALK_MARGIN)):
    """Integrate a walk from its start state and per-step turn angles (radians)."""
    turns = np.ascontiguousarray(turns, dtype=np.float64)
    cos_t = np.cos(turns)
    sin_t = np.sin(turns)
    hx0 = float(np.cos(heading0))
    hy0 = float(np.sin(heading0))
    kernel = _walk_numba if _accel.use_numba() else _walk_numpy
    return kernel(float(x0), float(y0), hx0, hy0, cos_t, sin_t, float(step), float(bounds[0]), float(bounds[1]))


def sample_base_walk(rng: np.random.Generator, n_steps: int, config: GenConfig) -> Trajectory:
    """Draw an ``n_steps``-step base walk (``n_steps + 1`` points, speed 1)."""
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0")
    lo, hi = config.walk_bounds
    start = rng.uniform(lo, hi, size=2)
    heading0 = rng.uniform(0.0, 2.0 * np.pi)
    max_turn = np.deg2rad(MAX_TURN_DEG)
    turns = rng.uniform(-max_turn, max_turn, size=n_steps)
    base, refl = integrate_walk(start[0], start[1], heading0, turns, STEP_LEN, (lo, hi))
    return Trajectory(base, refl, speed=1)


def subsample_speed(base: Trajectory, k: int, frames: int | None = None) -> Trajectory:
    """Keep every ``k``-th base point of a speed-1 walk."""
    k = parse_speed(k)
    n = len(base.base_positions)
    if (n - 1) % k != 0 or (frames is not None and n != k * (frames - 1) + 1):
        want = "k*(frames-1)+1" if frames is None else str(k * (frames - 1) + 1)
        raise ConfigError(f"base walk has {n} points, need {want} for speed x{k}")
    return Trajectory(base.base_positions, base.reflected, speed=k, base_step_len=base.base_step_len)


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    detail: str


def validate_trajectory(t: Trajectory, cfg: GenConfig, tol: float = 1e-9) -> list[Violation]:
    """List every broken trajectory constraint; empty means valid."""
    out = []
    base = t.base_positions
    k = t.speed
    if k != cfg.speed:
        out.append(Violation("speed", -1, f"trajectory speed {k} != config speed {cfg.speed}"))
    if len(base) != k * (cfg.frames - 1) + 1:
        out.append(Violation("length", -1, f"{len(base)} base points for {cfg.frames} frames at x{k}"))
    if len(t.positions) != cfg.frames:
        out.append(Violation("length", -1, f"{len(t.positions)} positions, expected {cfg.frames}"))
    if not np.array_equal(t.positions, base[::k]):
        bad = np.flatnonzero(np.any(t.positions[: len(base[::k])] != base[::k][: len(t.positions)], axis=1))
        out.append(Violation("subsample", int(bad[0]) if len(bad) else -1, "positions differ from base[::k]"))

    steps = np.diff(base, axis=0)
    lengths = np.hypot(steps[:, 0], steps[:, 1])
    for i in np.flatnonzero(np.abs(lengths - t.base_step_len) > tol):
        out.append(Violation("step_length", int(i) + 1, f"base step {i} has length {lengths[i]:.6f}"))

    if len(steps) >= 2:
        ang = np.arctan2(steps[:, 1], steps[:, 0])
        turn = np.abs((np.diff(ang) + np.pi) % (2 * np.pi) - np.pi)
        limit = np.deg2rad(MAX_TURN_DEG) + tol
        for i in np.flatnonzero((turn > limit) & ~t.reflected[1:]):
            out.append(Violation("bend", int(i) + 1, f"turn of {np.rad2deg(turn[i]):.3f} deg"))

    fsteps = np.diff(t.positions, axis=0)
    flen = np.hypot(fsteps[:, 0], fsteps[:, 1])
    for i in np.flatnonzero(flen > k * t.base_step_len + tol):
        out.append(Violation("frame_step", int(i) + 1, f"frame displacement {flen[i]:.6f} > {k * t.base_step_len}"))

    lo, hi = cfg.walk_bounds
    oob = np.any((base < lo - tol) | (base >= hi + tol), axis=1)
    for i in np.flatnonzero(oob):
        out.append(Violation("bounds", int(i), f"base point {base[i].tolist()} outside [{lo}, {hi})"))
    return out
