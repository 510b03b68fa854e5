"""Labelled Pathtracker samples: composition, rasterisation, statistics.

Coordinates are continuous pixels with x along columns; pixel ``(r, c)``
covers ``[c, c+1) x [r, r+1)``. A dot at ``p`` is drawn as the 2x2
square anchored at ``floor(p)``; a marker centred at integer ``c`` covers
``[c-2, c+2)`` on both axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, GenerationError
from .trajgen import GenConfig, Trajectory, sample_base_walk, subsample_speed

DOT_SIZE = 2
MARKER_SIZE = 4
CONTAIN_RADIUS = 1.5
NEGATIVE_MARGIN = 6.0
EXCLUSION_RADIUS = 3.0
FOLDS = {"train": 0, "test": 1}
_CHOICE_KEY = 0xFFFFFFFF


class Label(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1

    def __str__(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, Label):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {value!r}") from None


class MarkerKind(enum.Enum):
    START = "start"
    FINISH = "finish"


@dataclass(frozen=True)
class Marker:
    center: tuple[int, int]
    kind: MarkerKind

    @classmethod
    def at(cls, position, kind, height=32, width=32):
        half = MARKER_SIZE // 2
        cx = int(np.floor(position[0] + 0.5))
        cy = int(np.floor(position[1] + 0.5))
        cx = min(max(cx, half), width - half)
        cy = min(max(cy, half), height - half)
        return cls((cx, cy), kind)

    def pixel_slices(self):
        half = MARKER_SIZE // 2
        cx, cy = self.center
        return slice(cy - half, cy + half), slice(cx - half, cx + half)


def chebyshev(p, q) -> float:
    return float(max(abs(p[0] - q[0]), abs(p[1] - q[1])))


@dataclass(eq=False)
class VideoSample:
    frames: np.ndarray  # (T, H, W, 3) uint8
    label: Label
    target: Trajectory
    distractors: list[Trajectory]
    start: Marker
    finish: Marker
    finisher_index: int  # 0 = target, i >= 1 = distractors[i - 1]
    sample_seed: int
    layout: str
    speed: int = 1
    resamples: int = 0

    @property
    def dots(self) -> list[Trajectory]:
        return [self.target, *self.distractors]

    @property
    def finisher(self) -> Trajectory:
        return self.dots[self.finisher_index]


# -- seeding ---------------------------------------------------------------

def derive_seed(master_seed: int, *keys: int) -> int:
    """Mix a 64-bit seed with integer keys into a new 64-bit seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def sample_seed_for(master_seed: int, fold: str, index: int) -> int:
    return derive_seed(master_seed, FOLDS[fold], index)


def dot_rng(sample_seed: int, dot_index: int, attempt: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(sample_seed), spawn_key=(dot_index, attempt))
    return np.random.Generator(np.random.PCG64(ss))


def make_trajectory(sample_seed: int, dot_index: int, attempt: int, cfg: GenConfig) -> Trajectory:
    base = sample_base_walk(dot_rng(sample_seed, dot_index, attempt), cfg.base_steps, cfg)
    return subsample_speed(base, cfg.speed, cfg.frames)


# -- rendering -------------------------------------------------------------

def _check_positions(pos, height, width):
    if pos.size and (pos.min() < 0 or pos[..., 0].max() >= width - 1 or pos[..., 1].max() >= height - 1):
        raise ValueError("dot positions must keep the 2x2 square inside the canvas")


def _compose_channels(dots, start, finish, layout):
    """``dots`` is a (..., H, W) bool mask; markers are (H, W) bool masks."""
    shape = dots.shape + (3,)
    out = np.zeros(shape, dtype=np.uint8)
    if layout == "mixed":
        out[..., 0] = np.where(dots | start, 255, 0)
        out[..., 1] = np.where(dots, 255, 0)
        out[..., 2] = np.where(dots | finish, 255, 0)
    elif layout == "engineered":
        out[..., 0] = np.where(start, 255, 0)
        out[..., 1] = np.where(dots, 255, 0)
        out[..., 2] = np.where(finish, 255, 0)
    else:
        raise ConfigError(f"cannot render layout {layout!r}")
    return out


def _marker_mask(marker, height, width):
    m = np.zeros((height, width), dtype=bool)
    if marker is not None:
        m[marker.pixel_slices()] = True
    return m


def render_frame(dot_positions, markers, layout: str, height: int = 32, width: int = 32) -> np.ndarray:
    """Rasterise one ``(H, W, 3)`` uint8 frame."""
    pos = np.asarray(dot_positions, dtype=np.float64).reshape(-1, 2)
    _check_positions(pos, height, width)
    dots = np.zeros((height, width), dtype=bool)
    anchors = np.floor(pos).astype(np.int64)
    for dy in range(DOT_SIZE):
        for dx in range(DOT_SIZE):
            dots[anchors[:, 1] + dy, anchors[:, 0] + dx] = True
    start, finish = markers
    return _compose_channels(dots, _marker_mask(start, height, width), _marker_mask(finish, height, width), layout)


def render_video(trajectories: Sequence[Trajectory], start: Marker, finish: Marker, layout: str,
                 height: int = 32, width: int = 32) -> np.ndarray:
    """Rasterise all frames at once; frame ``t`` equals ``render_frame`` on the t-th positions."""
    pos = np.stack([t.positions for t in trajectories], axis=1)  # (T, n, 2)
    _check_positions(pos, height, width)
    n_frames = pos.shape[0]
    anchors = np.floor(pos).astype(np.int64)
    dots = np.zeros((n_frames, height, width), dtype=bool)
    t_idx = np.broadcast_to(np.arange(n_frames)[:, None], anchors.shape[:2])
    for dy in range(DOT_SIZE):
        for dx in range(DOT_SIZE):
            dots[t_idx, anchors[..., 1] + dy, anchors[..., 0] + dx] = True
    return _compose_channels(dots, _marker_mask(start, height, width), _marker_mask(finish, height, width), layout)


def crossing_stats(sample: VideoSample) -> int:
    """Frames in which the target's square overlaps any distractor's square."""
    if not sample.distractors:
        return 0
    tgt = np.floor(sample.target.positions)
    others = np.stack([np.floor(d.positions) for d in sample.distractors], axis=1)
    gap = np.abs(others - tgt[:, None, :]).max(axis=2)
    return int(np.count_nonzero((gap < DOT_SIZE).any(axis=1)))


# -- composition -----------------------------------------------------------

def _draw_until(sample_seed, dot, cfg, accept, what):
    for attempt in range(cfg.max_resample_attempts):
        t = make_trajectory(sample_seed, dot, attempt, cfg)
        if accept(t):
            return t, attempt
    raise GenerationError(
        f"{what}: no acceptable trajectory for dot {dot} after {cfg.max_resample_attempts} attempts "
        f"(frames={cfg.frames}, distractors={cfg.distractors}, speed={cfg.speed}, seed={sample_seed})"
    )


def _finish(sample_seed, cfg, label, dots, finisher, resamples):
    h, w = cfg.height, cfg.width
    start = Marker.at(dots[0].start, MarkerKind.START, h, w)
    finish = Marker.at(dots[finisher].end, MarkerKind.FINISH, h, w)
    frames = render_video(dots, start, finish, cfg.layout, h, w)
    return VideoSample(frames, label, dots[0], dots[1:], start, finish, finisher,
                       int(sample_seed), cfg.layout, cfg.speed, resamples)


def compose_positive(sample_seed: int, cfg: GenConfig) -> VideoSample:
    target = make_trajectory(sample_seed, 0, 0, cfg)
    finish = Marker.at(target.end, MarkerKind.FINISH, cfg.height, cfg.width)
    dots, resamples = [target], 0
    for i in range(1, cfg.distractors + 1):
        t, n = _draw_until(sample_seed, i, cfg, lambda t: chebyshev(t.end, finish.center) > EXCLUSION_RADIUS,
                           "positive sample")
        dots.append(t)
        resamples += n
    return _finish(sample_seed, cfg, Label.POSITIVE, dots, 0, resamples)


def compose_negative(sample_seed: int, cfg: GenConfig) -> VideoSample:
    if cfg.distractors < 1:
        raise ConfigError("negative impossible without distractors")
    choice = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(sample_seed), spawn_key=(_CHOICE_KEY,))))
    finisher = int(choice.integers(1, cfg.distractors + 1))
    fin_traj = make_trajectory(sample_seed, finisher, 0, cfg)
    finish = Marker.at(fin_traj.end, MarkerKind.FINISH, cfg.height, cfg.width)
    dots, resamples = [], 0
    for i in range(cfg.distractors + 1):
        if i == finisher:
            dots.append(fin_traj)
            continue
        if i == 0:
            ok = lambda t: chebyshev(t.end, finish.center) >= NEGATIVE_MARGIN  # noqa: E731
        else:
            ok = lambda t: chebyshev(t.end, finish.center) > EXCLUSION_RADIUS  # noqa: E731
        t, n = _draw_until(sample_seed, i, cfg, ok, "negative sample")
        dots.append(t)
        resamples += n
    return _finish(sample_seed, cfg, Label.NEGATIVE, dots, finisher, resamples)


def label_for_index(index: int) -> Label:
    """Folds alternate positive/negative starting with a positive."""
    return Label.POSITIVE if index % 2 == 0 else Label.NEGATIVE


def compose(sample_seed: int, cfg: GenConfig, label: Label) -> VideoSample:
    return compose_positive(sample_seed, cfg) if label == Label.POSITIVE else compose_negative(sample_seed, cfg)


def generate_fold(cfg: GenConfig, fold: str = "train", count: int | None = None, start: int = 0) -> Iterator[VideoSample]:
    if fold not in FOLDS:
        raise ConfigError(f"fold must be 'train' or 'test', got {fold!r}")
    if count is None:
        count = cfg.train_count if fold == "train" else cfg.test_count
    for i in range(start, start + count):
        yield compose(sample_seed_for(cfg.master_seed, fold, i), cfg, label_for_index(i))


def check_sample(sample: VideoSample, cfg: GenConfig | None = None, tol: float = 1e-9) -> list[str]:
    """Recheck label semantics and marker geometry; empty list means valid.

    With ``cfg`` given, every trajectory is also validated at tolerance ``tol``.
    """
    from .trajgen import validate_trajectory

    problems = []
    fc = sample.finish.center
    if (sample.label == Label.POSITIVE) != (sample.finisher_index == 0):
        problems.append("label disagrees with finisher index")
    if chebyshev(sample.finisher.end, fc) > CONTAIN_RADIUS:
        problems.append("finisher does not end inside the finish marker")
    if sample.label == Label.NEGATIVE and chebyshev(sample.target.end, fc) < NEGATIVE_MARGIN:
        problems.append("negative target ends too close to the finish marker")
    for i, d in enumerate(sample.dots):
        if i != sample.finisher_index and chebyshev(d.end, fc) <= EXCLUSION_RADIUS:
            problems.append(f"non-finisher dot {i} ends within {EXCLUSION_RADIUS} px of the finish marker")
    if chebyshev(sample.target.start, sample.start.center) > CONTAIN_RADIUS:
        problems.append("target does not start inside the start marker")
    if cfg is not None:
        for i, d in enumerate(sample.dots):
            for v in validate_trajectory(d, cfg, tol):
                problems.append(f"dot {i}: {v.kind} at {v.index}: {v.detail}")
    return problems
