"""Appearance-free oracle tracker.

The tracker sees only rendered frames plus the two marker centres. It
labels 4-connected dot components in every frame, associates them with
constant-velocity track predictions via exact assignment, carries tracks
through merges on frozen velocities, and reports whether the track born
at the start marker ends inside the finish marker.

Track positions are continuous centres: a component's pixel-index mean
plus 0.5, so an isolated 2x2 dot anchored at ``a`` sits at ``a + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .assignment import hungarian_assign
from .errors import MalformedSampleError, TrackingError
from .scene import CONTAIN_RADIUS, Label, VideoSample

SMOOTHING = 0.7
START_RADIUS = 3.0
SENTINEL = 1e4


@dataclass(frozen=True)
class Detection:
    centroid: tuple[float, float]  # pixel-index mean (x = column, y = row)
    pixel_count: int
    frame_index: int
    bbox: tuple[int, int, int, int] = (0, 0, 0, 0)  # x0, y0, x1, y1 inclusive
    # centres of every fully lit 2x2 window in the component; each dot in a
    # merged blob is one of these
    candidates: tuple = ()

    @property
    def center(self):
        return np.array([self.centroid[0] + 0.5, self.centroid[1] + 0.5])


@dataclass
class TrackState:
    position: np.ndarray
    velocity: np.ndarray
    is_target: bool = False
    merged: bool = False
    history: list = field(default_factory=list)  # detection index per frame


@dataclass
class TrackSet:
    tracks: list[TrackState]
    frame_cursor: int = 0
    failures: list = field(default_factory=list)

    @property
    def target(self) -> TrackState:
        return next(t for t in self.tracks if t.is_target)


# -- connected components ----------------------------------------------------

def _label_loop(mask):
    h, w = mask.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] < 0:
                labels[r, c] = n
                top = 0
                stack[0] = r * w + c
                top = 1
                while top > 0:
                    top -= 1
                    k = stack[top]
                    y = k // w
                    x = k - y * w
                    if y > 0 and mask[y - 1, x] and labels[y - 1, x] < 0:
                        labels[y - 1, x] = n
                        stack[top] = k - w
                        top += 1
                    if y < h - 1 and mask[y + 1, x] and labels[y + 1, x] < 0:
                        labels[y + 1, x] = n
                        stack[top] = k + w
                        top += 1
                    if x > 0 and mask[y, x - 1] and labels[y, x - 1] < 0:
                        labels[y, x - 1] = n
                        stack[top] = k - 1
                        top += 1
                    if x < w - 1 and mask[y, x + 1] and labels[y, x + 1] < 0:
                        labels[y, x + 1] = n
                        stack[top] = k + 1
                        top += 1
                n += 1
    return labels, n


def _label_numpy(mask):
    """Min-index propagation; components are numbered in raster order of their first pixel."""
    h, w = mask.shape
    big = h * w
    lab = np.where(mask, np.arange(big).reshape(h, w), big)
    while True:
        nb = lab.copy()
        nb[1:] = np.minimum(nb[1:], lab[:-1])
        nb[:-1] = np.minimum(nb[:-1], lab[1:])
        nb[:, 1:] = np.minimum(nb[:, 1:], lab[:, :-1])
        nb[:, :-1] = np.minimum(nb[:, :-1], lab[:, 1:])
        nb = np.where(mask, nb, big)
        if np.array_equal(nb, lab):
            break
        lab = nb
    roots, inv = np.unique(lab[mask], return_inverse=True)
    labels = np.full((h, w), -1, dtype=np.int64)
    labels[mask] = inv
    return labels, len(roots)


_label_numba = _accel.njit(_label_loop)


def label_components(mask: np.ndarray):
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if _accel.use_numba():
        return _label_numba(mask)
    return _label_numpy(mask)


def dot_mask(frame: np.ndarray, layout: str) -> np.ndarray:
    """Dots live alone in channel 1 of rendered layouts and in channel 2 of flow encodings."""
    if layout in ("mixed", "engineered"):
        return frame[..., 1] > 0
    if layout == "flow":
        return frame[..., 2] > 0
    raise ValueError(f"cannot detect dots in layout {layout!r}")


def detect_dots(frame: np.ndarray, layout: str, frame_index: int = 0) -> list[Detection]:
    labels, n = label_components(dot_mask(frame, layout))
    if n == 0:
        return []
    rows, cols = np.nonzero(labels >= 0)
    ids = labels[rows, cols]
    counts = np.bincount(ids, minlength=n)
    cx = np.bincount(ids, weights=cols, minlength=n) / counts
    cy = np.bincount(ids, weights=rows, minlength=n) / counts
    x0 = np.full(n, 1 << 30)
    y0 = np.full(n, 1 << 30)
    x1 = np.full(n, -1)
    y1 = np.full(n, -1)
    np.minimum.at(x0, ids, cols)
    np.minimum.at(y0, ids, rows)
    np.maximum.at(x1, ids, cols)
    np.maximum.at(y1, ids, rows)
    full = (labels[:-1, :-1] >= 0) & (labels[1:, :-1] >= 0) & (labels[:-1, 1:] >= 0) & (labels[1:, 1:] >= 0)
    wr, wc = np.nonzero(full)
    wid = labels[wr, wc]
    cands = [[] for _ in range(n)]
    for r, c, i in zip(wr.tolist(), wc.tolist(), wid.tolist()):
        cands[i].append((c + 1.0, r + 1.0))
    return [
        Detection((float(cx[i]), float(cy[i])), int(counts[i]), frame_index,
                  (int(x0[i]), int(y0[i]), int(x1[i]), int(y1[i])), tuple(cands[i]))
        for i in range(n)
    ]


# -- tracking ----------------------------------------------------------------

def _candidates(d: Detection) -> np.ndarray:
    if d.candidates:
        return np.array(d.candidates, dtype=np.float64)
    return d.center[None, :]


def _nearest(points: np.ndarray, q) -> np.ndarray:
    return points[int(np.argmin(np.hypot(points[:, 0] - q[0], points[:, 1] - q[1])))]


def init_tracks(detections: list[Detection], start_center) -> TrackSet:
    """One track per first-frame detection; the one covering the start marker is the target."""
    if not detections:
        raise MalformedSampleError("no dots in the first frame")
    sc = np.asarray(start_center, dtype=float)
    gap = []
    for d in detections:
        x0, y0, x1, y1 = d.bbox
        # continuous extent of the component is [x0, x1 + 1]
        gx = max(x0 - sc[0], sc[0] - (x1 + 1), 0.0)
        gy = max(y0 - sc[1], sc[1] - (y1 + 1), 0.0)
        gap.append(max(gx, gy))
    first = int(np.argmin(gap))
    if gap[first] > START_RADIUS:
        raise MalformedSampleError(
            f"no detection within {START_RADIUS} px of the start marker at {tuple(start_center)}"
        )
    tracks = []
    for j, d in enumerate(detections):
        pos = _nearest(_candidates(d), sc) if j == first else d.center
        tracks.append(TrackState(np.array(pos, dtype=float), np.zeros(2), is_target=(j == first), history=[j]))
    return TrackSet(tracks, frame_cursor=1)


def _turn(vel, disp):
    """Angle between a velocity and a displacement; 0 when either is null."""
    a = np.hypot(*vel)
    b = np.hypot(*disp)
    if a < 1e-9 or b < 1e-9:
        return 0.0
    cos = float(np.dot(vel, disp) / (a * b))
    return float(np.arccos(min(1.0, max(-1.0, cos))))


# Dots reflect off the walk domain [1.5, 30.5); in centre-estimate units
# (floor(p) + 1) that is [2, 31]. A prediction landing this close to a wall
# may also be explained by a reflected velocity component.
WALL_LO = 2.0
WALL_HI = 31.0
WALL_SLACK = 1.0
_FLIPS = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])


def _hypotheses(pos, vel):
    """Predicted positions under each reflection pattern, ``(n, 4, 2)``, and their validity."""
    pred = pos + vel
    near = (pred < WALL_LO + WALL_SLACK) & (vel < 0) | (pred > WALL_HI - WALL_SLACK) & (vel > 0)
    hyp = pos[:, None, :] + vel[:, None, :] * _FLIPS[None, :, :]
    flipped = _FLIPS[None, :, :] < 0
    valid = ~np.any(flipped & ~near[:, None, :], axis=2)
    return hyp, valid


def step_tracks(ts: TrackSet, detections: list[Detection], speed: int) -> TrackSet:
    """Advance every track by one frame (mutates and returns ``ts``)."""
    frame = ts.frame_cursor
    if not detections:
        ts.failures.append(frame)
        raise TrackingError(f"no detections in frame {frame}")
    gate = 2.0 * speed + 2.0
    tracks = ts.tracks
    n, m = len(tracks), len(detections)
    pos = np.array([t.position for t in tracks])
    vel = np.array([t.velocity for t in tracks])
    hyp, valid = _hypotheses(pos, vel)

    # distance from each track's best hypothesis to each detection's nearest candidate
    dist = np.empty((n, m))
    best_h = np.zeros((n, m), dtype=np.int64)
    cands = [_candidates(d) for d in detections]
    for j, cj in enumerate(cands):
        dd = np.hypot(hyp[:, :, None, 0] - cj[None, None, :, 0], hyp[:, :, None, 1] - cj[None, None, :, 1])
        dd = np.where(valid[:, :, None], dd, np.inf).min(axis=2)
        best_h[:, j] = np.argmin(dd, axis=1)
        dist[:, j] = dd[np.arange(n), best_h[:, j]]
    cost = np.where(dist <= gate, dist, SENTINEL)

    assign = {i: j for i, j in hungarian_assign(cost) if cost[i, j] < SENTINEL}
    # leftover tracks share their nearest detection
    for i in range(n):
        if i not in assign:
            assign[i] = int(np.argmin(dist[i]))

    # tracks that shared a detection last frame and now land on distinct
    # detections are re-paired by smallest change of heading
    groups = {}
    for i, t in enumerate(tracks):
        if t.merged and t.history:
            groups.setdefault(t.history[-1], []).append(i)
    for members in groups.values():
        targets = sorted({assign[i] for i in members})
        if len(members) < 2 or len(targets) < 2:
            continue
        turn = np.array([[_turn(vel[i] * _FLIPS[best_h[i, j]], _nearest(cands[j], hyp[i, best_h[i, j]]) - pos[i])
                          for j in targets]
                         for i in members])
        for a, b in hungarian_assign(turn):
            assign[members[a]] = targets[b]

    share = np.bincount(np.fromiter((assign[i] for i in range(n)), dtype=np.int64, count=n), minlength=m)
    for i, t in enumerate(tracks):
        j = assign[i]
        h = best_h[i, j]
        new = _nearest(cands[j], hyp[i, h])
        if share[j] > 1:
            t.velocity = vel[i] * _FLIPS[h]
            t.merged = True
        else:
            t.velocity = SMOOTHING * (new - pos[i]) + (1.0 - SMOOTHING) * vel[i] * _FLIPS[h]
            t.merged = False
        t.position = new.copy()
        t.history.append(j)

    for j in np.flatnonzero(share == 0):
        tracks.append(TrackState(detections[j].center, np.zeros(2), history=[-1] * frame + [int(j)]))
    ts.frame_cursor = frame + 1
    return ts


def track_frames(frames: np.ndarray, start_center, layout: str, speed: int) -> TrackSet:
    ts = init_tracks(detect_dots(frames[0], layout, 0), start_center)
    for f in range(1, len(frames)):
        step_tracks(ts, detect_dots(frames[f], layout, f), speed)
    return ts


def classify_frames(frames: np.ndarray, start_center, finish_center, layout: str, speed: int):
    """Return ``(label, target_final_position)`` from pixels and marker centres only."""
    ts = track_frames(frames, start_center, layout, speed)
    final = ts.target.position
    inside = np.abs(final - np.asarray(finish_center, dtype=float)).max() <= CONTAIN_RADIUS
    return (Label.POSITIVE if inside else Label.NEGATIVE), final


def classify_sample(sample: VideoSample) -> Label:
    label, _ = classify_frames(sample.frames, sample.start.center, sample.finish.center,
                               sample.layout, sample.speed)
    return label
