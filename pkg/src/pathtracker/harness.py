"""Evaluation engine: accuracy with Wilson intervals, difficulty sweeps, external scoring."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .dataio import FIXED_TOL, read_dataset
from .errors import ConfigError, MissingIndexError, PathtrackerError, PredictionFileError
from .scene import Label, crossing_stats, generate_fold
from .tracker import classify_sample
from .trajgen import FRAME_LEVELS, LAYOUTS, MAX_PATH_FRAMES, GenConfig, parse_speed

Z95 = NormalDist().inv_cdf(0.975)
REPORT_FIELDS = ("distractors", "frames", "speed", "n", "accuracy", "ci95_halfwidth", "mean_crossings")


@dataclass(frozen=True)
class Evaluation:
    correct: int
    n: int
    accuracy: float
    ci_low: float
    ci_high: float

    @property
    def ci95_halfwidth(self):
        return (self.ci_high - self.ci_low) / 2


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("Wilson interval needs n > 0")
    p = successes / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def evaluate(predictions: Sequence, truths: Sequence) -> Evaluation:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} truths")
    if not truths:
        raise ValueError("cannot evaluate an empty prediction set")
    correct = sum(Label.parse(p) == Label.parse(t) for p, t in zip(predictions, truths))
    n = len(truths)
    lo, hi = wilson_interval(correct, n)
    return Evaluation(correct, n, correct / n, lo, hi)


# -- sweeps ---------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    distractor_levels: tuple = (1, 6, 15, 26)
    frame_levels: tuple = FRAME_LEVELS
    speed_levels: tuple = (1, 2, 4)
    samples_per_cell: int = 1000
    master_seed: int = 0
    layout: str = "mixed"

    def __post_init__(self):
        object.__setattr__(self, "distractor_levels", tuple(int(d) for d in self.distractor_levels))
        object.__setattr__(self, "frame_levels", tuple(int(f) for f in self.frame_levels))
        object.__setattr__(self, "speed_levels", tuple(parse_speed(s) for s in self.speed_levels))
        if any(d < 1 for d in self.distractor_levels):
            raise ConfigError("distractor levels must be >= 1")
        if any(f < 2 for f in self.frame_levels):
            raise ConfigError("frame levels must be >= 2")
        if self.samples_per_cell < 1:
            raise ConfigError("samples_per_cell must be >= 1")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}")

    def cells(self) -> list[tuple[int, int, int]]:
        """Valid ``(distractors, frames, speed)`` cells in sorted order."""
        return sorted(
            (d, f, s)
            for d in set(self.distractor_levels)
            for f in set(self.frame_levels)
            for s in set(self.speed_levels)
            if f * s <= MAX_PATH_FRAMES
        )


@dataclass(frozen=True)
class SweepRow:
    distractors: int
    frames: int
    speed: int
    n: int
    accuracy: float
    ci95_halfwidth: float
    mean_crossings: float

    @property
    def key(self):
        return (self.distractors, self.frames, self.speed)


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def row(self, distractors, frames, speed) -> SweepRow:
        for r in self.rows:
            if r.key == (distractors, frames, speed):
                return r
        raise KeyError((distractors, frames, speed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([r.distractors, r.frames, r.speed, r.n,
                        f"{r.accuracy:.6f}", f"{r.ci95_halfwidth:.6f}", f"{r.mean_crossings:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'distractors':>11} {'frames':>6} {'speed':>5} {'n':>6} {'accuracy':>8} {'ci95':>7} {'crossings':>9}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.distractors:>11} {r.frames:>6} {r.speed:>5} {r.n:>6} "
                         f"{r.accuracy:>8.4f} {r.ci95_halfwidth:>7.4f} {r.mean_crossings:>9.3f}")
        return "\n".join(lines)

    def as_dicts(self):
        return [asdict(r) for r in self.rows]


def run_cell(distractors, frames, speed, n, master_seed, layout="mixed") -> SweepRow:
    cfg = GenConfig(frames=frames, distractors=distractors, speed=speed, layout=layout, master_seed=master_seed)
    correct = 0
    crossings = 0
    done = 0
    for sample in generate_fold(cfg, "test", n):
        correct += classify_sample(sample) == sample.label
        crossings += crossing_stats(sample)
        done += 1
    ev_lo, ev_hi = wilson_interval(correct, done)
    return SweepRow(distractors, frames, speed, done, correct / done, (ev_hi - ev_lo) / 2, crossings / done)


def run_sweep(spec: SweepSpec, progress=None) -> SweepReport:
    """Every cell draws from the test fold with the same master seed, so cells share sample seeds."""
    report = SweepReport()
    for d, f, s in spec.cells():
        try:
            row = run_cell(d, f, s, spec.samples_per_cell, spec.master_seed, spec.layout)
        except PathtrackerError as exc:
            exc.args = (f"cell (distractors={d}, frames={f}, speed={s}): {exc}",)
            raise
        report.rows.append(row)
        if progress is not None:
            progress(row)
    return report


# -- external predictions --------------------------------------------------------

def read_predictions(path, count: int) -> list[Label]:
    """Parse a ``sample_index,label`` CSV covering indices ``0..count-1``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PredictionFileError(f"cannot read predictions file {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"sample_index", "label"} <= set(reader.fieldnames):
        raise PredictionFileError("predictions file needs a 'sample_index,label' header")
    preds: dict[int, Label] = {}
    for line, rec in enumerate(reader, start=2):
        try:
            idx = int(rec["sample_index"])
        except (TypeError, ValueError):
            raise PredictionFileError(f"line {line}: bad sample_index {rec['sample_index']!r}") from None
        if not 0 <= idx < count:
            raise PredictionFileError(f"line {line}: sample_index {idx} out of range [0, {count})")
        raw = (rec["label"] or "").strip().lower()
        if raw not in ("positive", "negative"):
            raise PredictionFileError(f"line {line}: unknown label {rec['label']!r}")
        if idx in preds:
            raise PredictionFileError(f"line {line}: duplicate sample_index {idx}")
        preds[idx] = Label.parse(raw)
    missing = [i for i in range(count) if i not in preds]
    if missing:
        shown = ", ".join(map(str, missing[:10])) + (" ..." if len(missing) > 10 else "")
        raise MissingIndexError(f"predictions missing {len(missing)} sample index(es): {shown}")
    return [preds[i] for i in range(count)]


def write_predictions(path, labels, finals=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if finals is None:
            w.writerow(["sample_index", "label"])
            for i, lab in enumerate(labels):
                w.writerow([i, str(Label.parse(lab))])
        else:
            w.writerow(["sample_index", "label", "final_x", "final_y"])
            for i, (lab, pos) in enumerate(zip(labels, finals)):
                w.writerow([i, str(Label.parse(lab)), f"{pos[0]:.4f}", f"{pos[1]:.4f}"])


def score_external(predictions_file, dataset_path) -> SweepRow:
    manifest, samples = read_dataset(dataset_path)
    truths = []
    crossings = 0
    for s in samples:
        truths.append(s.label)
        crossings += crossing_stats(s)
    preds = read_predictions(predictions_file, len(truths))
    ev = evaluate(preds, truths)
    cfg = manifest.config
    mean_x = crossings / len(truths) if truths else float("nan")
    return SweepRow(cfg.distractors, cfg.frames, cfg.speed, ev.n, ev.accuracy, ev.ci95_halfwidth, mean_x)


def dataset_stats(dataset_path) -> dict:
    """Validity and crossing summary for a stored dataset."""
    from .scene import check_sample

    manifest, samples = read_dataset(dataset_path)
    cfg = manifest.config
    n = pos = invalid = 0
    crossings = []
    problems = []
    for i, s in enumerate(samples):
        n += 1
        pos += s.label == Label.POSITIVE
        crossings.append(crossing_stats(s))
        issues = check_sample(s, cfg, FIXED_TOL)
        if issues:
            invalid += 1
            if len(problems) < 20:
                problems.extend(f"sample {i}: {p}" for p in issues)
    cr = np.asarray(crossings, dtype=float)
    return {
        "samples": n,
        "positives": int(pos),
        "negatives": int(n - pos),
        "invalid": invalid,
        "mean_crossings": float(cr.mean()) if n else 0.0,
        "samples_with_crossing": int(np.count_nonzero(cr)) if n else 0,
        "problems": problems,
        "layout": manifest.layout,
        "config": cfg.to_dict(),
    }
