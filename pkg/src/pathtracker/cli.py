"""Command-line entry point: ``pathtracker <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 generation or
tracking failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import dataio, flow, harness, scene, tracker
from .errors import DataError, GenerationError, PathtrackerError, TrackingError
from .trajgen import LAYOUTS, GenConfig, parse_speed

log = logging.getLogger("pathtracker")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILURE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _speed(text):
    try:
        return parse_speed(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _nonneg(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _add_gen_flags(p):
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--distractors", type=int, default=1)
    p.add_argument("--speed", type=_speed, default=1, help="1|2|4 or normal|fast|very_fast")
    p.add_argument("--layout", choices=LAYOUTS, default="mixed")
    p.add_argument("--seed", type=_seed, default=0, help="64-bit master seed")
    p.add_argument("--train-count", type=_nonneg, default=20000)
    p.add_argument("--test-count", type=_nonneg, default=20000)
    p.add_argument("--max-resample-attempts", type=int, default=1000)


def _tvl1_flags(p):
    d = flow.TvL1Params()
    p.add_argument("--lam", type=float, default=d.lam)
    p.add_argument("--theta", type=float, default=d.theta)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--warps", type=int, default=d.warps)
    p.add_argument("--inner-iters", type=int, default=d.inner_iters)
    p.add_argument("--pyramid-levels", type=int, default=d.pyramid_levels)
    p.add_argument("--stop-epsilon", type=float, default=d.stop_epsilon)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pathtracker", description="Pathtracker dataset toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="generate one fold into a dataset directory")
    _add_gen_flags(p)
    p.add_argument("--fold", choices=sorted(scene.FOLDS), default="train")
    p.add_argument("--count", type=_nonneg, help="samples to write (default: the fold's count)")
    p.add_argument("--shard-size", type=int, default=dataio.DEFAULT_SHARD_SIZE)
    p.add_argument("out", type=Path)

    p = sub.add_parser("encode-flow", help="re-encode a dataset with TV-L1 flow channels")
    _tvl1_flags(p)
    p.add_argument("--shard-size", type=int, default=dataio.DEFAULT_SHARD_SIZE)
    p.add_argument("src", type=Path)
    p.add_argument("dst", type=Path)

    p = sub.add_parser("track", help="run the oracle tracker and write predictions CSV")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="score a predictions CSV against a dataset")
    p.add_argument("predictions", type=Path)
    p.add_argument("dataset", type=Path)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("sweep", help="oracle accuracy over a difficulty grid")
    p.add_argument("--distractors", type=int, nargs="+", default=[1, 6, 15, 26])
    p.add_argument("--frames", type=int, nargs="+", default=[32, 64, 128])
    p.add_argument("--speeds", type=_speed, nargs="+", default=[1, 2, 4])
    p.add_argument("--samples-per-cell", type=int, default=1000)
    p.add_argument("--layout", choices=LAYOUTS, default="mixed")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("-o", "--out", type=Path, help="report CSV (default: stdout)")
    p.add_argument("--table", action="store_true", help="also print a table to stderr")

    p = sub.add_parser("export-png", help="write one sample's frames as PNG files")
    p.add_argument("dataset", type=Path)
    p.add_argument("--index", type=_nonneg, default=0)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = sub.add_parser("stats", help="validity and crossing report for a dataset")
    p.add_argument("dataset", type=Path)
    return ap


# -- commands -----------------------------------------------------------------------

def cmd_generate(a):
    cfg = GenConfig(frames=a.frames, distractors=a.distractors, speed=a.speed, layout=a.layout,
                    train_count=a.train_count, test_count=a.test_count, master_seed=a.seed,
                    max_resample_attempts=a.max_resample_attempts)
    count = a.count if a.count is not None else (cfg.train_count if a.fold == "train" else cfg.test_count)
    man = dataio.DatasetManifest(cfg, a.fold, sample_count=count)
    man = dataio.write_dataset(scene.generate_fold(cfg, a.fold, count), man, a.out, a.shard_size)
    print(f"wrote {man.sample_count} samples in {len(man.shards)} shard(s) to {a.out} (checksum {man.checksum})")


def cmd_encode_flow(a):
    params = flow.TvL1Params(lam=a.lam, theta=a.theta, tau=a.tau, warps=a.warps, inner_iters=a.inner_iters,
                             pyramid_levels=a.pyramid_levels, stop_epsilon=a.stop_epsilon)
    src_man, samples = dataio.read_dataset(a.src)
    if src_man.layout == "flow":
        raise DataError(f"{a.src} is already flow-encoded")
    man = dataio.DatasetManifest(src_man.config, src_man.fold, layout="flow",
                                 sample_count=src_man.sample_count, flow_params=params.to_dict())
    encoded = (flow.encode_flow_video(s, params) for s in samples)
    man = dataio.write_dataset(encoded, man, a.dst, a.shard_size)
    print(f"encoded {man.sample_count} samples to {a.dst}")


def cmd_track(a):
    _, samples = dataio.read_dataset(a.dataset)
    labels, finals = [], []
    for i, s in enumerate(samples):
        try:
            lab, pos = tracker.classify_frames(s.frames, s.start.center, s.finish.center, s.layout, s.speed)
        except TrackingError as exc:
            exc.args = (f"sample {i}: {exc}",)
            raise
        labels.append(lab)
        finals.append(pos)
    harness.write_predictions(a.out, labels, finals)
    print(f"wrote {len(labels)} predictions to {a.out}")


def cmd_evaluate(a):
    row = harness.score_external(a.predictions, a.dataset)
    if a.json:
        print(json.dumps(asdict(row), sort_keys=True))
    else:
        print(harness.SweepReport([row]).to_csv(), end="")


def cmd_sweep(a):
    spec = harness.SweepSpec(a.distractors, a.frames, a.speeds, a.samples_per_cell, a.seed, a.layout)

    def progress(row):
        log.info("cell d=%d f=%d s=%d accuracy=%.4f", row.distractors, row.frames, row.speed, row.accuracy)

    report = harness.run_sweep(spec, progress)
    text = report.to_csv()
    if a.out is None:
        print(text, end="")
    else:
        a.out.write_text(text, encoding="utf-8")
    if a.table:
        print(report.to_table(), file=sys.stderr)


def cmd_export_png(a):
    man, samples = dataio.read_dataset(a.dataset)
    if a.index >= man.sample_count:
        raise DataError(f"sample index {a.index} out of range [0, {man.sample_count})")
    for i, s in enumerate(samples):
        if i == a.index:
            files = dataio.export_png(s, a.out)
            print(f"wrote {len(files)} PNG files to {a.out}")
            return


def cmd_stats(a):
    st = harness.dataset_stats(a.dataset)
    print(json.dumps(st, indent=2, sort_keys=True))
    if st["invalid"]:
        raise GenerationError(f"{st['invalid']} sample(s) fail the invariant recheck")


COMMANDS = {
    "generate": cmd_generate,
    "encode-flow": cmd_encode_flow,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "export-png": cmd_export_png,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except PathtrackerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
