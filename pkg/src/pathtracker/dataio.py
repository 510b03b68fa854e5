"""On-disk dataset format.

A dataset directory holds ``manifest.json`` plus binary shards
``shard_00000.bin``, ``shard_00001.bin``, ... Each shard is a plain
concatenation of records, all little-endian:

========  ======  =====================================================
offset    type    field
========  ======  =====================================================
0         4s      magic ``b"PTRK"``
4         u16     record format version
6         u16     T (frames)
8         u16     H
10        u16     W
12        u16     C
14        u8      label (1 positive, 0 negative)
15        u16     finisher index (0 = target)
17        u64     sample seed
25        u32     metadata block length in bytes
29        u8[]    frames, row-major ``T x H x W x C``
..        ..      metadata block (below)
========  ======  =====================================================

Metadata block: ``u16`` dot count, ``u8`` speed, ``u32`` resample count,
``4 x i16`` start-x, start-y, finish-x, finish-y marker centres, then per
dot (target first) ``u32`` base point count ``N``, ``N x 2 x i32``
base positions in fixed point (px * 256) and ``N - 1`` reflection flag
bytes.

The manifest records a 64-bit BLAKE2b digest per shard and over all shard
bytes in order.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import BadMagicError, ChecksumError, DataError, DimensionMismatchError, TruncatedShardError
from .scene import Label, Marker, MarkerKind, VideoSample
from .trajgen import PRNG_ID, GenConfig, Trajectory

MAGIC = b"PTRK"
RECORD_VERSION = 1
FORMAT_VERSION = 1
FIXED_SCALE = 256
# Geometric slack for re-validating trajectories decoded from fixed point.
FIXED_TOL = 0.01
HEADER = struct.Struct("<4sHHHHHBHQI")
META_HEAD = struct.Struct("<HBI4h")
MANIFEST_NAME = "manifest.json"
DEFAULT_SHARD_SIZE = 1000


def digest(data: bytes | memoryview) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass
class DatasetManifest:
    config: GenConfig
    fold: str = "train"
    layout: str | None = None
    prng_id: str = PRNG_ID
    format_version: int = FORMAT_VERSION
    sample_count: int | None = None
    checksum: str = ""
    shards: list = field(default_factory=list)
    flow_params: dict | None = None

    def __post_init__(self):
        if self.layout is None:
            self.layout = self.config.layout

    def to_dict(self):
        d = {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "prng_id": self.prng_id,
            "fold": self.fold,
            "layout": self.layout,
            "label_order": "alternating, even indices positive",
            "sample_count": self.sample_count,
            "checksum_algorithm": "blake2b-64",
            "checksum": self.checksum,
            "shards": self.shards,
        }
        if self.flow_params is not None:
            d["flow_params"] = self.flow_params
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                config=GenConfig.from_dict(d["config"]),
                fold=d["fold"],
                layout=d["layout"],
                prng_id=d["prng_id"],
                format_version=d["format_version"],
                sample_count=d["sample_count"],
                checksum=d["checksum"],
                shards=list(d["shards"]),
                flow_params=d.get("flow_params"),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc

    @property
    def frame_shape(self):
        return (self.config.frames, self.config.height, self.config.width, 3)


# -- records -------------------------------------------------------------------

def to_fixed(positions: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(positions, dtype=np.float64) * FIXED_SCALE).astype("<i4")


def from_fixed(fixed: np.ndarray) -> np.ndarray:
    return np.asarray(fixed, dtype=np.float64) / FIXED_SCALE


def encode_record(sample: VideoSample) -> bytes:
    frames = np.ascontiguousarray(sample.frames, dtype=np.uint8)
    if frames.ndim != 4:
        raise DimensionMismatchError(f"frames must be 4-D, got shape {frames.shape}")
    meta = [META_HEAD.pack(len(sample.dots), sample.speed, sample.resamples,
                           *sample.start.center, *sample.finish.center)]
    for t in sample.dots:
        meta.append(struct.pack("<I", len(t.base_positions)))
        meta.append(to_fixed(t.base_positions).tobytes())
        meta.append(t.reflected.astype(np.uint8).tobytes())
    meta_bytes = b"".join(meta)
    t_, h, w, c = frames.shape
    head = HEADER.pack(MAGIC, RECORD_VERSION, t_, h, w, c, int(sample.label), sample.finisher_index,
                       sample.sample_seed, len(meta_bytes))
    return head + frames.tobytes() + meta_bytes


def _decode_meta(buf: memoryview):
    n_dots, speed, resamples, sx, sy, fx, fy = META_HEAD.unpack_from(buf, 0)
    off = META_HEAD.size
    dots = []
    for _ in range(n_dots):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        fixed = np.frombuffer(buf, dtype="<i4", count=2 * n, offset=off).reshape(n, 2)
        off += 8 * n
        refl = np.frombuffer(buf, dtype=np.uint8, count=max(n - 1, 0), offset=off).astype(bool)
        off += max(n - 1, 0)
        dots.append(Trajectory(from_fixed(fixed), refl, speed=speed))
    if off != len(buf):
        raise DataError("metadata block length disagrees with its contents")
    return dots, speed, resamples, Marker((sx, sy), MarkerKind.START), Marker((fx, fy), MarkerKind.FINISH)


def _parse_shard(data: bytes, name: str, manifest: DatasetManifest, decode: bool):
    """Walk the records of one shard; yields ``(header_fields, frame_slice, meta_slice)``."""
    view = memoryview(data)
    off = 0
    expect = manifest.frame_shape
    out = []
    while off < len(view):
        if len(view) - off < HEADER.size:
            raise TruncatedShardError(f"{name}: truncated record header at byte {off}")
        magic, ver, t_, h, w, c, label, finisher, seed, meta_len = HEADER.unpack_from(view, off)
        if magic != MAGIC:
            raise BadMagicError(f"{name}: bad magic {magic!r} at byte {off}")
        if ver != RECORD_VERSION:
            raise DataError(f"{name}: unsupported record version {ver}")
        if (t_, h, w, c) != expect:
            raise DimensionMismatchError(f"{name}: record dims {(t_, h, w, c)} != manifest {expect}")
        body = t_ * h * w * c
        end = off + HEADER.size + body + meta_len
        if end > len(view):
            raise TruncatedShardError(f"{name}: record at byte {off} runs past end of shard")
        if decode:
            fstart = off + HEADER.size
            out.append(((label, finisher, seed), view[fstart:fstart + body], view[fstart + body:end]))
        else:
            out.append(((label, finisher, seed), None, None))
        off = end
    return out


# -- writing -------------------------------------------------------------------

def write_dataset(samples: Iterable[VideoSample], manifest: DatasetManifest, path,
                  shard_size: int = DEFAULT_SHARD_SIZE) -> DatasetManifest:
    """Write ``samples`` under ``path`` and return the completed manifest.

    If ``manifest.sample_count`` is preset, the number of samples written
    must match it.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob("shard_*.bin"):
        old.unlink()
    expect = manifest.frame_shape
    shards = []
    total = hashlib.blake2b(digest_size=8)
    count = 0
    buf = []

    def flush():
        name = f"shard_{len(shards):05d}.bin"
        data = b"".join(buf)
        with open(path / name, "wb") as fh:
            fh.write(data)
        total.update(data)
        shards.append({"file": name, "records": len(buf), "bytes": len(data), "checksum": digest(data)})
        buf.clear()

    for s in samples:
        if s.frames.shape != expect:
            raise DimensionMismatchError(f"sample {count} has frames {s.frames.shape}, manifest expects {expect}")
        buf.append(encode_record(s))
        count += 1
        if len(buf) >= shard_size:
            flush()
    if buf:
        flush()
    if manifest.sample_count is not None and manifest.sample_count != count:
        raise DataError(f"manifest declares {manifest.sample_count} samples but {count} were written")
    manifest.sample_count = count
    manifest.shards = shards
    manifest.checksum = total.hexdigest()
    tmp = path / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path / MANIFEST_NAME)
    return manifest


# -- reading -------------------------------------------------------------------

def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = (path / MANIFEST_NAME).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest in {path}: {exc}") from exc
    try:
        return DatasetManifest.from_dict(json.loads(raw))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc


def _load_shard(path: Path, entry: dict, manifest: DatasetManifest, decode: bool):
    name = entry["file"]
    try:
        data = (path / name).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read shard {name}: {exc}") from exc
    if len(data) < entry["bytes"]:
        raise TruncatedShardError(f"{name}: {len(data)} bytes on disk, manifest says {entry['bytes']}")
    if len(data) > entry["bytes"]:
        raise DataError(f"{name}: {len(data) - entry['bytes']} unexpected trailing bytes")
    records = _parse_shard(data, name, manifest, decode)
    if len(records) != entry["records"]:
        raise DataError(f"{name}: {len(records)} records, manifest says {entry['records']}")
    if digest(data) != entry["checksum"]:
        raise ChecksumError(f"{name}: checksum mismatch")
    return data, records


def _check_total(manifest, hasher, count):
    if count != manifest.sample_count:
        raise DataError(f"shards hold {count} records, manifest says {manifest.sample_count}")
    if hasher.hexdigest() != manifest.checksum:
        raise ChecksumError("dataset checksum mismatch")


def read_dataset(path) -> tuple[DatasetManifest, Iterator[VideoSample]]:
    """Open a dataset; samples are yielded in written order, each shard verified before use."""
    path = Path(path)
    manifest = read_manifest(path)

    def gen():
        hasher = hashlib.blake2b(digest_size=8)
        count = 0
        for entry in manifest.shards:
            data, records = _load_shard(path, entry, manifest, decode=True)
            hasher.update(data)
            for (label, finisher, seed), fr, meta in records:
                frames = np.frombuffer(fr, dtype=np.uint8).reshape(manifest.frame_shape).copy()
                dots, speed, resamples, start, finish = _decode_meta(meta)
                yield VideoSample(frames, Label(label), dots[0], dots[1:], start, finish, finisher,
                                  seed, manifest.layout, speed, resamples)
                count += 1
        _check_total(manifest, hasher, count)

    return manifest, gen()


def read_labels(path) -> tuple[DatasetManifest, list[Label]]:
    """Ground-truth labels of every record, with full checksum verification."""
    path = Path(path)
    manifest = read_manifest(path)
    hasher = hashlib.blake2b(digest_size=8)
    labels = []
    for entry in manifest.shards:
        data, records = _load_shard(path, entry, manifest, decode=False)
        hasher.update(data)
        labels.extend(Label(h[0]) for h, _, _ in records)
    _check_total(manifest, hasher, len(labels))
    return manifest, labels


def export_png(sample: VideoSample, path) -> list[Path]:
    """Write ``frame_000.png``, ``frame_001.png``, ... with channels 0/1/2 as R/G/B."""
    from PIL import Image

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    out = []
    for t, frame in enumerate(sample.frames):
        f = path / f"frame_{t:03d}.png"
        Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8), mode="RGB").save(f)
        out.append(f)
    return out
