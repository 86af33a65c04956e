"""Datasets: synthetic grasp-and-drop sequences, file ingestion and LOOCV folds.

Layout mirrors the capture protocol the pipeline was designed around: five
shape categories, four garment instances per category, ten videos per
garment, sixty frames per video at 10 Hz. Instance group ``k`` holds the
``k``-th garment of every category, so leaving one group out tests on unseen
garments of every shape.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError

SHAPES = ("pants", "shirts", "sweaters", "towels", "t-shirts")
WEIGHTS = ("light", "medium", "heavy")
CHANNELS = ("depth", "rgb")
TASKS = ("shape", "weight")
N_GROUPS = 4

RECORD_MAGIC = b"GFRM"
RECORD_HEADER = struct.Struct("<4sII")  # magic, dimension, frame count


@dataclass(frozen=True, eq=False)
class VideoSequence:
    garment_id: str
    shape: str
    weight: str
    group: int
    frames: np.ndarray  # (n_frames, D) float32 in [0, 1]
    video: int = 0

    @property
    def sequence_id(self):
        return f"{self.garment_id}-v{self.video:02d}"

    def label(self, task):
        if task == "shape":
            return self.shape
        if task == "weight":
            return self.weight
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


@dataclass(frozen=True, eq=False)
class Dataset:
    sequences: tuple
    shapes: tuple = SHAPES
    weights: tuple = WEIGHTS
    channel: str = "depth"
    rate_hz: float = 10.0

    def __post_init__(self):
        if not self.sequences:
            raise ConfigError("dataset has no sequences")
        dims = {s.frames.shape[1] for s in self.sequences}
        if len(dims) != 1:
            bad = next(s for s in self.sequences if s.frames.shape[1] != self.sequences[0].frames.shape[1])
            raise InputError(f"sequence {bad.sequence_id} has dimension {bad.frames.shape[1]}, "
                             f"expected {self.sequences[0].frames.shape[1]}")
        lengths = {len(s.frames) for s in self.sequences}
        if len(lengths) != 1:
            bad = next(s for s in self.sequences if len(s.frames) != len(self.sequences[0].frames))
            raise InputError(f"sequence {bad.sequence_id} has {len(bad.frames)} frames, "
                             f"expected {len(self.sequences[0].frames)}")
        for s in self.sequences:
            if s.shape not in self.shapes or s.weight not in self.weights:
                raise InputError(f"sequence {s.sequence_id} has undeclared labels ({s.shape}, {s.weight})")

    def __len__(self):
        return len(self.sequences)

    @property
    def dim(self):
        return self.sequences[0].frames.shape[1]

    @property
    def n_frames(self):
        return len(self.sequences[0].frames)

    def categories(self, task):
        return self.shapes if task == "shape" else self.weights

    def subset(self, sequences):
        return replace(self, sequences=tuple(sequences))

    def frame_table(self, task):
        """All frames stacked ``(N, D)`` with their per-frame labels for ``task``."""
        X = np.concatenate([s.frames for s in self.sequences]).astype(np.float64)
        y = np.repeat([s.label(task) for s in self.sequences], self.n_frames)
        return X, y


# ----------------------------------------------------------------------------
# synthetic generator


def _one_hot_drifts(labels, offset, latent_dim, gap):
    out = {}
    for i, label in enumerate(labels):
        v = np.zeros(latent_dim)
        v[offset + i] = gap
        out[label] = tuple(v)
    return out


@dataclass
class SynthSpec:
    """Latent-trajectory description of a synthetic dataset.

    Each frame is a latent vector pushed through a fixed random mixing matrix
    and a logistic squash into ``[0, 1]^dim``. The latent path of one video
    moves from a shared crumpled state towards ``shape_drift + weight_drift``
    as the garment is lifted; instance offsets model garment-to-garment
    variation and ``noise`` scales all per-video and per-frame randomness.
    Empty drift tables are filled with scaled one-hot vectors.
    """

    shapes: tuple = SHAPES
    weights: tuple = WEIGHTS
    instances: int = 4
    videos: int = 10
    frames: int = 60
    dim: int = 64
    latent_dim: int = 10
    shape_gap: float = 1.5
    weight_gap: float = 1.5
    instance_spread: float = 0.05
    noise: float = 0.15
    video_spread: float = 1.0
    start_level: float = 0.8
    mix_scale: float = 0.3
    channel: str = "depth"
    shape_drifts: dict = field(default_factory=dict)
    weight_drifts: dict = field(default_factory=dict)
    instance_weights: dict = field(default_factory=dict)

    def validate(self):
        if len(self.shapes) < 2 or len(set(self.shapes)) != len(self.shapes):
            raise ConfigError("need at least two distinct shape categories")
        if len(set(self.weights)) != len(self.weights) or not self.weights:
            raise ConfigError("weight tiers must be distinct and non-empty")
        for name in ("instances", "videos", "frames", "dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("shape_gap", "weight_gap", "instance_spread", "noise", "video_spread", "mix_scale"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.start_level <= 1.0:
            raise ConfigError("start_level must lie in [0, 1]")
        if self.channel not in CHANNELS:
            raise ConfigError(f"channel must be one of {CHANNELS}")
        if not self.shape_drifts and len(self.shapes) + 1 > self.latent_dim:
            raise ConfigError("latent_dim too small for one-hot default drifts")
        for table in (self.resolved_shape_drifts(), self.resolved_weight_drifts()):
            for label, vec in table.items():
                if len(vec) != self.latent_dim:
                    raise ConfigError(f"drift for {label!r} has length {len(vec)}, expected {self.latent_dim}")
        if set(self.resolved_shape_drifts()) != set(self.shapes):
            raise ConfigError("shape_drifts must cover exactly the declared shapes")
        if set(self.resolved_weight_drifts()) != set(self.weights):
            raise ConfigError("weight_drifts must cover exactly the declared weight tiers")
        for tier in self.instance_weights.values():
            if tier not in self.weights:
                raise ConfigError(f"instance weight {tier!r} is not a declared tier")

    def resolved_shape_drifts(self):
        return self.shape_drifts or _one_hot_drifts(self.shapes, 0, self.latent_dim, self.shape_gap)

    def resolved_weight_drifts(self):
        if self.weight_drifts:
            return self.weight_drifts
        # tiers are ordered: one shared latent axis, evenly spaced levels
        out = {}
        for i, label in enumerate(self.weights):
            v = np.zeros(self.latent_dim)
            v[len(self.shapes)] = self.weight_gap * (i - (len(self.weights) - 1) / 2)
            out[label] = tuple(v)
        return out

    def weight_of(self, shape_index, instance):
        """Declared tier of a garment; defaults to a rotation that spreads tiers over groups."""
        key = f"{self.shapes[shape_index]}-{instance + 1}"
        if key in self.instance_weights:
            return self.instance_weights[key]
        return self.weights[(shape_index + instance) % len(self.weights)]


def _progress(n_frames, onset, speed):
    # lift profile: 0 while crumpled on the table, smooth rise to 1 when hanging
    t = np.linspace(0.0, 1.0, n_frames)
    return 1.0 / (1.0 + np.exp(-(t - onset) * speed))


def synth_generate(spec=None, seed=0):
    """Deterministic synthetic dataset for ``spec`` (defaults mirror 5x4x10x60)."""
    spec = spec or SynthSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    mix = rng.normal(0.0, spec.mix_scale / np.sqrt(spec.latent_dim), size=(spec.latent_dim, spec.dim))
    bias = rng.normal(0.0, 0.1, size=spec.dim)
    shape_drifts = {k: np.asarray(v, dtype=np.float64) for k, v in spec.resolved_shape_drifts().items()}
    weight_drifts = {k: np.asarray(v, dtype=np.float64) for k, v in spec.resolved_weight_drifts().items()}
    sequences = []
    for si, shape in enumerate(spec.shapes):
        for inst in range(spec.instances):
            weight = spec.weight_of(si, inst)
            garment_id = f"{shape}-{inst + 1}"
            target = shape_drifts[shape] + weight_drifts[weight]
            offset = rng.normal(0.0, spec.instance_spread, size=spec.latent_dim)
            start = spec.start_level * target + offset
            end = target + offset
            for video in range(spec.videos):
                onset = 0.35 + spec.noise * rng.uniform(-0.2, 0.2)
                jitter = spec.noise * rng.normal(0.0, spec.video_spread, size=spec.latent_dim)
                prog = _progress(spec.frames, onset, 10.0)[:, None]
                latent = start + prog * (end - start) + jitter
                latent = latent + spec.noise * rng.normal(0.0, 1.0, size=(spec.frames, spec.latent_dim))
                frames = 1.0 / (1.0 + np.exp(-(latent @ mix + bias)))
                sequences.append(VideoSequence(garment_id, shape, weight, (inst % N_GROUPS) + 1,
                                               frames.astype(np.float32), video))
    return Dataset(tuple(sequences), tuple(spec.shapes), tuple(spec.weights), spec.channel)


# ----------------------------------------------------------------------------
# leave-one-group-out folds


@dataclass(frozen=True)
class Fold:
    index: int  # the held-out instance group, 1-based
    train: Dataset
    test: Dataset


def loocv_splits(dataset):
    """Four folds; fold ``k`` tests instance group ``k`` and trains on the rest."""
    ordered = sorted(dataset.sequences, key=lambda s: (s.garment_id, s.video))
    for shape in dataset.shapes:
        groups = {s.group for s in ordered if s.shape == shape}
        missing = set(range(1, N_GROUPS + 1)) - groups
        if missing:
            raise ConfigError(f"category {shape!r} lacks instance group(s) {sorted(missing)}")
    folds = []
    for k in range(1, N_GROUPS + 1):
        test = [s for s in ordered if s.group == k]
        train = [s for s in ordered if s.group != k]
        folds.append(Fold(k, dataset.subset(train), dataset.subset(test)))
    return folds


# ----------------------------------------------------------------------------
# file formats


def write_record(path, frames):
    """Feature record: ``GFRM`` magic, dimension, frame count, then LE float32 rows."""
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise InputError("feature records hold a 2-D frame array")
    with open(path, "wb") as fh:
        fh.write(RECORD_HEADER.pack(RECORD_MAGIC, frames.shape[1], frames.shape[0]))
        fh.write(frames.tobytes(order="C"))


def read_record(path):
    data = Path(path).read_bytes()
    if len(data) < RECORD_HEADER.size:
        raise ParseError(path, len(data), "truncated header")
    magic, dim, count = RECORD_HEADER.unpack_from(data, 0)
    if magic != RECORD_MAGIC:
        raise ParseError(path, 0, f"bad magic {magic!r}")
    expected = RECORD_HEADER.size + 4 * dim * count
    if len(data) != expected:
        raise ParseError(path, min(len(data), expected), f"expected {expected} bytes, found {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", offset=RECORD_HEADER.size).reshape(count, dim)
    if not np.all(np.isfinite(frames)):
        bad = int(np.flatnonzero(~np.isfinite(frames.ravel()))[0])
        raise ParseError(path, RECORD_HEADER.size + 4 * bad, "non-finite feature value")
    return frames.astype(np.float32)


def _pgm_tokens(data, path, start, count):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end
            pos += 1
        tok_start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if tok_start == pos:
            raise ParseError(path, tok_start, "unexpected end of header")
        tok = data[tok_start:pos]
        if not tok.isdigit():
            raise ParseError(path, tok_start, f"expected an integer, found {tok[:16]!r}")
        tokens.append(int(tok))
    return tokens, pos


def read_pgm(path):
    """8-bit portable graymap (binary P5 or ASCII P2) as a ``uint8`` array."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ParseError(path, 0, f"not a graymap (magic {magic!r})")
    (width, height, maxval), pos = _pgm_tokens(data, path, 2, 3)
    if not 0 < maxval < 256:
        raise ParseError(path, pos, f"only 8-bit graymaps are supported (maxval {maxval})")
    if width < 1 or height < 1:
        raise ParseError(path, pos, "empty image")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        if len(data) - pos < n:
            raise ParseError(path, len(data), f"expected {n} pixel bytes, found {len(data) - pos}")
        pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).astype(np.float64)
    else:
        pixels, pos = _pgm_tokens(data, path, pos, n)
        pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.max() > maxval:
        raise ParseError(path, pos, f"pixel value above maxval {maxval}")
    return (pixels.reshape(height, width) * (255.0 / maxval)).astype(np.uint8)


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(image.tobytes())


def downsample(image, dim):
    """Block-average an image onto a ``sqrt(dim) x sqrt(dim)`` grid, scaled to [0, 1]."""
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise ConfigError(f"graymap ingestion needs a square feature dimension, got {dim}")
    img = np.asarray(image, dtype=np.float64) / 255.0
    if img.shape[0] < side or img.shape[1] < side:
        raise InputError(f"image {img.shape} smaller than the {side}x{side} feature grid")
    rows = np.array_split(np.arange(img.shape[0]), side)
    cols = np.array_split(np.arange(img.shape[1]), side)
    out = np.empty((side, side))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = img[r[0]:r[-1] + 1, c[0]:c[-1] + 1].mean()
    return out.ravel()


def load_frames(path, dim):
    """Frames of one sequence: a feature record, one graymap or a directory of graymaps."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing sequence file: {path}")
    if path.is_dir():
        images = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not images:
            raise InputError(f"no .pgm frames in {path}")
        return np.stack([downsample(read_pgm(p), dim) for p in images]).astype(np.float32)
    if path.suffix.lower() == ".pgm":
        return downsample(read_pgm(path), dim)[None, :].astype(np.float32)
    return read_record(path)


# ----------------------------------------------------------------------------
# manifest


MANIFEST_COLUMNS = ("garment_id", "video", "shape", "weight", "group", "path")


def _split_list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


def read_manifest(path):
    """Parse a manifest into ``(header dict, rows)``.

    Format: ``key: value`` lines, then a ``[sequences]`` line followed by a
    comma-separated table with a header row. ``#`` starts a comment line.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing manifest: {path}")
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    header = {}
    table_lines = None
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        here = offset
        offset += len(line.encode("utf-8"))
        if table_lines is not None:
            if stripped and not stripped.startswith("#"):
                table_lines.append((here, stripped))
            continue
        if not stripped or stripped.startswith("#"):
            continue
        if stripped == "[sequences]":
            table_lines = []
            continue
        if ":" not in stripped:
            raise ParseError(path, here, f"expected 'key: value', found {stripped[:40]!r}")
        key, value = stripped.split(":", 1)
        header[key.strip()] = value.strip()
    if table_lines is None:
        raise ParseError(path, len(raw), "missing [sequences] section")
    if not table_lines:
        raise ParseError(path, len(raw), "empty sequence table")
    columns = next(csv.reader([table_lines[0][1]]))
    if tuple(c.strip() for c in columns) != MANIFEST_COLUMNS:
        raise ParseError(path, table_lines[0][0], f"table header must be {','.join(MANIFEST_COLUMNS)}")
    rows = []
    for off, line in table_lines[1:]:
        cells = [c.strip() for c in next(csv.reader([line]))]
        if len(cells) != len(MANIFEST_COLUMNS):
            raise ParseError(path, off, f"expected {len(MANIFEST_COLUMNS)} columns, found {len(cells)}")
        row = dict(zip(MANIFEST_COLUMNS, cells))
        try:
            row["video"] = int(row["video"])
            row["group"] = int(row["group"])
        except ValueError:
            raise ParseError(path, off, "video and group must be integers") from None
        rows.append(row)
    return header, rows


def ingest(manifest_path):
    """Load the dataset a manifest describes; sequence paths are manifest-relative."""
    manifest_path = Path(manifest_path)
    header, rows = read_manifest(manifest_path)
    try:
        dim = int(header.get("dimension", "64"))
        rate = float(header.get("rate_hz", "10"))
    except ValueError as exc:
        raise ConfigError(f"{manifest_path}: bad numeric header value ({exc})") from None
    shapes = _split_list(header.get("shapes", ",".join(SHAPES)))
    weights = _split_list(header.get("weights", ",".join(WEIGHTS)))
    channel = header.get("channel", "depth")
    if channel not in CHANNELS:
        raise ConfigError(f"{manifest_path}: channel must be one of {CHANNELS}")
    base = manifest_path.parent
    sequences = []
    for row in rows:
        frames = load_frames(base / row["path"], dim)
        if frames.shape[1] != dim:
            raise InputError(f"sequence {row['garment_id']}-v{row['video']:02d} has dimension "
                             f"{frames.shape[1]}, manifest declares {dim}")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise InputError(f"sequence {row['garment_id']}-v{row['video']:02d} has values outside [0, 1]")
        if not 1 <= row["group"] <= N_GROUPS:
            raise InputError(f"sequence {row['garment_id']} has group {row['group']}, expected 1-{N_GROUPS}")
        sequences.append(VideoSequence(row["garment_id"], row["shape"], row["weight"], row["group"],
                                       frames, row["video"]))
    return Dataset(tuple(sequences), shapes, weights, channel, rate)


def export_dataset(dataset, directory):
    """Write feature records plus a manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "sequences").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# garnet dataset manifest\n")
    buf.write("version: 1\n")
    buf.write(f"dimension: {dataset.dim}\n")
    buf.write(f"frames: {dataset.n_frames}\n")
    buf.write(f"rate_hz: {dataset.rate_hz:g}\n")
    buf.write(f"channel: {dataset.channel}\n")
    buf.write(f"shapes: {', '.join(dataset.shapes)}\n")
    buf.write(f"weights: {', '.join(dataset.weights)}\n")
    buf.write("\n[sequences]\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for s in dataset.sequences:
        rel = os.path.join("sequences", f"{s.sequence_id}.gfr")
        write_record(directory / rel, s.frames)
        writer.writerow([s.garment_id, s.video, s.shape, s.weight, s.group, rel])
    manifest = directory / "manifest.txt"
    manifest.write_text(buf.getvalue())
    return manifest
