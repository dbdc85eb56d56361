"""Skeleton sequences: JSON-lines storage, windowing, resampling, sampling.

Native file format, one JSON object per line::

    {"format_version": 1,
     "meta": {"subject": "s1", "view": "front", "dataset": "tcg"},
     "label": 2,                       # sequence-level, or
     "labels": [0, 0, 1, ...],         # one class per frame
     "frames": [[[x, y, z], ...K joints], ...n frames]}

Exactly one of ``label`` / ``labels`` is present. Blank lines are ignored.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class DataError(Exception):
    pass


@dataclass
class SkeletonSequence:
    frames: np.ndarray  # (n_frames, K, 3)
    label: int | None = None
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise DataError(f"frames must be shaped (n, K, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("non-finite coordinate in frames")
        if (self.label is None) == (self.labels is None):
            raise DataError("exactly one of label / labels must be given")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.frames),):
                raise DataError(f"{len(self.labels)} frame labels for {len(self.frames)} frames")
        else:
            self.label = int(self.label)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_level(self) -> bool:
        return self.labels is not None

    def classes(self) -> np.ndarray:
        return self.labels if self.frame_level else np.array([self.label])

    def equals(self, other: "SkeletonSequence") -> bool:
        if self.frame_level != other.frame_level or self.meta != other.meta:
            return False
        if self.frame_level:
            same_labels = np.array_equal(self.labels, other.labels)
        else:
            same_labels = self.label == other.label
        return same_labels and np.array_equal(self.frames, other.frames)


# -- file format ----------------------------------------------------------

def record_to_json(seq: SkeletonSequence) -> str:
    rec = {"format_version": FORMAT_VERSION, "meta": seq.meta}
    if seq.frame_level:
        rec["labels"] = seq.labels.tolist()
    else:
        rec["label"] = seq.label
    rec["frames"] = seq.frames.tolist()
    return json.dumps(rec)


def parse_record(rec, n_joints=None, n_classes=None, where="record") -> SkeletonSequence:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected a JSON object")
    version = rec.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise DataError(f"{where}: unsupported format_version {version!r}")
    if "frames" not in rec:
        raise DataError(f"{where}: missing 'frames'")
    try:
        frames = np.asarray(rec["frames"], dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"{where}: frames are not a rectangular numeric array") from None
    if frames.ndim != 3 or frames.shape[2] != 3 or frames.shape[0] < 1:
        raise DataError(f"{where}: frames must be a non-empty n x K x 3 array, got shape {frames.shape}")
    if n_joints is not None and frames.shape[1] != n_joints:
        raise DataError(f"{where}: {frames.shape[1]} joints, expected {n_joints}")
    bad = np.argwhere(~np.isfinite(frames))
    if len(bad):
        f, j, c = bad[0]
        raise DataError(f"{where}: non-finite coordinate at frame {f}, joint {j}, axis {c}")
    has_label, has_labels = "label" in rec, "labels" in rec
    if has_label == has_labels:
        raise DataError(f"{where}: exactly one of 'label' / 'labels' is required")
    raw = [rec["label"]] if has_label else rec["labels"]
    if not isinstance(raw, list):
        raise DataError(f"{where}: 'labels' must be a list")
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, int) or v < 0 or (n_classes is not None and v >= n_classes):
            raise DataError(f"{where}: unknown label {v!r}")
    meta = rec.get("meta", {})
    if not isinstance(meta, dict):
        raise DataError(f"{where}: 'meta' must be an object")
    try:
        if has_label:
            return SkeletonSequence(frames, label=raw[0], meta=meta)
        return SkeletonSequence(frames, labels=np.array(raw, dtype=np.int64), meta=meta)
    except DataError as e:
        raise DataError(f"{where}: {e}") from None


def load_dataset(path, n_joints: int | None = None, n_classes: int | None = None) -> list:
    """Read a JSON-lines dataset, validating every record."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno} (record {len(out)})"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: parse error: {e.msg} at column {e.colno}") from None
            out.append(parse_record(rec, n_joints, n_classes, where))
    return out


def save_dataset(path, sequences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(record_to_json(seq))
            fh.write("\n")


# -- preprocessing ----------------------------------------------------------

def root_normalize(seq: SkeletonSequence, root_joint: int) -> SkeletonSequence:
    """Subtract the root joint's position from every joint, per frame."""
    frames = seq.frames - seq.frames[:, root_joint : root_joint + 1, :]
    return SkeletonSequence(frames, seq.label, seq.labels, dict(seq.meta))


def affine_transform(seq: SkeletonSequence, matrix) -> SkeletonSequence:
    """Apply ``p -> R p + t`` given a 3x4 matrix ``[R | t]`` (e.g. world to camera)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 4):
        raise DataError(f"affine transform must be 3x4, got {m.shape}")
    frames = seq.frames @ m[:, :3].T + m[:, 3]
    return SkeletonSequence(frames, seq.label, seq.labels, dict(seq.meta))


def window_indices(n_frames: int, seq_len: int) -> np.ndarray:
    """Row ``t`` holds the frame indices of the causal window ending at ``t``."""
    if n_frames < 1:
        raise DataError("cannot window an empty sequence")
    if seq_len < 1:
        raise ValueError("window length must be >= 1")
    idx = np.arange(n_frames)[:, None] + np.arange(-seq_len + 1, 1)[None, :]
    return np.maximum(idx, 0)


def window_frames(seq: SkeletonSequence, seq_len: int) -> list:
    """One ``(window, label)`` per frame; early windows repeat the first frame."""
    if not seq.frame_level:
        raise DataError("window_frames needs per-frame labels")
    idx = window_indices(seq.n_frames, seq_len)
    return [(seq.frames[row], int(seq.labels[t])) for t, row in enumerate(idx)]


def resample_sequence(seq: SkeletonSequence, seq_len: int) -> SkeletonSequence:
    """Linearly interpolate to ``seq_len`` evenly spaced frames spanning the sequence."""
    if seq.n_frames < 1:
        raise DataError("cannot resample an empty sequence")
    if seq.frame_level:
        raise DataError("resample_sequence needs a sequence-level label")
    n = seq.n_frames
    if n == 1:
        frames = np.repeat(seq.frames, seq_len, axis=0)
    else:
        pos = np.linspace(0.0, n - 1, seq_len)
        lo = np.minimum(np.floor(pos).astype(int), n - 2)
        frac = (pos - lo)[:, None, None]
        frames = seq.frames[lo] * (1.0 - frac) + seq.frames[lo + 1] * frac
    return SkeletonSequence(frames, label=seq.label, meta=dict(seq.meta))


def to_arrays(sequences, seq_len: int):
    """Model-ready ``(X, y)``: causal windows for frame-labeled sequences,
    resampling for sequence-labeled ones. ``X`` is ``(N, T, K, 3)``."""
    xs, ys = [], []
    for seq in sequences:
        if seq.frame_level:
            idx = window_indices(seq.n_frames, seq_len)
            xs.append(seq.frames[idx])
            ys.append(seq.labels)
        else:
            if seq.n_frames != seq_len:
                seq = resample_sequence(seq, seq_len)
            xs.append(seq.frames[None])
            ys.append(np.array([seq.label]))
    if not xs:
        raise DataError("no sequences")
    return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


# -- sampling and splits ------------------------------------------------------

def batches_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def balanced_batches(labels, batch_size: int, seed: int, n_classes: int | None = None):
    """Endless stream of index arrays with equal class probability per slot.

    Each slot draws a class uniformly, then one of its samples uniformly
    (with replacement).
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    members = [np.flatnonzero(labels == c) for c in range(C)]
    empty = [c for c, m in enumerate(members) if len(m) == 0]
    if empty:
        raise DataError(f"classes without samples: {empty}")
    counts = np.array([len(m) for m in members])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    flat = np.concatenate(members)
    rng = np.random.default_rng(seed)
    while True:
        cls = rng.integers(0, C, size=batch_size)
        pick = rng.integers(0, counts[cls])
        yield flat[offsets[cls] + pick]


@dataclass
class DatasetSplit:
    key: str
    held_out: tuple
    val_values: tuple
    train: list
    val: list
    test: list


def split_by(sequences, key: str, held_out, val_values=()) -> DatasetSplit:
    """Sequences whose ``meta[key]`` is held out go to test, ``val_values`` to
    validation, everything else to train."""
    held_out, val_values = tuple(held_out), tuple(val_values)
    for i, s in enumerate(sequences):
        if key not in s.meta:
            raise DataError(f"sequence {i} has no meta key {key!r}")
    present = {s.meta[key] for s in sequences}
    for v in held_out + val_values:
        if v not in present:
            log.warning("split_by: %s=%r matches no sequence", key, v)
    train, val, test = [], [], []
    for s in sequences:
        v = s.meta[key]
        (test if v in held_out else val if v in val_values else train).append(s)
    return DatasetSplit(key, held_out, val_values, train, val, test)


# -- synthetic corpus -----------------------------------------------------------

def rest_pose(n_joints: int) -> np.ndarray:
    j = np.arange(n_joints)
    ang = 2 * np.pi * j / n_joints
    return np.stack([0.5 * np.cos(ang), 0.5 * np.sin(ang), 0.1 * j], axis=1)


def gesture_params(c: int, n_joints: int) -> dict:
    """Which joint/axis class ``c`` moves, and its frequency (cycles per sequence) and phase."""
    return {
        "joint": c % n_joints,
        "axis": c % 3,
        "cycles": 1.0 + 0.5 * c,
        "phase": np.pi * c / 4,
    }


def synth_gestures(
    n_classes: int,
    n_samples: int,
    n_joints: int,
    n_frames: int,
    noise: float = 0.0,
    seed: int = 0,
    amplitude: float = 1.0,
    max_jitter: float = np.pi / 8,
    n_subjects: int = 5,
) -> list:
    """Sequence-labeled sinusoidal gestures, class ``i % n_classes`` for sample ``i``.

    Class ``c`` swings one designated joint along one axis with a class
    specific frequency and phase. Per sample, only a phase jitter drawn from
    ``[-max_jitter, max_jitter]`` and Gaussian coordinate noise vary.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    base = rest_pose(n_joints)
    t = np.arange(n_frames) / n_frames
    out = []
    for i in range(n_samples):
        c = i % n_classes
        g = gesture_params(c, n_joints)
        jitter = float(rng.uniform(-max_jitter, max_jitter))
        frames = np.repeat(base[None], n_frames, axis=0)
        frames[:, g["joint"], g["axis"]] += amplitude * np.sin(2 * np.pi * g["cycles"] * t + g["phase"] + jitter)
        if noise > 0:
            frames = frames + rng.normal(0.0, noise, size=frames.shape)
        meta = {"subject": f"s{i % n_subjects}", "dataset": "synth", "jitter": jitter}
        out.append(SkeletonSequence(frames, label=c, meta=meta))
    return out


def synth_stream(
    classes,
    segment_frames: int,
    n_joints: int,
    n_frames: int,
    noise: float = 0.0,
    seed: int = 0,
    amplitude: float = 1.0,
) -> SkeletonSequence:
    """One frame-labeled sequence performing each class in ``classes`` for
    ``segment_frames`` frames, continuing the sinusoid across frames.

    Frequencies are in cycles per ``n_frames`` (the training sequence length
    of :func:`synth_gestures`), so any ``n_frames`` window inside a segment
    is a phase-shifted training gesture.
    """
    rng = np.random.default_rng(seed)
    base = rest_pose(n_joints)
    chunks, labels = [], []
    start = 0
    for c in classes:
        g = gesture_params(c, n_joints)
        t = (start + np.arange(segment_frames)) / n_frames
        frames = np.repeat(base[None], segment_frames, axis=0)
        frames[:, g["joint"], g["axis"]] += amplitude * np.sin(2 * np.pi * g["cycles"] * t + g["phase"])
        if noise > 0:
            frames = frames + rng.normal(0.0, noise, size=frames.shape)
        chunks.append(frames)
        labels += [c] * segment_frames
        start += segment_frames
    return SkeletonSequence(np.concatenate(chunks), labels=np.array(labels), meta={"dataset": "synth-stream"})
