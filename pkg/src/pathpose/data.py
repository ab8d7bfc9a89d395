"""Frame datasets, detector-label ingestion and sequence windowing.

Dataset files are JSON Lines. The first line is a header::

    {"format": "pathpose-frames", "version": 1, "n_classes": n,
     "fields": ["video_id", "frame_index", "pose", "detections"],
     "detection_fields": ["presence", "cx", "cy", "w", "h"],
     "pose_fields": ["depth", "pitch", "yaw"]}

and every following line is one frame::

    {"video_id": "train", "frame_index": 0, "pose": [d, pitch, yaw] | null,
     "detections": [[p, cx, cy, w, h], ...]}   # n rows, absent rows all zero

Floats are written with ``repr`` precision so files round-trip exactly.
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ValidationError, VersionError
from .scene import CameraPose

log = logging.getLogger(__name__)

DATASET_FORMAT = "pathpose-frames"
DATASET_VERSION = 1
FIELDS = ["video_id", "frame_index", "pose", "detections"]
DETECTION_FIELDS = ["presence", "cx", "cy", "w", "h"]
POSE_FIELDS = ["depth", "pitch", "yaw"]


@dataclass(eq=False)
class FrameRecord:
    video_id: str
    frame_index: int
    detections: np.ndarray = field(repr=False)
    pose: CameraPose | None = None

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.frame_index == other.frame_index
            and self.pose == other.pose
            and self.detections.shape == other.detections.shape
            and np.array_equal(self.detections, other.detections)
        )

    @property
    def n_classes(self):
        return self.detections.shape[0]


def from_labeled(frames, video_id="sim"):
    """Convert simulator frames to dataset records."""
    return [
        FrameRecord(video_id, int(f.frame_index), np.array(f.detections, dtype=np.float64), f.pose)
        for f in frames
    ]


def _check_record(rec, n, where):
    det = rec.detections
    if det.shape != (n, 5):
        raise ValidationError(f"{where}: detections shape {det.shape}, expected ({n}, 5)")
    if not np.all(np.isfinite(det)):
        raise ValidationError(f"{where}: non-finite detection values")
    presence = det[:, 0]
    if not np.all((presence == 0) | (presence == 1)):
        raise ValidationError(f"{where}: presence must be 0 or 1")
    if np.any(det[presence == 0, 1:] != 0):
        raise ValidationError(f"{where}: absent class with non-zero box")
    if np.any(det[:, 1:] < 0) or np.any(det[:, 1:] > 1):
        raise ValidationError(f"{where}: box values outside [0, 1]")


def validate_records(records):
    """Check record invariants; returns the class count (``None`` when empty)."""
    if not records:
        return None
    n = records[0].n_classes
    last = {}
    for i, rec in enumerate(records):
        where = f"record {i} ({rec.video_id!r}, frame {rec.frame_index})"
        _check_record(rec, n, where)
        prev = last.get(rec.video_id)
        if prev is not None and rec.frame_index <= prev:
            raise ValidationError(f"{where}: frame_index not strictly increasing")
        last[rec.video_id] = rec.frame_index
    return n


def write_dataset(records, path, n_classes=None):
    n = validate_records(records)
    if n is None:
        n = 0 if n_classes is None else n_classes
    elif n_classes is not None and n_classes != n:
        raise ValidationError(f"records have {n} classes, header says {n_classes}")
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n_classes": n,
        "fields": FIELDS,
        "detection_fields": DETECTION_FIELDS,
        "pose_fields": POSE_FIELDS,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for rec in records:
            pose = rec.pose
            line = {
                "video_id": rec.video_id,
                "frame_index": int(rec.frame_index),
                "pose": None if pose is None else [pose.depth, pose.pitch, pose.yaw],
                "detections": rec.detections.tolist(),
            }
            f.write(json.dumps(line) + "\n")


def read_dataset(path):
    path = Path(path)
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise FormatError("empty file (missing header)", path, 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad header: {exc}", path, 1) from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise FormatError("not a pathpose frame dataset", path, 1)
    if header.get("version") != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {header.get('version')!r}", path, 1)
    n = header.get("n_classes")
    if not isinstance(n, int) or n < 0:
        raise FormatError("header n_classes must be a non-negative integer", path, 1)

    records = []
    last = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            pose = d["pose"]
            if pose is not None:
                pose = CameraPose(*(float(v) for v in pose))
            rec = FrameRecord(
                str(d["video_id"]),
                int(d["frame_index"]),
                np.array(d["detections"], dtype=np.float64).reshape(-1, 5) if n else np.zeros((0, 5)),
                pose,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed record: {exc}", path, lineno) from exc
        try:
            _check_record(rec, n, f"{path}:{lineno}")
        except ValidationError as exc:
            raise FormatError(str(exc), path, lineno) from exc
        prev = last.get(rec.video_id)
        if prev is not None and rec.frame_index <= prev:
            raise FormatError("frame_index not strictly increasing", path, lineno)
        last[rec.video_id] = rec.frame_index
        records.append(rec)
    return records


@dataclass(frozen=True)
class ClassMap:
    """Detector class ids to dense model class ids, with some ids dropped."""

    n_total: int
    drop_ids: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "drop_ids", frozenset(int(i) for i in self.drop_ids))
        bad = [i for i in self.drop_ids if not 0 <= i < self.n_total]
        if bad:
            raise InputError(f"drop ids {sorted(bad)} outside [0, {self.n_total})")

    @property
    def remap(self):
        kept = [i for i in range(self.n_total) if i not in self.drop_ids]
        return {old: new for new, old in enumerate(kept)}

    @property
    def n_classes(self):
        return self.n_total - len(self.drop_ids)


_INDEX_RE = re.compile(r"(\d+)(?!.*\d)")


def _frame_number(name):
    m = _INDEX_RE.search(Path(name).stem)
    return None if m is None else int(m.group(1))


def _ingest_video(directory, video_id, class_map, fps_stride):
    files = {}
    for entry in os.listdir(directory):
        if not entry.endswith(".txt"):
            continue
        idx = _frame_number(entry)
        if idx is None:
            log.warning("skipping %s: no frame number in file name", entry)
            continue
        if idx in files:
            raise FormatError(f"duplicate frame number {idx}", Path(directory) / entry)
        files[idx] = Path(directory) / entry
    if not files:
        return []

    remap = class_map.remap
    n = class_map.n_classes
    first, last = min(files), max(files)
    records = []
    # frames without a label file inside the range had no detections
    for idx in range(first, last + 1, fps_stride):
        det = np.zeros((n, 5))
        best_conf = {}
        path = files.get(idx)
        lines = path.read_text().splitlines() if path is not None else []
        for lineno, line in enumerate(lines, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (5, 6):
                raise FormatError(f"expected 5 or 6 columns, got {len(parts)}", path, lineno)
            try:
                cls = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise FormatError(f"unparsable value: {exc}", path, lineno) from exc
            if not 0 <= cls < class_map.n_total:
                raise FormatError(
                    f"class id {cls} outside [0, {class_map.n_total})", path, lineno
                )
            if cls in class_map.drop_ids:
                continue
            box, conf = vals[:4], (vals[4] if len(vals) == 5 else None)
            if not all(0.0 <= v <= 1.0 for v in box):
                raise FormatError("box values must be normalized to [0, 1]", path, lineno)
            j = remap[cls]
            if j in best_conf:
                prev = best_conf[j]
                if conf is None or prev is None or conf <= prev:
                    continue
            best_conf[j] = conf
            det[j] = [1.0, *box]
        records.append(FrameRecord(video_id, idx, det))
    return records


def ingest_yolo_labels(directory, class_map, fps_stride=1):
    """Read a YOLO label directory into frame records.

    ``directory`` holds per-frame ``.txt`` files (one video, named after the
    directory) or sub-directories of such files (one video each). Frames are
    ordered by the last integer in the file name.
    """
    if fps_stride < 1:
        raise InputError("fps_stride must be >= 1")
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir())
    if subdirs:
        records = []
        for sub in subdirs:
            records.extend(_ingest_video(sub, sub.name, class_map, fps_stride))
        return records
    return _ingest_video(directory, directory.name, class_map, fps_stride)


def export_yolo_labels(records, directory):
    """Write records as YOLO label files, one sub-directory per video."""
    directory = Path(directory)
    for rec in records:
        vdir = directory / rec.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        lines = [
            " ".join([str(cls)] + [repr(float(v)) for v in row[1:]])
            for cls, row in enumerate(rec.detections)
            if row[0] == 1
        ]
        text = "\n".join(lines) + ("\n" if lines else "")
        (vdir / f"{rec.frame_index:06d}.txt").write_text(text)


def split_videos(records):
    """Group records into contiguous runs: ``[(video_id, [records...]), ...]``.

    A run breaks at a change of video id or where the frame step exceeds the
    smallest step seen in that video (a gap in the frame numbering).
    """
    by_video = {}
    for rec in records:
        by_video.setdefault(rec.video_id, []).append(rec)
    runs = []
    for vid, recs in by_video.items():
        idx = np.array([r.frame_index for r in recs])
        steps = np.diff(idx)
        base = steps.min() if len(steps) else 1
        start = 0
        for i, step in enumerate(steps, start=1):
            if step > base:
                runs.append((vid, recs[start:i]))
                start = i
        runs.append((vid, recs[start:]))
    return runs


def window_index(records, s):
    """Stacked frame array plus window start offsets.

    Returns ``(frames, starts, targets)``: ``frames`` is ``(F, n, 5)``, window
    ``k`` is ``frames[starts[k] : starts[k] + s]`` and its target record is
    ``targets[k]``.
    """
    blocks, starts, targets = [], [], []
    offset = 0
    for _, run in split_videos(records):
        arr = np.stack([r.detections for r in run]) if run else None
        if arr is not None:
            blocks.append(arr)
            for j in range(len(run) - s + 1):
                starts.append(offset + j)
                targets.append(run[j + s - 1])
            offset += len(run)
    n = records[0].n_classes if records else 0
    frames = np.concatenate(blocks) if blocks else np.zeros((0, n, 5))
    return frames, np.array(starts, dtype=np.int64), targets


def gather_windows(frames, starts, s):
    return frames[starts[:, None] + np.arange(s)]


def windows(records, s):
    """Yield ``(sequence (s, n, 5), target record)`` for every valid window."""
    frames, starts, targets = window_index(records, s)
    for k, start in enumerate(starts):
        yield frames[start : start + s], targets[k]
