"""Quantitative assessment of a trained embedding on posed (synthetic) data.

The report builders (``*_report``) are pure functions of latent codes and
ground truth, so they can be checked against oracle latents; the model-level
wrappers encode the windows first.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import gather_windows, window_index
from .errors import FormatError, InputError, InsufficientCoverageError, UndefinedCorrelationError, VersionError
from .model import LatentCode, encode_batched

REPORT_FORMAT = "pathpose-report"
REPORT_VERSION = 1
MIN_BIN_VISITS = 5


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("pearson needs two 1-D series of equal length")
    if len(x) < 2:
        raise InputError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


@dataclass
class AngleErrorReport:
    mean_pitch_err: float
    mean_yaw_err: float
    sd_pitch_err: float
    sd_yaw_err: float
    mean_abs_pitch_err: float
    mean_abs_yaw_err: float
    n_sequences: int


@dataclass
class CorrelationReport:
    pearson_r: float
    abs_r: float
    n_frames: int


@dataclass
class SpreadReport:
    bin_edges: list
    bin_counts: list
    z1_range: list
    mean_range: float
    variant: str = "rotation"


def angle_error_report(pred_pitch, pred_yaw, true_pitch, true_yaw):
    """Signed and absolute error statistics; all inputs in degrees."""
    errs = [
        np.asarray(p, dtype=np.float64) - np.asarray(t, dtype=np.float64)
        for p, t in ((pred_pitch, true_pitch), (pred_yaw, true_yaw))
    ]
    n = len(errs[0])
    if n < 2:
        raise InputError("angle errors need at least two sequences")
    ep, ey = errs
    return AngleErrorReport(
        mean_pitch_err=float(ep.mean()),
        mean_yaw_err=float(ey.mean()),
        sd_pitch_err=float(ep.std()),
        sd_yaw_err=float(ey.std()),
        mean_abs_pitch_err=float(np.abs(ep).mean()),
        mean_abs_yaw_err=float(np.abs(ey).mean()),
        n_sequences=n,
    )


def correlation_report(z1, depth):
    r = pearson(z1, depth)
    return CorrelationReport(pearson_r=r, abs_r=abs(r), n_frames=len(z1))


def spread_report(z1, depth, corridor_length, n_bins, min_visits=MIN_BIN_VISITS, variant="rotation"):
    """Range of ``z1`` among windows whose true depth falls in the same bin."""
    z1 = np.asarray(z1, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if n_bins < 1:
        raise InputError("n_bins must be >= 1")
    edges = np.linspace(0.0, corridor_length, n_bins + 1)
    bins = np.clip(np.searchsorted(edges, depth, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    thin = [int(b) for b in np.flatnonzero(counts < min_visits)]
    if thin:
        raise InsufficientCoverageError(thin, min_visits)
    ranges = [float(np.ptp(z1[bins == b])) for b in range(n_bins)]
    return SpreadReport(
        bin_edges=edges.tolist(),
        bin_counts=counts.tolist(),
        z1_range=ranges,
        mean_range=float(np.mean(ranges)),
        variant=variant,
    )


def guidance_delta(current, reference):
    """``reference - current`` as ``(d_pitch°, d_yaw°, d_path)``."""
    current, reference = LatentCode(*current), LatentCode(*reference)
    return (
        (reference.z2 - current.z2) * 90.0,
        (reference.z3 - current.z3) * 90.0,
        reference.z1 - current.z1,
    )


def posed_windows(records, s, stride=1):
    """Windows (every ``stride``-th) whose target frame carries a pose."""
    frames, starts, targets = window_index(records, s)
    keep = [k for k in range(0, len(starts), stride) if targets[k].pose is not None]
    if not keep:
        return np.zeros((0, s, frames.shape[1] if frames.ndim == 3 else 0, 5)), []
    return gather_windows(frames, starts[keep], s), [targets[k] for k in keep]


def _truth(targets):
    depth = np.array([t.pose.depth for t in targets])
    pitch = np.degrees([t.pose.pitch for t in targets])
    yaw = np.degrees([t.pose.yaw for t in targets])
    return depth, pitch, yaw


def predict(model, records, stride=1):
    """Latents ``(N, 3)`` and target records for the posed windows of ``records``."""
    X, targets = posed_windows(records, model.cfg.seq_len, stride)
    return encode_batched(model, X), targets


def angle_errors(model, records, stride=16):
    Z, targets = predict(model, records, stride)
    if not targets:
        raise InputError("no posed windows to evaluate")
    _, pitch, yaw = _truth(targets)
    return angle_error_report(Z[:, 1] * 90.0, Z[:, 2] * 90.0, pitch, yaw)


def depth_correlation(model, records, stride=1):
    Z, targets = predict(model, records, stride)
    if len(targets) < 2:
        raise InputError("depth correlation needs at least two posed windows")
    depth, _, _ = _truth(targets)
    return correlation_report(Z[:, 0], depth)


def latent_spread(model, records, n_bins, corridor_length=None, stride=1):
    Z, targets = predict(model, records, stride)
    if not targets:
        raise InputError("no posed windows to evaluate")
    depth, _, _ = _truth(targets)
    if corridor_length is None:
        corridor_length = float(depth.max())
    variant = "rotation" if model.cfg.rotation_enabled else "no-rotation"
    return spread_report(Z[:, 0], depth, corridor_length, n_bins, variant=variant)


def write_report(path, sections):
    """Serialize report dataclasses (``{name: report}``) to a versioned JSON file."""
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
    for name, rep in sections.items():
        doc[name] = asdict(rep) if hasattr(rep, "__dataclass_fields__") else rep
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


_REPORT_TYPES = {
    "angle_errors": AngleErrorReport,
    "depth_correlation": CorrelationReport,
    "latent_spread": SpreadReport,
}


def read_report(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path, exc.lineno) from exc
    if doc.get("format") != REPORT_FORMAT:
        raise FormatError("not a pathpose report", path)
    if doc.get("version") != REPORT_VERSION:
        raise VersionError(f"unsupported report version {doc.get('version')!r}", path)
    out = {}
    for name, body in doc.items():
        if name in ("format", "version"):
            continue
        cls = _REPORT_TYPES.get(name)
        out[name] = cls(**body) if cls is not None else body
    return out


LATENT_COLUMNS = ["video_id", "frame_index", "true_depth", "z1", "z2", "z3", "true_pitch_deg", "true_yaw_deg"]


def write_latent_table(path, latents, targets):
    """Tab-separated per-window latents with ground truth for external plotting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(LATENT_COLUMNS)
        for z, t in zip(latents, targets):
            pose = t.pose
            truth = ["", "", ""] if pose is None else [
                repr(pose.depth), repr(math.degrees(pose.pitch)), repr(math.degrees(pose.yaw))
            ]
            w.writerow([t.video_id, t.frame_index, truth[0], *(repr(float(v)) for v in z), *truth[1:]])
