"""Synthetic corridor simulator producing ground-truth box detections.

The corridor runs along the world +z axis from depth 0 to ``corridor_length``.
Anatomical structures are spheres placed at increasing depths with small
lateral offsets. A camera at depth ``d`` looks down the corridor; a pose with
pitch/yaw maps a world point ``X`` to camera coordinates ``R @ (X - C)`` where
``R = geometry.rotation_matrix(pitch, yaw)`` and ``C = (0, 0, d)``. That is the
camera body itself turned by ``R.T``; with this choice the centered-view image
of a point and its observed image are related by ``geometry.rotate_centers``
with the same ``R`` that the model predicts.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import geometry
from .errors import ConfigError, FormatError, VersionError

SCENE_FORMAT = "pathpose-scene"
SCENE_VERSION = 1

DEFAULT_K = 1024
DEFAULT_A_MIN = 1e-4


@dataclass(frozen=True)
class Structure:
    class_id: int
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"structure {self.class_id}: radius must be > 0")


@dataclass(frozen=True)
class Scene:
    corridor_length: float
    structures: tuple
    fov_half_angle: float = math.pi / 4
    near_clip: float = 0.1
    far_clip: float = 4.0
    sampling: int = DEFAULT_K
    a_min: float = DEFAULT_A_MIN

    def __post_init__(self):
        if not self.structures:
            raise ConfigError("scene needs at least one structure")
        if not 0 < self.near_clip < self.far_clip:
            raise ConfigError("need 0 < near_clip < far_clip")
        if not self.corridor_length > 0:
            raise ConfigError("corridor_length must be > 0")
        if not 0 < self.fov_half_angle < math.pi / 2:
            raise ConfigError("fov_half_angle must lie in (0, pi/2)")
        if self.sampling < 16:
            raise ConfigError("sampling must be >= 16")
        ids = [s.class_id for s in self.structures]
        if sorted(ids) != list(range(len(ids))):
            raise ConfigError(f"class ids must be exactly 0..n-1, got {ids}")

    @property
    def n_classes(self):
        return len(self.structures)


@dataclass(frozen=True)
class CameraPose:
    depth: float
    pitch: float = 0.0
    yaw: float = 0.0


@dataclass(frozen=True)
class TrajectoryConfig:
    n_frames: int = 4000
    n_passes: int = 4
    angle_max: float = math.radians(45.0)
    angle_persistence: float = 0.98
    angle_step_sd: float = math.radians(1.0)
    initial_pitch: float = 0.0
    initial_yaw: float = 0.0
    seed: int = 0
    min_frames: int = 1

    def __post_init__(self):
        if self.n_frames < max(1, self.min_frames):
            raise ConfigError(
                f"n_frames must be >= {max(1, self.min_frames)}, got {self.n_frames}"
            )
        if self.n_passes < 1:
            raise ConfigError("n_passes must be >= 1")
        if not 0 <= self.angle_persistence < 1:
            raise ConfigError("angle_persistence must lie in [0, 1)")
        if self.angle_step_sd < 0:
            raise ConfigError("angle_step_sd must be >= 0")
        if not 0 <= self.angle_max <= math.pi / 2:
            raise ConfigError("angle_max must lie in [0, pi/2]")


@dataclass
class LabeledFrame:
    frame_index: int
    pose: CameraPose
    detections: np.ndarray = field(repr=False)


def default_scene(n_structures=8, seed=0, corridor_length=10.0, **kwargs):
    """Build the reference corridor with ``n_structures`` spheres.

    Depths are evenly spaced over ``[0.1 L, 0.95 L]`` with a seeded jitter that
    keeps them strictly increasing; lateral offsets and radii are seeded too.
    ``kwargs`` override the remaining :class:`Scene` fields. The far clip
    defaults to ``0.4 L`` so structures enter and leave view along the path.
    """
    if n_structures < 2:
        raise ConfigError("default_scene needs n_structures >= 2")
    L = float(corridor_length)
    rng = np.random.default_rng(seed)
    base = np.linspace(0.1 * L, 0.95 * L, n_structures)
    gap = base[1] - base[0]
    jitter = rng.uniform(-0.3, 0.3, n_structures) * gap
    jitter[0] = abs(jitter[0])
    jitter[-1] = -abs(jitter[-1])
    depths = base + jitter
    offset_r = rng.uniform(0.15, 0.7, n_structures)
    offset_a = rng.uniform(0.0, 2 * math.pi, n_structures)
    radii = rng.uniform(0.2, 0.45, n_structures)
    structures = tuple(
        Structure(
            class_id=i,
            center=(
                float(offset_r[i] * math.cos(offset_a[i])),
                float(offset_r[i] * math.sin(offset_a[i])),
                float(depths[i]),
            ),
            radius=float(radii[i]),
        )
        for i in range(n_structures)
    )
    kwargs.setdefault("far_clip", 0.4 * L)
    return Scene(corridor_length=L, structures=structures, **kwargs)


@lru_cache(maxsize=8)
def fibonacci_sphere(k):
    """``k`` near-uniform unit vectors (read-only array of shape ``(k, 3)``)."""
    i = np.arange(k, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / k
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts.setflags(write=False)
    return pts


def camera_rotation(pose):
    return geometry.rotation_matrix(pose.pitch, pose.yaw).numpy()


def project_structure(
    structure,
    pose,
    fov=math.pi / 4,
    k=DEFAULT_K,
    near_clip=0.1,
    far_clip=4.0,
    a_min=DEFAULT_A_MIN,
):
    """Bounding box ``(cx, cy, w, h)`` of a sphere seen from ``pose``, or ``None``.

    The box is the axis-aligned extent of ``k`` Fibonacci surface samples that
    lie beyond the near plane, clipped to the unit image.
    """
    if k < 16:
        raise ConfigError("sampling k must be >= 16")
    R = camera_rotation(pose)
    cam = np.array([0.0, 0.0, pose.depth])
    centroid = R @ (np.asarray(structure.center, dtype=np.float64) - cam)
    if not near_clip < centroid[2] < far_clip:
        return None
    # a sphere cut by the near plane projects to an unbounded region
    if centroid[2] - structure.radius <= near_clip:
        return None

    pts = centroid + structure.radius * (fibonacci_sphere(k) @ R.T)
    pts = pts[pts[:, 2] > near_clip]
    if len(pts) == 0:
        return None
    scale = math.tan(fov)
    u = (pts[:, 0] / pts[:, 2]) / scale
    v = (pts[:, 1] / pts[:, 2]) / scale
    x0, x1 = np.clip([(u.min() + 1) / 2, (u.max() + 1) / 2], 0.0, 1.0)
    y0, y1 = np.clip([(v.min() + 1) / 2, (v.max() + 1) / 2], 0.0, 1.0)
    w, h = x1 - x0, y1 - y0
    if w * h < a_min:
        return None
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, w, h])


def render_frame(scene, pose, frame_index=0, k=None):
    """Detections of every structure: an ``(n, 5)`` array of presence + box."""
    k = scene.sampling if k is None else k
    det = np.zeros((scene.n_classes, 5))
    for s in scene.structures:
        box = project_structure(
            s,
            pose,
            fov=scene.fov_half_angle,
            k=k,
            near_clip=scene.near_clip,
            far_clip=scene.far_clip,
            a_min=scene.a_min,
        )
        if box is not None:
            det[s.class_id, 0] = 1.0
            det[s.class_id, 1:] = box
    return LabeledFrame(frame_index=frame_index, pose=pose, detections=det)


def trajectory_poses(L, cfg):
    """Depth triangle wave and AR(1) angle walk as three float arrays."""
    n = cfg.n_frames
    x = cfg.n_passes * np.arange(n) / max(n - 1, 1)
    depth = L * (1.0 - np.abs(2.0 * np.mod(x, 1.0) - 1.0))

    rng = np.random.default_rng(cfg.seed)
    eps = rng.standard_normal((n, 2))
    angles = np.empty((n, 2))
    theta = np.array([cfg.initial_pitch, cfg.initial_yaw], dtype=np.float64)
    theta = np.clip(theta, -cfg.angle_max, cfg.angle_max)
    for t in range(n):
        angles[t] = theta
        theta = np.clip(
            cfg.angle_persistence * theta + cfg.angle_step_sd * eps[t],
            -cfg.angle_max,
            cfg.angle_max,
        )
    return depth, angles[:, 0], angles[:, 1]


def generate_trajectory(scene, cfg):
    """Render a forward/backward sweep through ``scene`` with random viewing angles."""
    depth, pitch, yaw = trajectory_poses(scene.corridor_length, cfg)
    return [
        render_frame(
            scene,
            CameraPose(float(depth[t]), float(pitch[t]), float(yaw[t])),
            frame_index=t,
        )
        for t in range(cfg.n_frames)
    ]


def scene_to_dict(scene):
    d = asdict(scene)
    d["structures"] = [
        {"class_id": s.class_id, "center": list(s.center), "radius": s.radius}
        for s in scene.structures
    ]
    return {"format": SCENE_FORMAT, "version": SCENE_VERSION, **d}


def scene_from_dict(d, path=None):
    if d.get("format") != SCENE_FORMAT:
        raise FormatError("not a scene file", path)
    if d.get("version") != SCENE_VERSION:
        raise VersionError(f"unsupported scene version {d.get('version')!r}", path)
    body = {k: v for k, v in d.items() if k not in ("format", "version")}
    allowed = set(Scene.__dataclass_fields__)
    unknown = set(body) - allowed
    if unknown:
        raise FormatError(f"unknown scene keys {sorted(unknown)}", path)
    try:
        structures = tuple(
            Structure(int(s["class_id"]), tuple(float(c) for c in s["center"]), float(s["radius"]))
            for s in body.pop("structures")
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad structure entry: {exc}", path) from exc
    return Scene(structures=structures, **body)


def save_scene(scene, path):
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2)
        f.write("\n")


def load_scene(path):
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path, exc.lineno) from exc
    return scene_from_dict(d, path)
