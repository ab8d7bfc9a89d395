"""Camera rotation geometry.

Boxes are arrays of shape ``(..., 4)`` holding ``(cx, cy, w, h)`` in normalized
image coordinates. Rotations act on box centers as a rotation-only pinhole
homography with identity intrinsics: the ``[0, 1]^2`` image is mapped to
``[-1, 1]^2``, lifted onto the ``z = 1`` plane, rotated, and divided back.

Conventions (shared with :mod:`pathpose.scene`):

* pitch turns about the image x-axis; the principal point moves to
  ``v' = tan(pitch)``.
* yaw turns about the image y-axis; points on the horizontal line satisfy
  ``u' = tan(arctan(u) + yaw)``.
* ``R = R_yaw @ R_pitch``.

All functions accept floats, numpy arrays or torch tensors and return torch
tensors (float64 unless a tensor of another dtype is passed in), so they sit
directly inside the autograd graph of the model.
"""

import math

import torch

from .errors import DegenerateRotationError, DomainError

DEGENERACY_EPS = 1e-6


def _tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def pitch_matrix(pitch):
    """Rotation about the image x-axis, shape ``(..., 3, 3)``."""
    pitch = _tensor(pitch)
    c, s = torch.cos(pitch), torch.sin(pitch)
    one, zero = torch.ones_like(c), torch.zeros_like(c)
    rows = [
        torch.stack([one, zero, zero], -1),
        torch.stack([zero, c, s], -1),
        torch.stack([zero, -s, c], -1),
    ]
    return torch.stack(rows, -2)


def yaw_matrix(yaw):
    """Rotation about the image y-axis, shape ``(..., 3, 3)``."""
    yaw = _tensor(yaw)
    c, s = torch.cos(yaw), torch.sin(yaw)
    one, zero = torch.ones_like(c), torch.zeros_like(c)
    rows = [
        torch.stack([c, zero, s], -1),
        torch.stack([zero, one, zero], -1),
        torch.stack([-s, zero, c], -1),
    ]
    return torch.stack(rows, -2)


def rotation_matrix(pitch, yaw):
    """Camera rotation ``R_yaw(yaw) @ R_pitch(pitch)`` for angles in radians.

    Broadcasts over leading dimensions of ``pitch`` and ``yaw``.
    """
    pitch = _tensor(pitch)
    yaw = _tensor(yaw, like=pitch)
    pitch, yaw = torch.broadcast_tensors(pitch, yaw)
    return yaw_matrix(yaw) @ pitch_matrix(pitch)


def latent_to_angle(z):
    """Map a latent angle unit in ``[-1, 1]`` to radians (``±1 -> ±90°``)."""
    z = _tensor(z)
    if bool(torch.any(~torch.isfinite(z))) or bool(torch.any(z.abs() > 1.0)):
        raise DomainError(f"latent angle outside [-1, 1]: {z.detach().tolist()}")
    return z * (math.pi / 2)


def angle_to_latent(radians):
    return _tensor(radians) / (math.pi / 2)


def _dehomogenize(p, eps):
    # Swap this for ``p[..., :2]`` to get the divide-free variant.
    z = p[..., 2]
    if bool(torch.any(z <= eps)):
        raise DegenerateRotationError(
            f"rotated center reached the camera plane (min z = {float(z.detach().min()):.3g})"
        )
    return p[..., :2] / z.unsqueeze(-1)


def rotate_centers(boxes, R, eps=DEGENERACY_EPS):
    """Apply rotation ``R`` to box centers, keeping widths and heights.

    ``boxes`` has shape ``(..., n, 4)`` and ``R`` shape ``(..., 3, 3)``; leading
    dimensions broadcast. Raises :class:`DegenerateRotationError` when a rotated
    center has depth ``<= eps``.
    """
    boxes = _tensor(boxes)
    R = _tensor(R, like=boxes).to(boxes.dtype)
    uv = 2.0 * boxes[..., :2] - 1.0
    p = torch.cat([uv, torch.ones_like(uv[..., :1])], dim=-1)
    p_rot = torch.einsum("...ij,...nj->...ni", R, p)
    uv_rot = _dehomogenize(p_rot, eps)
    # written as an offset so the identity rotation returns the input bit-exactly
    centers = boxes[..., :2] + (uv_rot - uv) / 2.0
    return torch.cat([centers, boxes[..., 2:]], dim=-1)
