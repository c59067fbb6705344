"""Oriented 3D box geometry: corners, rotations, overlap measures.

Conventions used across the package:

* Camera coordinates, right-handed: x right, y down, z forward. All lengths
  in meters.
* An oriented box is a center, per-axis dimensions (w, h, l) along the box's
  local (x, y, z) axes, and a unit quaternion stored scalar-first
  (qw, qx, qy, qz). The rotation maps box-local directions to camera
  directions, so the columns of the rotation matrix are the box axes.
* ``corners = R @ (signs * dims) + center`` with the sign table
  :data:`CORNER_SIGNS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Box2D",
    "Box3D",
    "CORNER_SIGNS",
    "box_corners",
    "box_volume",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_multiply",
    "random_quaternion",
    "rotation_angle_between",
    "rot6d_to_matrix",
    "matrix_to_rot6d",
    "yaw_of_rotation",
    "yaw_to_matrix",
    "normalize_box_rotation",
    "iou3d",
    "iou3d_monte_carlo",
    "intersection_volume",
    "iou2d",
    "giou2d",
]

# Half-extent sign pattern for the 8 corners. Index bit layout: corners 0-3
# are the z = -l/2 face in a CCW ring, 4-7 the z = +l/2 face above them.
CORNER_SIGNS = 0.5 * np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)

# Box faces as corner-index quads, wound counter-clockwise seen from outside
# (outward normals). Order: -z, +z, -y, +y, -x, +x.
BOX_FACES = (
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (3, 7, 6, 2),
    (0, 4, 7, 3),
    (1, 2, 6, 5),
)

_PLANE_EPS = 1e-12
_DEGENERATE_VOLUME = 1e-12


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel-space box, corner form (x1, y1) top-left."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 >= self.x1 and self.y2 >= self.y1):
            raise ValueError(f"invalid Box2D extents: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Box2D":
        a = np.asarray(a, dtype=np.float64)
        return Box2D(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (m), dims (w, h, l) > 0, unit quaternion.

    The quaternion is scalar-first and normalized on construction; dims must
    be strictly positive and finite.
    """

    center: np.ndarray
    dims: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        dims = np.asarray(self.dims, dtype=np.float64).reshape(3)
        quat = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(center)):
            raise ValueError("box center must be finite")
        if not (np.all(np.isfinite(dims)) and np.all(dims > 0)):
            raise ValueError(f"box dims must be positive and finite, got {dims}")
        norm = float(np.linalg.norm(quat))
        if not math.isfinite(norm) or norm < 1e-9:
            raise ValueError("quaternion has (near-)zero norm")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "quaternion", quat / norm)

    @property
    def rotation(self) -> np.ndarray:
        """3x3 rotation matrix (columns are the box axes)."""
        return quat_to_matrix(self.quaternion)

    def corners(self) -> np.ndarray:
        """(8, 3) corner coordinates in camera space."""
        return box_corners(self.center, self.dims, self.rotation)

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def normalized(self) -> "Box3D":
        """Box with canonical dims/rotation (same point set)."""
        dims, quat = normalize_box_rotation(self.dims, self.quaternion)
        return Box3D(self.center, dims, quat)

    def translated(self, offset) -> "Box3D":
        return Box3D(self.center + np.asarray(offset, dtype=np.float64), self.dims, self.quaternion)


def box_corners(center, dims, rotation) -> np.ndarray:
    """Corners of an oriented box given center, dims, rotation matrix."""
    local = CORNER_SIGNS * np.asarray(dims, dtype=np.float64)
    return local @ np.asarray(rotation, dtype=np.float64).T + np.asarray(center, dtype=np.float64)


def box_volume(dims) -> float:
    return float(np.prod(np.asarray(dims, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Quaternions (scalar-first)
# ---------------------------------------------------------------------------


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a scalar-first quaternion (normalized internally)."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Scalar-first unit quaternion of a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    # Canonical sign: first nonzero component positive.
    for c in q:
        if abs(c) > 1e-12:
            if c < 0:
                q = -q
            break
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b, scalar-first."""
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.uniform(size=3)
    a, b = math.sqrt(1 - u1), math.sqrt(u1)
    return np.array(
        [
            a * math.sin(2 * math.pi * u2),
            a * math.cos(2 * math.pi * u2),
            b * math.sin(2 * math.pi * u3),
            b * math.cos(2 * math.pi * u3),
        ]
    )


def rotation_angle_between(r_a, r_b) -> float:
    """Geodesic angle in radians between two rotation matrices."""
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    cos = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos)))


# ---------------------------------------------------------------------------
# 6D rotation parameterization (first two matrix rows)
# ---------------------------------------------------------------------------


def rot6d_to_matrix(r6) -> np.ndarray:
    """Rotation matrix from six scalars holding the first two matrix rows.

    Row 1 is the first triple normalized; row 2 is the Gram-Schmidt residual
    of the second triple against row 1; row 3 is their cross product, giving
    determinant +1.

    Raises:
        ValueError: if either triple is (near-)zero or the two are parallel
            within 1e-9.
    """
    r6 = np.asarray(r6, dtype=np.float64).reshape(6)
    a, b = r6[:3], r6[3:]
    na = np.linalg.norm(a)
    if na < 1e-9:
        raise ValueError("degenerate 6D rotation: first row is near zero")
    row1 = a / na
    resid = b - np.dot(b, row1) * row1
    nr = np.linalg.norm(resid)
    if nr < 1e-9:
        raise ValueError("degenerate 6D rotation: rows are parallel")
    row2 = resid / nr
    row3 = np.cross(row1, row2)
    return np.stack([row1, row2, row3])


def matrix_to_rot6d(m) -> np.ndarray:
    """First two rows of a rotation matrix, flattened to 6 scalars."""
    m = np.asarray(m, dtype=np.float64)
    return m[:2].reshape(6).copy()


# ---------------------------------------------------------------------------
# Canonical rotation normalization
# ---------------------------------------------------------------------------


def yaw_of_rotation(rotation) -> float:
    """Heading angle of the box's local +z axis in the camera x-z plane.

    Zero points along camera +z, increasing toward +x; range (-pi, pi].
    """
    heading = np.asarray(rotation, dtype=np.float64)[:, 2]
    return math.atan2(heading[0], heading[2])


def yaw_to_matrix(yaw: float) -> np.ndarray:
    """Rotation about the camera y axis by ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Exact quarter/half turns about y; keeps corner preservation tight.
_RY_90 = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
_RY_180 = np.diag([-1.0, 1.0, -1.0])


def normalize_box_rotation(dims, quaternion) -> tuple[np.ndarray, np.ndarray]:
    """Canonical (dims, quaternion) leaving the box point set unchanged.

    Two steps: if width exceeds length, swap them and fold a quarter turn
    about the vertical into the rotation; then fold the heading into
    [0, pi) with a half turn if needed. Idempotent.
    """
    dims = np.asarray(dims, dtype=np.float64).reshape(3).copy()
    quat = np.asarray(quaternion, dtype=np.float64).reshape(4)
    rot = quat_to_matrix(quat)
    changed = False

    if dims[0] > dims[2]:
        dims = dims[[2, 1, 0]]
        rot = rot @ _RY_90
        changed = True

    # Tolerance keeps the fold idempotent: folding a heading of exactly pi
    # lands at -epsilon, which must not trigger a second fold.
    yaw = yaw_of_rotation(rot)
    if yaw < -1e-12 or yaw >= math.pi - 1e-12:
        rot = rot @ _RY_180
        changed = True

    if changed:
        quat = matrix_to_quat(rot)
    return dims, quat


# ---------------------------------------------------------------------------
# Exact 3D IoU by half-space clipping
# ---------------------------------------------------------------------------


def _clip_face(face: np.ndarray, signed: np.ndarray, crossings: list) -> np.ndarray | None:
    """Clip one polygon to signed <= 0, collecting plane-crossing points."""
    n = len(face)
    out = []
    for i in range(n):
        j = (i + 1) % n
        di, dj = signed[i], signed[j]
        inside_i = di <= _PLANE_EPS
        inside_j = dj <= _PLANE_EPS
        if inside_i:
            out.append(face[i])
        if inside_i != inside_j:
            t = di / (di - dj)
            p = face[i] + t * (face[j] - face[i])
            out.append(p)
            crossings.append(p)
    if len(out) < 3:
        return None
    return np.asarray(out)


def _cap_polygon(crossings: list, normal: np.ndarray) -> np.ndarray | None:
    """Order plane-crossing points into a convex cap wound with +normal."""
    pts = np.asarray(crossings)
    # Deduplicate; clipping visits each cap edge endpoint from two faces.
    keep = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < 1e-9 for q in keep):
            keep.append(p)
    if len(keep) < 3:
        return None
    pts = np.asarray(keep)
    centroid = pts.mean(axis=0)
    # In-plane basis (b1, b2) with b1 x b2 = normal, so CCW angle order in
    # (b1, b2) coordinates winds the cap with outward normal +normal.
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(ref, normal)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    b1 = np.cross(normal, ref)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(normal, b1)
    rel = pts - centroid
    ang = np.arctan2(rel @ b2, rel @ b1)
    return pts[np.argsort(ang)]


def _clip_polyhedron(faces: list, plane_point: np.ndarray, normal: np.ndarray) -> list:
    """Clip a convex polyhedron to the half-space (x - p) . n <= 0."""
    new_faces = []
    crossings: list = []
    for face in faces:
        signed = (face - plane_point) @ normal
        clipped = _clip_face(face, signed, crossings)
        if clipped is not None:
            new_faces.append(clipped)
    if crossings:
        cap = _cap_polygon(crossings, normal)
        if cap is not None:
            new_faces.append(cap)
    return new_faces


def _polyhedron_volume(faces: list) -> float:
    """Signed volume via the divergence theorem over fan-triangulated faces."""
    vol = 0.0
    for face in faces:
        v0 = face[0]
        for k in range(1, len(face) - 1):
            vol += np.dot(v0, np.cross(face[k], face[k + 1]))
    return vol / 6.0


def _box_faces(box: Box3D) -> list:
    corners = box.corners()
    return [corners[list(idx)] for idx in BOX_FACES]


def _box_planes(box: Box3D):
    rot = box.rotation
    half = box.dims / 2.0
    for axis in range(3):
        n = rot[:, axis]
        for sign in (1.0, -1.0):
            yield box.center + sign * half[axis] * n, sign * n


def intersection_volume(a: Box3D, b: Box3D) -> float:
    """Exact volume of the intersection of two oriented boxes."""
    faces = _box_faces(b)
    for point, normal in _box_planes(a):
        faces = _clip_polyhedron(faces, point, normal)
        if not faces:
            return 0.0
    return max(0.0, _polyhedron_volume(faces))


def iou3d(a: Box3D, b: Box3D, return_flag: bool = False):
    """Exact 3D IoU of two oriented boxes.

    With ``return_flag`` the result is ``(iou, degenerate)`` where
    ``degenerate`` marks a (near-)zero-volume input; the IoU is then 0.
    """
    va, vb = a.volume, b.volume
    if va < _DEGENERATE_VOLUME or vb < _DEGENERATE_VOLUME:
        return (0.0, True) if return_flag else 0.0
    vi = intersection_volume(a, b)
    union = va + vb - vi
    iou = float(min(1.0, max(0.0, vi / union)))
    return (iou, False) if return_flag else iou


def iou3d_monte_carlo(a: Box3D, b: Box3D, n_samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo IoU estimate: uniform samples over the joint bounding box.

    Independent of the clipping path; used as an oracle and by the CLI.
    """
    ca, cb = a.corners(), b.corners()
    lo = np.minimum(ca.min(axis=0), cb.min(axis=0))
    hi = np.maximum(ca.max(axis=0), cb.max(axis=0))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, 3))

    def inside(box: Box3D) -> np.ndarray:
        local = (pts - box.center) @ box.rotation  # R^T (p - c)
        return np.all(np.abs(local) <= box.dims / 2.0, axis=1)

    in_a = inside(a)
    in_b = inside(b)
    n_union = np.count_nonzero(in_a | in_b)
    if n_union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b) / n_union)


# ---------------------------------------------------------------------------
# 2D overlap measures
# ---------------------------------------------------------------------------


def iou2d(a: Box2D, b: Box2D) -> float:
    """Plain IoU of two axis-aligned 2D boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def giou2d(a: Box2D, b: Box2D) -> float:
    """Generalized IoU of two axis-aligned 2D boxes, in (-1, 1]."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    hw = max(a.x2, b.x2) - min(a.x1, b.x1)
    hh = max(a.y2, b.y2) - min(a.y1, b.y1)
    hull = hw * hh
    if hull <= 0:
        # Both boxes degenerate to overlapping points/segments.
        return 1.0 if union == inter else 0.0
    iou = inter / union if union > 0 else 0.0
    return float(iou - (hull - union) / hull)
