"""Rigid-body geometry: backbone frames, dihedrals, rotation algebra,
isotropic Gaussian SO(3) sampling, and radial basis encodings.

Everything here is plain float64 numpy; rotations are 3x3 matrices with
columns as basis vectors, and batched arguments use a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "AxisAngle",
    "GeometryError",
    "normalize",
    "vector_rejection",
    "frame_from_backbone",
    "frames_from_backbone",
    "dihedral",
    "rotation_exp",
    "rotation_log",
    "exp_rotvec",
    "log_rotvec",
    "scale_rotation",
    "rotation_angle_between",
    "random_rotation",
    "igso3_angle_density",
    "igso3_sample",
    "haar_angle_cdf",
    "gaussian_rbf_centers",
    "gaussian_rbf_encode",
]

DEGENERATE_EPS = 1e-8


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class AxisAngle:
    """Unit axis and angle in [0, pi]."""

    axis: np.ndarray
    angle: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.shape != (3,):
            raise GeometryError("axis must be a 3-vector")
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-6:
            raise GeometryError("axis must be unit length")
        if not 0.0 <= self.angle <= np.pi + 1e-12:
            raise GeometryError("angle must lie in [0, pi]")
        object.__setattr__(self, "axis", axis)


def normalize(v: np.ndarray, eps: float = DEGENERATE_EPS) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < eps):
        raise GeometryError("cannot normalize a near-zero vector")
    return v / n


def vector_rejection(v: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Component of v orthogonal to `direction` (which must be nonzero)."""
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise GeometryError("rejection direction is near zero")
    u = d / n
    return v - u * np.sum(v * u, axis=-1, keepdims=True)


def frame_from_backbone(n: np.ndarray, ca: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Orthonormal residue frame from backbone atoms.

    Columns: e1 along C-CA, e2 the N-CA direction with its e1 component
    removed, e3 = e1 x e2. Collinear or coincident atoms are rejected.
    """
    return frames_from_backbone(
        np.asarray(n, dtype=np.float64)[None],
        np.asarray(ca, dtype=np.float64)[None],
        np.asarray(c, dtype=np.float64)[None],
    )[0]


def frames_from_backbone(n: np.ndarray, ca: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    ca = np.asarray(ca, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    u = n - ca
    v = c - ca
    vn = np.linalg.norm(v, axis=-1)
    if np.any(vn < DEGENERATE_EPS):
        raise GeometryError("degenerate backbone: C coincides with CA")
    e1 = v / vn[..., None]
    w = u - e1 * np.sum(u * e1, axis=-1, keepdims=True)
    wn = np.linalg.norm(w, axis=-1)
    if np.any(wn < DEGENERATE_EPS):
        raise GeometryError("degenerate backbone: N, CA, C are collinear")
    e2 = w / wn[..., None]
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=-1)


def dihedral(p1, p2, p3, p4) -> float:
    """Signed dihedral in (-pi, pi] for four points (IUPAC sign convention)."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b1 = p2 - p1
    b2 = p3 - p2
    b3 = p4 - p3
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    b2n = np.linalg.norm(b2, axis=-1)
    if (
        np.any(b2n < DEGENERATE_EPS)
        or np.any(np.linalg.norm(n1, axis=-1) < DEGENERATE_EPS)
        or np.any(np.linalg.norm(n2, axis=-1) < DEGENERATE_EPS)
    ):
        raise GeometryError("dihedral undefined for collinear or coincident points")
    m1 = np.cross(n1, b2 / b2n[..., None])
    x = np.sum(n1 * n2, axis=-1)
    y = np.sum(m1 * n2, axis=-1)
    out = np.arctan2(y, x)
    return float(out) if out.ndim == 0 else out


# ---- rotation algebra ----------------------------------------------------


def exp_rotvec(w: np.ndarray) -> np.ndarray:
    """Rodrigues map from rotation vectors (..., 3) to matrices (..., 3, 3)."""
    w = np.asarray(w, dtype=np.float64)
    lead = w.shape[:-1]
    flat = w.reshape(-1, 3)
    theta = np.linalg.norm(flat, axis=-1)
    safe = np.where(theta < 1e-12, 1.0, theta)
    axis = flat / safe[:, None]
    K = _skew_raw(axis)
    s = np.sin(theta)[:, None, None]
    c = (1.0 - np.cos(theta))[:, None, None]
    out = np.broadcast_to(np.eye(3), K.shape).copy() + s * K + c * (K @ K)
    small = theta < 1e-12
    if np.any(small):
        # first-order completion keeps tiny rotations exact enough for round trips
        out[small] = np.eye(3) + _skew_raw(flat[small])
    return out.reshape(lead + (3, 3))


def _skew(axis: np.ndarray) -> np.ndarray:
    return _skew_raw(axis)


def _skew_raw(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    zeros = np.zeros(w.shape[:-1])
    return np.stack(
        [
            np.stack([zeros, -w[..., 2], w[..., 1]], axis=-1),
            np.stack([w[..., 2], zeros, -w[..., 0]], axis=-1),
            np.stack([-w[..., 1], w[..., 0], zeros], axis=-1),
        ],
        axis=-2,
    )


def log_rotvec(R: np.ndarray) -> np.ndarray:
    """Inverse of exp_rotvec; angle in [0, pi], axis sign fixed near pi."""
    R = np.asarray(R, dtype=np.float64)
    lead = R.shape[:-2]
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)
    tr = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(tr)
    out = np.zeros(R.shape[:-2] + (3,))

    generic = (angle > 1e-7) & (angle < np.pi - 1e-6)
    if np.any(generic):
        Rg = R[generic]
        ag = angle[generic]
        vee = np.stack(
            [
                Rg[:, 2, 1] - Rg[:, 1, 2],
                Rg[:, 0, 2] - Rg[:, 2, 0],
                Rg[:, 1, 0] - Rg[:, 0, 1],
            ],
            axis=-1,
        )
        out[generic] = vee * (ag / (2.0 * np.sin(ag)))[:, None]

    tiny = angle <= 1e-7
    if np.any(tiny):
        Rt = R[tiny]
        vee = 0.5 * np.stack(
            [
                Rt[:, 2, 1] - Rt[:, 1, 2],
                Rt[:, 0, 2] - Rt[:, 2, 0],
                Rt[:, 1, 0] - Rt[:, 0, 1],
            ],
            axis=-1,
        )
        out[tiny] = vee

    near_pi = angle >= np.pi - 1e-6
    if np.any(near_pi):
        Rp = R[near_pi]
        ap = angle[near_pi]
        # axis from the dominant column of R + I, sign: first nonzero positive
        B = Rp + np.eye(3)
        col = np.argmax(np.linalg.norm(B, axis=1), axis=-1)
        axes = B[np.arange(len(Rp)), :, col]
        axes = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
        for k in range(len(axes)):
            for comp in axes[k]:
                if abs(comp) > 1e-8:
                    if comp < 0:
                        axes[k] = -axes[k]
                    break
        out[near_pi] = axes * ap[:, None]

    return out[0] if single else out.reshape(lead + (3,))


def rotation_exp(aa: AxisAngle) -> np.ndarray:
    return exp_rotvec(aa.axis * aa.angle)


def rotation_log(R: np.ndarray) -> AxisAngle:
    w = log_rotvec(np.asarray(R, dtype=np.float64))
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return AxisAngle(np.array([1.0, 0.0, 0.0]), 0.0)
    return AxisAngle(w / angle, min(angle, np.pi))


def scale_rotation(R: np.ndarray, lam: float) -> np.ndarray:
    """Scale the rotation angle by lam in [0, 1], keeping the axis."""
    if not 0.0 <= lam <= 1.0:
        raise GeometryError("rotation scale must lie in [0, 1]")
    R = np.asarray(R, dtype=np.float64)
    if lam == 1.0:
        return R.copy()
    if lam == 0.0:
        return np.broadcast_to(np.eye(3), R.shape).copy()
    return exp_rotvec(lam * log_rotvec(R))


def rotation_angle_between(R1: np.ndarray, R2: np.ndarray) -> float | np.ndarray:
    """Geodesic angle between two rotations."""
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    rel = np.swapaxes(R1, -1, -2) @ R2
    tr = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    out = np.arccos(tr)
    return float(out) if out.ndim == 0 else out


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotation matrices from normalized 4-D Gaussian quaternions."""
    n = 1 if size is None else size
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((n, 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - z * w)
    R[:, 0, 2] = 2 * (x * z + y * w)
    R[:, 1, 0] = 2 * (x * y + z * w)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - x * w)
    R[:, 2, 0] = 2 * (x * z - y * w)
    R[:, 2, 1] = 2 * (y * z + x * w)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if size is None else R


# ---- isotropic Gaussian on SO(3) ------------------------------------------

_IGSO3_GRID_SIZE = 4096
_TANGENT_EPS = 1e-4
_cdf_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}


def _igso3_truncation(eps: float) -> int:
    if eps < 0.1:
        return 1000
    if eps < 1.0:
        return 200
    return 50


def igso3_angle_density(omega: np.ndarray, eps: float, truncation: int | None = None) -> np.ndarray:
    """Unnormalized angle density of the isotropic Gaussian on SO(3).

    Heat-kernel series times the Haar angle factor (1 - cos w) / pi.
    """
    if eps <= 0.0:
        raise GeometryError("igso3 variance must be positive")
    omega = np.asarray(omega, dtype=np.float64)
    L = _igso3_truncation(eps) if truncation is None else truncation
    ls = np.arange(L + 1, dtype=np.float64)
    coeff = (2.0 * ls + 1.0) * np.exp(-ls * (ls + 1.0) * eps)
    half = omega[..., None] / 2.0
    # sin((l + 1/2) w) / sin(w / 2), with the w -> 0 limit 2l + 1
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.sin((ls + 0.5) * omega[..., None]) / np.sin(half)
    ratio = np.where(np.abs(np.sin(half)) < 1e-12, 2.0 * ls + 1.0, ratio)
    series = (coeff * ratio).sum(axis=-1)
    return (1.0 - np.cos(omega)) / np.pi * series


def _igso3_angle_cdf(eps: float) -> tuple[np.ndarray, np.ndarray]:
    key = float(eps)
    hit = _cdf_cache.get(key)
    if hit is not None:
        return hit
    grid = np.linspace(0.0, np.pi, _IGSO3_GRID_SIZE + 1)[1:]
    pdf = igso3_angle_density(grid, eps)
    pdf = np.maximum(pdf, 0.0)  # series truncation can ring slightly negative
    cdf = np.cumsum(pdf)
    total = cdf[-1]
    if not np.isfinite(total) or total <= 0.0:
        raise GeometryError(f"igso3 density underflow at eps={eps}")
    cdf /= total
    _cdf_cache[key] = (grid, cdf)
    return grid, cdf


def igso3_sample(
    mean: np.ndarray,
    eps: float,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw rotations from the isotropic Gaussian with the given mean and variance.

    Below a tiny variance threshold the truncated series is unreliable and the
    tangent-space Gaussian limit (rotvec ~ N(0, 2 eps I)) is used instead.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if eps <= 0.0:
        raise GeometryError("igso3 variance must be positive")
    if mean.ndim == 3:
        if size is not None and size != mean.shape[0]:
            raise GeometryError("size must match the batch of means")
        n = mean.shape[0]
    else:
        n = 1 if size is None else size
    if eps < _TANGENT_EPS:
        w = rng.normal(scale=np.sqrt(2.0 * eps), size=(n, 3))
        noise = exp_rotvec(w)
    else:
        grid, cdf = _igso3_angle_cdf(eps)
        u = rng.random(n)
        omega = np.interp(u, cdf, grid)
        axis = rng.normal(size=(n, 3))
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        noise = exp_rotvec(axis * omega[:, None])
    if mean.ndim == 3:
        return mean @ noise
    out = mean[None] @ noise
    return out[0] if size is None else out


def haar_angle_cdf(omega: np.ndarray) -> np.ndarray:
    """CDF of the rotation angle under the Haar measure: (w - sin w) / pi."""
    omega = np.asarray(omega, dtype=np.float64)
    return (omega - np.sin(omega)) / np.pi


# ---- radial basis encodings ------------------------------------------------


def gaussian_rbf_centers(low: float, high: float, count: int) -> tuple[np.ndarray, float]:
    """Evenly spaced centers and their spacing (used as the width)."""
    if count < 2:
        raise GeometryError("need at least two RBF centers")
    centers = np.linspace(low, high, count)
    return centers, float(centers[1] - centers[0])


def gaussian_rbf_encode(d: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    """Gaussian bump encoding exp(-(d - c)^2 / (2 width^2)) per center."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0.0):
        raise GeometryError("distances must be non-negative")
    if width <= 0.0:
        raise GeometryError("RBF width must be positive")
    diff = d[..., None] - np.asarray(centers, dtype=np.float64)
    return np.exp(-0.5 * (diff / width) ** 2)
