"""2D similarity transform: warping, patch extraction, analytic Jacobians.

The gaze u = (a, b, dx, dy) maps patch coordinates p to scene coordinates
    p' = [[1+a, -b], [b, 1+a]] p + [dx, dy]
which equals scale * rotation(theta) * p + t for a = s cos(theta) - 1,
b = s sin(theta). u = 0 is the identity.

Patch values are stored as flat vectors in channel-major order: all pixels
of channel 0 (row-major), then channel 1, ...
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .image import Canvas, sample_planes

__all__ = [
    "Gaze",
    "PatchGrid",
    "CanonicalImage",
    "to_ab",
    "warp_point",
    "warp_points",
    "warp_jacobian",
    "extract_patch",
    "patch_gradient",
    "patch_center",
    "gaze_center",
]


def to_ab(dtheta: float, dscale: float) -> tuple[float, float]:
    """(a, b) such that [[1+a,-b],[b,1+a]] = dscale * rotation(dtheta)."""
    if dscale <= 0:
        raise ValueError("dscale must be positive")
    return dscale * math.cos(dtheta) - 1.0, dscale * math.sin(dtheta)


@dataclass(frozen=True)
class Gaze:
    """Parameters of the 2D similarity transform (see module docstring)."""

    a: float
    b: float
    dx: float
    dy: float

    def __post_init__(self):
        # plain floats so repr() round-trips in CSV output
        for name in ("a", "b", "dx", "dy"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def scale(self) -> float:
        return math.hypot(1.0 + self.a, self.b)

    @property
    def theta(self) -> float:
        return math.atan2(self.b, 1.0 + self.a)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[1.0 + self.a, -self.b], [self.b, 1.0 + self.a]], dtype=np.float64
        )

    def as_vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.dx, self.dy], dtype=np.float64)

    @staticmethod
    def from_vector(vec) -> "Gaze":
        a, b, dx, dy = (float(t) for t in vec)
        return Gaze(a, b, dx, dy)

    @staticmethod
    def from_pose(dtheta: float, dscale: float, dx: float = 0.0, dy: float = 0.0) -> "Gaze":
        a, b = to_ab(dtheta, dscale)
        return Gaze(a, b, dx, dy)

    def to_bytes(self) -> bytes:
        """4 little-endian float64 in (a, b, dx, dy) order."""
        return struct.pack("<4d", self.a, self.b, self.dx, self.dy)

    @staticmethod
    def from_bytes(blob: bytes) -> "Gaze":
        return Gaze(*struct.unpack("<4d", blob))


class PatchGrid:
    """Ordered (row-major) lattice of patch coordinates."""

    def __init__(self, coords: np.ndarray, width: int, height: int):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape != (width * height, 2):
            raise ValueError("coords must be (width*height, 2)")
        coords = np.array(coords, copy=True)
        coords.setflags(write=False)
        self.coords = coords
        self.width = int(width)
        self.height = int(height)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @staticmethod
    @lru_cache(maxsize=64)
    def lattice(width: int, height: int) -> "PatchGrid":
        """Integer lattice [0,0] .. [width-1, height-1], row-major."""
        ys, xs = np.mgrid[0:height, 0:width]
        coords = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
        return PatchGrid(coords, width, height)

    @staticmethod
    @lru_cache(maxsize=64)
    def window(width: int, height: int, factor: int = 3) -> "PatchGrid":
        """factor-times-larger lattice centered on the canonical lattice.

        For 24x24 and factor 3 this covers [-24, 47]^2: the 72x72 context
        window around the patch, in patch coordinates.
        """
        w, h = factor * width, factor * height
        ys, xs = np.mgrid[0:h, 0:w]
        off_x = (factor - 1) * width // 2
        off_y = (factor - 1) * height // 2
        coords = np.column_stack([xs.ravel() - off_x, ys.ravel() - off_y])
        return PatchGrid(coords.astype(np.float64), w, h)


@dataclass(frozen=True)
class CanonicalImage:
    """Model-space patch: flat channel-major values plus geometry."""

    values: np.ndarray
    width: int
    height: int
    channels: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.width * self.height * self.channels:
            raise ValueError("values length does not match geometry")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.size

    def planes(self) -> np.ndarray:
        return self.values.reshape(self.channels, self.height, self.width)


def warp_point(p, u: Gaze) -> tuple[float, float]:
    """p' = [[1+a,-b],[b,1+a]] p + [dx, dy]."""
    x, y = float(p[0]), float(p[1])
    return (
        (1.0 + u.a) * x - u.b * y + u.dx,
        u.b * x + (1.0 + u.a) * y + u.dy,
    )


def warp_points(coords: np.ndarray, u: Gaze) -> np.ndarray:
    """Vectorized warp of an (N, 2) coordinate array."""
    x = coords[:, 0]
    y = coords[:, 1]
    out = np.empty_like(coords)
    out[:, 0] = (1.0 + u.a) * x - u.b * y + u.dx
    out[:, 1] = u.b * x + (1.0 + u.a) * y + u.dy
    return out


def warp_jacobian(p) -> np.ndarray:
    """d warp_point(p, u) / du = [[x, -y, 1, 0], [y, x, 0, 1]] (u-independent)."""
    x, y = float(p[0]), float(p[1])
    return np.array([[x, -y, 1.0, 0.0], [y, x, 0.0, 1.0]], dtype=np.float64)


def _source_planes(canvas: Canvas, u: Gaze) -> np.ndarray:
    # anti-alias only when patch pixels cover more than one canvas pixel
    s = u.scale
    return canvas.blurred(0.5 * s) if s > 1.0 else canvas.pixels


def extract_patch(canvas: Canvas, grid: PatchGrid, u: Gaze) -> np.ndarray:
    """x(u): bilinear samples of the canvas at the warped grid, flat (N*C,)."""
    pts = warp_points(grid.coords, u)
    vals = sample_planes(_source_planes(canvas, u), pts[:, 0], pts[:, 1])
    return vals.ravel()


def patch_gradient(canvas: Canvas, grid: PatchGrid, u: Gaze) -> np.ndarray:
    """d x(u) / du, an (N*C, 4) matrix.

    Row for pixel i (channel c) is [gx, gy] @ warp_jacobian(coords[i]) with
    the gradient images sampled at the warped position:
        [gx*x + gy*y, -gx*y + gy*x, gx, gy].
    """
    if canvas.grad_x is None or canvas.grad_y is None:
        raise ValueError("canvas gradients not computed (call gradient_images)")
    pts = warp_points(grid.coords, u)
    gx = sample_planes(canvas.grad_x, pts[:, 0], pts[:, 1])  # (C, N)
    gy = sample_planes(canvas.grad_y, pts[:, 0], pts[:, 1])
    x = grid.coords[:, 0][None, :]
    y = grid.coords[:, 1][None, :]
    n = len(grid) * canvas.channels
    out = np.empty((n, 4), dtype=np.float64)
    out[:, 0] = (gx * x + gy * y).ravel()
    out[:, 1] = (-gx * y + gy * x).ravel()
    out[:, 2] = gx.ravel()
    out[:, 3] = gy.ravel()
    return out


def patch_center(width: int, height: int) -> tuple[float, float]:
    """Geometric center of the [0..W-1]x[0..H-1] lattice."""
    return (width - 1) / 2.0, (height - 1) / 2.0


def gaze_center(u: Gaze, width: int, height: int) -> tuple[float, float]:
    """Scene position of the patch center under u."""
    return warp_point(patch_center(width, height), u)
