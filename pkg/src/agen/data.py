"""Synthetic dataset generation and manifest ingestion.

Sprites are class-structured 24x24 patches (shared ellipse layout per class,
per-sample jitter tied to noise_std). Scenes paint a sprite into a cluttered
canvas at a known gaze; the inverse-mapped painting guarantees that
extracting the patch back at that gaze reproduces the sprite to well under
the documented round-trip tolerance.

Manifest CSV schema: path,lx1,ly1,lx2,ly2,lx3,ly3,subject_id with empty
landmark fields for unlabeled scenes. Landmarks are two eye points and a
mouth point in scene coordinates; the canonical positions in the 24x24
frame are (6,9), (17,9), (11.5,18).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .image import Canvas, _blur, load_pnm
from .util import rng_stream, sigmoid
from .warp import CanonicalImage, Gaze, PatchGrid, warp_points

__all__ = [
    "SpriteSpec",
    "ClutterSpec",
    "SceneRecord",
    "CANONICAL_LANDMARKS",
    "generate_sprites",
    "generate_labeled_sprites",
    "compose_scene",
    "compose_two_sprite_scene",
    "gaze_from_landmarks",
    "landmarks_from_gaze",
    "load_dataset",
    "write_manifest",
]


@dataclass(frozen=True)
class SpriteSpec:
    """Parameters of the synthetic sprite family."""

    class_count: int = 2
    width: int = 24
    height: int = 24
    noise_std: float = 0.03
    clutter_density: float = 1.5
    layout_seed: int = 7


@dataclass(frozen=True)
class ClutterSpec:
    """Background parameters; density 0 keeps the constant base texture."""

    base_level: float = 0.35
    density: float = 1.5  # ellipses per 1000 canvas pixels
    intensity_low: float = 0.10
    intensity_high: float = 0.90
    radius_low: float = 2.0
    radius_high: float = 9.0
    wash: float = 0.15


@dataclass(frozen=True)
class SceneRecord:
    canvas_path: str
    true_gaze: Gaze | None = None
    subject_id: int | None = None

    def load(self) -> Canvas:
        return load_pnm(self.canvas_path)


CANONICAL_LANDMARKS = np.array([[6.0, 9.0], [17.0, 9.0], [11.5, 18.0]])


def _soft_ellipse(xx: np.ndarray, yy: np.ndarray, cx: float, cy: float,
                  rx: float, ry: float, phi: float) -> np.ndarray:
    """Smooth-edged ellipse membership in [0, 1]."""
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    q = (u / rx) ** 2 + (v / ry) ** 2
    return sigmoid((1.0 - q) * 6.0)


def _class_layout(spec: SpriteSpec, cls: int) -> list[tuple]:
    """Fixed ellipse-part layout for one sprite class."""
    rng = rng_stream(spec.layout_seed, f"data.layout.{cls}")
    n_parts = int(rng.integers(4, 7))
    parts = []
    for _ in range(n_parts):
        cx = rng.uniform(0.2, 0.8) * spec.width
        cy = rng.uniform(0.2, 0.8) * spec.height
        rx = rng.uniform(1.8, 5.0)
        ry = rng.uniform(1.8, 5.0)
        phi = rng.uniform(0.0, np.pi)
        intensity = rng.uniform(0.45, 0.95)
        parts.append((cx, cy, rx, ry, phi, intensity))
    return parts


def _render_sprite(spec: SpriteSpec, parts: list[tuple],
                   rng: np.random.Generator) -> np.ndarray:
    w, h = spec.width, spec.height
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 0.06)
    pos_jit = 12.0 * spec.noise_std
    for cx, cy, rx, ry, phi, intensity in parts:
        cx = cx + rng.normal(0.0, pos_jit) if pos_jit > 0 else cx
        cy = cy + rng.normal(0.0, pos_jit) if pos_jit > 0 else cy
        inten = intensity * (1.0 + (rng.normal(0.0, spec.noise_std)
                                    if spec.noise_std > 0 else 0.0))
        m = _soft_ellipse(xx, yy, cx, cy, rx, ry, phi)
        img = np.maximum(img, m * inten)
    img = _blur(img[None], 0.6)[0]
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, img.shape)
    return np.clip(img, 0.0, 1.0).ravel()


def generate_labeled_sprites(spec: SpriteSpec, n: int, seed: int
                             ) -> tuple[np.ndarray, np.ndarray]:
    """(patches (n, D), class labels (n,)); deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_stream(seed, "data.sprites")
    layouts = [_class_layout(spec, c) for c in range(spec.class_count)]
    d = spec.width * spec.height
    out = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = int(rng.integers(spec.class_count))
        labels[i] = cls
        out[i] = _render_sprite(spec, layouts[cls], rng)
    return out, labels


def generate_sprites(spec: SpriteSpec, n: int, seed: int) -> np.ndarray:
    return generate_labeled_sprites(spec, n, seed)[0]


def generate_class_sprites(spec: SpriteSpec, cls: int, n: int,
                           seed: int) -> np.ndarray:
    """n noisy renders of one class layout; (n, D)."""
    if not (0 <= cls < spec.class_count):
        raise ValueError("class index out of range")
    rng = rng_stream(seed, f"data.sprites.{cls}")
    layout = _class_layout(spec, cls)
    return np.stack([_render_sprite(spec, layout, rng) for _ in range(n)])


def _paint_clutter(w: int, h: int, clutter: ClutterSpec,
                   rng: np.random.Generator) -> np.ndarray:
    bg = np.full((h, w), clutter.base_level)
    if clutter.density <= 0:
        return bg
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # smooth illumination wash
    ang = rng.uniform(0.0, 2.0 * np.pi)
    bg += clutter.wash * ((xx / w) * np.cos(ang) + (yy / h) * np.sin(ang))
    n_ell = int(round(clutter.density * w * h / 1000.0))
    for _ in range(n_ell):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        rx = rng.uniform(clutter.radius_low, clutter.radius_high)
        ry = rng.uniform(clutter.radius_low, clutter.radius_high)
        phi = rng.uniform(0.0, np.pi)
        inten = rng.uniform(clutter.intensity_low, clutter.intensity_high)
        m = _soft_ellipse(xx, yy, cx, cy, rx, ry, phi)
        bg = (1.0 - m) * bg + m * inten
    return np.clip(bg, 0.0, 1.0)


_PAINT_MARGIN = 2.5  # patch-coordinate dilation of the painted footprint


def _paint_sprite(bg: np.ndarray, sprite: CanonicalImage, gaze: Gaze) -> None:
    """Inverse-map canvas pixels in the warped footprint to sprite samples."""
    h, w = bg.shape
    sw, sh = sprite.width, sprite.height
    corners = np.array([
        [-_PAINT_MARGIN, -_PAINT_MARGIN],
        [sw - 1 + _PAINT_MARGIN, -_PAINT_MARGIN],
        [sw - 1 + _PAINT_MARGIN, sh - 1 + _PAINT_MARGIN],
        [-_PAINT_MARGIN, sh - 1 + _PAINT_MARGIN],
    ])
    warped = warp_points(corners, gaze)
    x0 = max(0, int(np.floor(warped[:, 0].min())))
    x1 = min(w - 1, int(np.ceil(warped[:, 0].max())))
    y0 = max(0, int(np.floor(warped[:, 1].min())))
    y1 = min(h - 1, int(np.ceil(warped[:, 1].max())))
    if x0 > x1 or y0 > y1:
        return
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    inv = np.linalg.inv(gaze.matrix())
    px = inv[0, 0] * (xx - gaze.dx) + inv[0, 1] * (yy - gaze.dy)
    py = inv[1, 0] * (xx - gaze.dx) + inv[1, 1] * (yy - gaze.dy)
    inside = ((px >= -_PAINT_MARGIN) & (px <= sw - 1 + _PAINT_MARGIN)
              & (py >= -_PAINT_MARGIN) & (py <= sh - 1 + _PAINT_MARGIN))
    if not inside.any():
        return
    # clamp-to-edge bilinear sample of the sprite
    plane = sprite.planes()[0]
    cx = np.clip(px[inside], 0.0, sw - 1.0)
    cy = np.clip(py[inside], 0.0, sh - 1.0)
    ix = np.minimum(cx.astype(np.intp), sw - 2)
    iy = np.minimum(cy.astype(np.intp), sh - 2)
    fx, fy = cx - ix, cy - iy
    vals = ((1 - fy) * ((1 - fx) * plane[iy, ix] + fx * plane[iy, ix + 1])
            + fy * ((1 - fx) * plane[iy + 1, ix] + fx * plane[iy + 1, ix + 1]))
    region = bg[y0 : y1 + 1, x0 : x1 + 1]
    region[inside] = vals


def _check_footprint(gaze: Gaze, sprite: CanonicalImage, w: int, h: int) -> None:
    grid = PatchGrid.lattice(sprite.width, sprite.height)
    pts = warp_points(grid.coords, gaze)
    inside = ((pts[:, 0] >= 0) & (pts[:, 0] <= w - 1)
              & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1))
    frac = float(inside.mean())
    if frac < 0.5:
        raise ValueError(f"sprite footprint only {frac:.0%} inside canvas")


def compose_scene(
    sprite: CanonicalImage,
    canvas_size: int | tuple[int, int],
    gaze: Gaze,
    clutter: ClutterSpec,
    seed: int,
) -> tuple[Canvas, Gaze]:
    """Clutter background + sprite painted at gaze; returns (canvas, gaze)."""
    w, h = (canvas_size, canvas_size) if isinstance(canvas_size, int) else canvas_size
    _check_footprint(gaze, sprite, w, h)
    rng = rng_stream(seed, "data.scene")
    bg = _paint_clutter(w, h, clutter, rng)
    _paint_sprite(bg, sprite, gaze)
    return Canvas(bg[None]), gaze


def compose_two_sprite_scene(
    sprite_a: CanonicalImage,
    sprite_b: CanonicalImage,
    canvas_size: int | tuple[int, int],
    gaze_a: Gaze,
    gaze_b: Gaze,
    clutter: ClutterSpec,
    seed: int,
) -> tuple[Canvas, Gaze, Gaze]:
    """Two sprites with disjoint painted footprints on one canvas."""
    w, h = (canvas_size, canvas_size) if isinstance(canvas_size, int) else canvas_size
    _check_footprint(gaze_a, sprite_a, w, h)
    _check_footprint(gaze_b, sprite_b, w, h)
    boxes = []
    for sprite, gaze in ((sprite_a, gaze_a), (sprite_b, gaze_b)):
        m = _PAINT_MARGIN
        corners = np.array([[-m, -m], [sprite.width - 1 + m, -m],
                            [sprite.width - 1 + m, sprite.height - 1 + m],
                            [-m, sprite.height - 1 + m]])
        pts = warp_points(corners, gaze)
        boxes.append((pts[:, 0].min(), pts[:, 0].max(),
                      pts[:, 1].min(), pts[:, 1].max()))
    (ax0, ax1, ay0, ay1), (bx0, bx1, by0, by1) = boxes
    if not (ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0):
        raise ValueError("sprite footprints overlap")
    rng = rng_stream(seed, "data.scene")
    bg = _paint_clutter(w, h, clutter, rng)
    _paint_sprite(bg, sprite_a, gaze_a)
    _paint_sprite(bg, sprite_b, gaze_b)
    return Canvas(bg[None]), gaze_a, gaze_b


# ---------------------------------------------------------------------------
# landmark <-> gaze conversion and manifests

def landmarks_from_gaze(gaze: Gaze) -> np.ndarray:
    """Scene positions of the canonical eye/eye/mouth landmarks."""
    return warp_points(CANONICAL_LANDMARKS, gaze)


def gaze_from_landmarks(points: np.ndarray) -> Gaze:
    """Least-squares similarity fit mapping canonical landmarks to points.

    The warp is linear in (a, b, dx, dy):
        [x, -y, 1, 0] . u = X - x
        [y,  x, 0, 1] . u = Y - y
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (3, 2):
        raise ValueError("expected 3 landmark points")
    rows, rhs = [], []
    for (x, y), (tx, ty) in zip(CANONICAL_LANDMARKS, points):
        rows.append([x, -y, 1.0, 0.0])
        rhs.append(tx - x)
        rows.append([y, x, 0.0, 1.0])
        rhs.append(ty - y)
    sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
    return Gaze.from_vector(sol)


def write_manifest(path, records: list[SceneRecord]) -> None:
    """Rows hold landmark positions derived from the gaze (blank if none)."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "lx1", "ly1", "lx2", "ly2", "lx3", "ly3", "subject_id"])
        for rec in records:
            rel = os.path.relpath(os.path.abspath(rec.canvas_path), base)
            if rec.true_gaze is None:
                marks = [""] * 6
            else:
                marks = [repr(float(v))
                         for v in landmarks_from_gaze(rec.true_gaze).ravel()]
            sid = "" if rec.subject_id is None else rec.subject_id
            w.writerow([rel, *marks, sid])


def load_dataset(manifest_path) -> list[SceneRecord]:
    """Parse and validate a manifest; landmark triplets become gazes."""
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    records: list[SceneRecord] = []
    with open(manifest_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip() == "path"):
                continue
            if len(row) != 8:
                raise ValueError(f"{manifest_path}:{lineno}: expected 8 fields")
            path = os.path.join(base, row[0])
            if not os.path.exists(path):
                raise FileNotFoundError(f"{manifest_path}:{lineno}: missing {row[0]}")
            marks = [f.strip() for f in row[1:7]]
            if all(m == "" for m in marks):
                gaze = None
            elif any(m == "" for m in marks):
                raise ValueError(f"{manifest_path}:{lineno}: partial landmarks")
            else:
                try:
                    pts = np.array([float(m) for m in marks]).reshape(3, 2)
                except ValueError as exc:
                    raise ValueError(
                        f"{manifest_path}:{lineno}: bad landmark value") from exc
                gaze = gaze_from_landmarks(pts)
            sid = row[7].strip()
            records.append(SceneRecord(path, gaze, int(sid) if sid else None))
    return records
