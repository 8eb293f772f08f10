"""Two-stream convolutional regressor for gaze updates.

Stream A: the 72x72 context window around the current gaze -> 7x7 valid
conv (16 maps, 66x66) -> ReLU -> 3x3 stride-3 max pool (16x22x22).
Stream B: the 24x24 canonical image -> 5x5 conv with padding 1 (16x22x22)
-> ReLU. The streams combine by elementwise product, then a 1024-unit ReLU
layer and a 4-output linear layer. Loss is mean squared error over the 4
outputs.

The 4 raw outputs are whitened units; GazeUpdate conversion applies fixed
scales and exponentiates the scale component, so a zero output vector is
exactly the identity update. Updates compose with the current gaze as a
similarity transform anchored at the patch center, and relative_update /
apply_update are exact algebraic inverses.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import container
from .grbm import TrainHyper
from .image import Canvas
from .util import rng_stream
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch, patch_center

__all__ = [
    "ApproxNetParams",
    "GazeUpdate",
    "JitterRanges",
    "TrainingSet",
    "relative_update",
    "apply_update",
    "init_params",
    "forward",
    "forward_batch",
    "backward",
    "sgd_train",
    "make_training_pairs",
    "parameter_counts",
    "save_net",
    "load_net",
    "save_pairs",
    "load_pairs",
]

WINDOW_FACTOR = 3
# raw-output units: (dx, dy) in 12 px, dtheta in 0.25 rad, log-scale in 0.5
TARGET_SCALE = np.array([12.0, 12.0, 0.25, 0.5])


@dataclass(frozen=True)
class GazeUpdate:
    """Incremental pose correction (pixels, radians, scale ratio)."""

    dx: float
    dy: float
    dtheta: float
    dscale: float

    @staticmethod
    def identity() -> "GazeUpdate":
        return GazeUpdate(0.0, 0.0, 0.0, 1.0)


def update_to_target(upd: GazeUpdate) -> np.ndarray:
    """Whitened 4-vector regression target for an update."""
    raw = np.array([upd.dx, upd.dy, upd.dtheta, math.log(upd.dscale)])
    return raw / TARGET_SCALE


def target_to_update(vec: np.ndarray) -> GazeUpdate:
    """Inverse of update_to_target (applied to network outputs)."""
    raw = np.asarray(vec, dtype=np.float64) * TARGET_SCALE
    return GazeUpdate(float(raw[0]), float(raw[1]), float(raw[2]),
                      float(np.exp(raw[3])))


def relative_update(u_from: Gaze, u_to: Gaze, width: int, height: int) -> GazeUpdate:
    """The update that carries u_from to u_to, anchored at the patch center.

    Decomposes T_from^-1 . T_to as p -> s R(theta) (p - c) + c + delta.
    """
    cx, cy = patch_center(width, height)
    af, at = u_from.matrix(), u_to.matrix()
    ar = np.linalg.solve(af, at)
    tr = np.linalg.solve(af, np.array([u_to.dx - u_from.dx, u_to.dy - u_from.dy]))
    alpha, beta = ar[0, 0], ar[1, 0]
    s = math.hypot(alpha, beta)
    theta = math.atan2(beta, alpha)
    c = np.array([cx, cy])
    delta = ar @ c + tr - c
    return GazeUpdate(float(delta[0]), float(delta[1]), theta, s)


def apply_update(u: Gaze, upd: GazeUpdate, width: int, height: int) -> Gaze:
    """Compose an update into the current gaze (inverse of relative_update)."""
    cx, cy = patch_center(width, height)
    cos_t, sin_t = math.cos(upd.dtheta), math.sin(upd.dtheta)
    ar = upd.dscale * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    c = np.array([cx, cy])
    tr = np.array([upd.dx, upd.dy]) + c - ar @ c
    au = u.matrix()
    a_new = au @ ar
    t_new = au @ tr + np.array([u.dx, u.dy])
    return Gaze(float(a_new[0, 0] - 1.0), float(a_new[1, 0]),
                float(t_new[0]), float(t_new[1]))


@dataclass
class ApproxNetParams:
    """conv weights are (maps, C, k, k); fc weights are (fan_in, fan_out)."""

    conv_x_w: np.ndarray
    conv_x_b: np.ndarray
    conv_v_w: np.ndarray
    conv_v_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    @property
    def channels(self) -> int:
        return self.conv_x_w.shape[1]

    def copy(self) -> "ApproxNetParams":
        return ApproxNetParams(*(getattr(self, f).copy() for f in _FIELDS))


_FIELDS = ("conv_x_w", "conv_x_b", "conv_v_w", "conv_v_b",
           "fc1_w", "fc1_b", "fc2_w", "fc2_b")

N_MAPS = 16
POOL = 3
CONV_X_K = 7
CONV_V_K = 5
WIN = 72
CAN = 24
FEAT = 22  # both streams end at 16 x 22 x 22
FC1 = 1024


def init_params(channels: int, seed: int = 0) -> ApproxNetParams:
    rng = rng_stream(seed, "approxnet.init")

    def he(shape, fan_in):
        return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)

    return ApproxNetParams(
        conv_x_w=he((N_MAPS, channels, CONV_X_K, CONV_X_K), channels * CONV_X_K**2),
        conv_x_b=np.zeros(N_MAPS),
        conv_v_w=he((N_MAPS, channels, CONV_V_K, CONV_V_K), channels * CONV_V_K**2),
        conv_v_b=np.zeros(N_MAPS),
        fc1_w=he((N_MAPS * FEAT * FEAT, FC1), N_MAPS * FEAT * FEAT),
        fc1_b=np.zeros(FC1),
        fc2_w=0.01 * rng.standard_normal((FC1, 4)),
        fc2_b=np.zeros(4),
    )


def parameter_counts(params: ApproxNetParams) -> dict[str, int]:
    return {
        "conv_x": params.conv_x_w.size,
        "conv_x_bias": params.conv_x_b.size,
        "conv_v": params.conv_v_w.size,
        "conv_v_bias": params.conv_v_b.size,
        "fc1": params.fc1_w.size,
        "fc1_bias": params.fc1_b.size,
        "fc2": params.fc2_w.size,
        "fc2_bias": params.fc2_b.size,
    }


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, OH*OW, C*k*k) patch matrix (valid windows)."""
    b, c, h, w = x.shape
    oh, ow = h - k + 1, w - k + 1
    s0, s1, s2, s3 = x.strides
    view = as_strided(x, (b, oh, ow, c, k, k), (s0, s2, s3, s1, s2, s3))
    return view.reshape(b, oh * ow, c * k * k)


def forward_batch(params: ApproxNetParams, windows: np.ndarray,
                  canonicals: np.ndarray, want_cache: bool = False):
    """Forward pass on (B, C, 72, 72) and (B, C, 24, 24) batches -> (B, 4)."""
    b = windows.shape[0]
    if windows.shape[1:] != (params.channels, WIN, WIN):
        raise ValueError(f"window batch shape {windows.shape} invalid")
    if canonicals.shape[1:] != (params.channels, CAN, CAN):
        raise ValueError(f"canonical batch shape {canonicals.shape} invalid")

    # stream A: 7x7 valid conv, ReLU, 3x3/3 max pool
    col_a = _im2col(np.ascontiguousarray(windows, dtype=np.float64), CONV_X_K)
    pre_a = col_a @ params.conv_x_w.reshape(N_MAPS, -1).T + params.conv_x_b
    act_a = np.maximum(pre_a, 0.0).reshape(b, WIN - CONV_X_K + 1, WIN - CONV_X_K + 1, N_MAPS)
    tiles = act_a.reshape(b, FEAT, POOL, FEAT, POOL, N_MAPS)
    tiles = tiles.transpose(0, 1, 3, 5, 2, 4).reshape(b, FEAT, FEAT, N_MAPS, POOL * POOL)
    pool_idx = tiles.argmax(axis=-1)
    pooled = np.take_along_axis(tiles, pool_idx[..., None], axis=-1)[..., 0]

    # stream B: 5x5 conv with 1-pixel zero padding, ReLU
    padded = np.pad(np.asarray(canonicals, dtype=np.float64),
                    ((0, 0), (0, 0), (1, 1), (1, 1)))
    col_b = _im2col(padded, CONV_V_K)
    pre_b = col_b @ params.conv_v_w.reshape(N_MAPS, -1).T + params.conv_v_b
    act_b = np.maximum(pre_b, 0.0).reshape(b, FEAT, FEAT, N_MAPS)

    combined = pooled * act_b
    flat = combined.reshape(b, -1)
    pre_fc1 = flat @ params.fc1_w + params.fc1_b
    act_fc1 = np.maximum(pre_fc1, 0.0)
    out = act_fc1 @ params.fc2_w + params.fc2_b
    if not want_cache:
        return out
    cache = dict(col_a=col_a, pre_a=pre_a, pool_idx=pool_idx, pooled=pooled,
                 col_b=col_b, pre_b=pre_b, act_b=act_b, flat=flat,
                 pre_fc1=pre_fc1, act_fc1=act_fc1, out=out)
    return out, cache


def backward_batch(params: ApproxNetParams, cache: dict,
                   targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """MSE loss and gradients for a cached forward pass.

    loss = mean over batch and the 4 outputs of squared error.
    """
    out = cache["out"]
    b = out.shape[0]
    diff = out - targets
    loss = float(np.mean(diff**2))
    d_out = 2.0 * diff / (4.0 * b)

    grads: dict[str, np.ndarray] = {}
    grads["fc2_w"] = cache["act_fc1"].T @ d_out
    grads["fc2_b"] = d_out.sum(axis=0)
    d_act_fc1 = d_out @ params.fc2_w.T
    d_pre_fc1 = d_act_fc1 * (cache["pre_fc1"] > 0)
    grads["fc1_w"] = cache["flat"].T @ d_pre_fc1
    grads["fc1_b"] = d_pre_fc1.sum(axis=0)
    d_flat = d_pre_fc1 @ params.fc1_w.T
    d_combined = d_flat.reshape(b, FEAT, FEAT, N_MAPS)

    d_pooled = d_combined * cache["act_b"]
    d_act_b = d_combined * cache["pooled"]

    # stream B backward (first layer: only weight gradients needed)
    d_pre_b = (d_act_b.reshape(b, FEAT * FEAT, N_MAPS)
               * (cache["pre_b"] > 0))
    grads["conv_v_w"] = np.einsum("bpk,bpm->mk", cache["col_b"], d_pre_b).reshape(
        params.conv_v_w.shape)
    grads["conv_v_b"] = d_pre_b.sum(axis=(0, 1))

    # stream A backward through pool and ReLU
    d_tiles = np.zeros((b, FEAT, FEAT, N_MAPS, POOL * POOL))
    np.put_along_axis(d_tiles, cache["pool_idx"][..., None],
                      d_pooled[..., None], axis=-1)
    d_act_a = (d_tiles.reshape(b, FEAT, FEAT, N_MAPS, POOL, POOL)
               .transpose(0, 1, 4, 2, 5, 3)
               .reshape(b, (WIN - CONV_X_K + 1)**2, N_MAPS))
    d_pre_a = d_act_a * (cache["pre_a"] > 0)
    grads["conv_x_w"] = np.einsum("bpk,bpm->mk", cache["col_a"], d_pre_a).reshape(
        params.conv_x_w.shape)
    grads["conv_x_b"] = d_pre_a.sum(axis=(0, 1))
    return loss, grads


def forward(params: ApproxNetParams, window: np.ndarray,
            canonical: np.ndarray) -> GazeUpdate:
    """Single-sample forward; inputs shaped (C, 72, 72) and (C, 24, 24)."""
    out = forward_batch(params, window[None], canonical[None])
    return target_to_update(out[0])


def backward(params: ApproxNetParams, window: np.ndarray, canonical: np.ndarray,
             target: GazeUpdate) -> tuple[float, dict[str, np.ndarray]]:
    """Single-sample MSE loss and parameter gradients."""
    _, cache = forward_batch(params, window[None], canonical[None], want_cache=True)
    return backward_batch(params, cache, update_to_target(target)[None])


@dataclass
class TrainingSet:
    """Stacked training pairs; targets are whitened 4-vectors."""

    windows: np.ndarray     # (N, C, 72, 72)
    canonicals: np.ndarray  # (N, C, 24, 24)
    targets: np.ndarray     # (N, 4)

    def __len__(self) -> int:
        return self.windows.shape[0]

    def updates(self) -> list[GazeUpdate]:
        return [target_to_update(t) for t in self.targets]

    @staticmethod
    def from_pairs(pairs: list[tuple[np.ndarray, np.ndarray, GazeUpdate]]) -> "TrainingSet":
        if not pairs:
            c = 1
            return TrainingSet(np.zeros((0, c, WIN, WIN)), np.zeros((0, c, CAN, CAN)),
                               np.zeros((0, 4)))
        windows = np.stack([p[0] for p in pairs])
        canonicals = np.stack([p[1] for p in pairs])
        targets = np.stack([update_to_target(p[2]) for p in pairs])
        return TrainingSet(windows, canonicals, targets)


def sgd_train(
    dataset: TrainingSet,
    hyper: TrainHyper,
    params0: ApproxNetParams | None = None,
    channels: int = 1,
    monitor=None,
) -> tuple[ApproxNetParams, list[float]]:
    """Minibatch SGD with momentum; returns (params, per-epoch loss curve)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = rng_stream(hyper.seed, "approxnet.sgd")
    params = params0.copy() if params0 is not None else init_params(
        channels, seed=hyper.seed)
    vel = {name: np.zeros_like(getattr(params, name)) for name in _FIELDS}
    n = len(dataset)
    losses: list[float] = []
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, hyper.minibatch):
            idx = perm[start : start + hyper.minibatch]
            _, cache = forward_batch(params, dataset.windows[idx],
                                     dataset.canonicals[idx], want_cache=True)
            loss, grads = backward_batch(params, cache, dataset.targets[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            total += loss
            batches += 1
            for name in _FIELDS:
                g = grads[name] + hyper.weight_decay * getattr(params, name)
                vel[name] = hyper.momentum * vel[name] - hyper.learning_rate * g
                arr = getattr(params, name)
                arr += vel[name]
        losses.append(total / max(batches, 1))
        if monitor is not None:
            monitor(epoch, losses[-1])
    return params, losses


@dataclass(frozen=True)
class JitterRanges:
    """Perturbation ranges for training-pair synthesis.

    translation in canvas pixels; rotation in radians; scale as a ratio
    multiplying the true scale (low = high = 1 disables scale jitter).
    """

    translation: float = 30.0
    rotation: float = 0.15
    scale_low: float = 0.5
    scale_high: float = 1.5


def perturb_gaze(u_true: Gaze, jitter: JitterRanges, width: int, height: int,
                 rng: np.random.Generator) -> Gaze:
    """Random pose in the jitter ranges around the truth."""
    theta = u_true.theta + rng.uniform(-jitter.rotation, jitter.rotation)
    scale = u_true.scale * rng.uniform(jitter.scale_low, jitter.scale_high)
    cx, cy = patch_center(width, height)
    tx, ty = warp_xy(u_true, cx, cy)
    tx += rng.uniform(-jitter.translation, jitter.translation)
    ty += rng.uniform(-jitter.translation, jitter.translation)
    return gaze_at_center(theta, scale, tx, ty, width, height)


def warp_xy(u: Gaze, x: float, y: float) -> tuple[float, float]:
    return ((1.0 + u.a) * x - u.b * y + u.dx, u.b * x + (1.0 + u.a) * y + u.dy)


def gaze_at_center(theta: float, scale: float, cx_scene: float, cy_scene: float,
                   width: int, height: int) -> Gaze:
    """Gaze with given rotation/scale whose patch center lands at a point."""
    base = Gaze.from_pose(theta, scale)
    cx, cy = patch_center(width, height)
    px, py = warp_xy(base, cx, cy)
    return Gaze(base.a, base.b, cx_scene - px, cy_scene - py)


def make_training_pairs(
    scenes: list[tuple[Canvas, Gaze]],
    canonical: CanonicalImage,
    jitter: JitterRanges,
    n: int,
    seed: int,
    self_fraction: float = 0.5,
) -> TrainingSet:
    """Perturbed-pose windows labeled with the correcting update.

    The label is relative_update(perturbed, truth), i.e. the update that
    restores truth. Stream B carries the scene's own true-pose crop on a
    self_fraction share of the pairs and the given canonical image on the
    rest, so the net learns to align whatever template it is shown.
    """
    if not (0.0 <= self_fraction <= 1.0):
        raise ValueError("self_fraction must be in [0, 1]")
    rng = rng_stream(seed, "approxnet.pairs")
    w, h = canonical.width, canonical.height
    grid = PatchGrid.window(w, h, WINDOW_FACTOR)
    lattice = PatchGrid.lattice(w, h)
    c = canonical.channels
    base = canonical.planes().astype(np.float32)
    windows = np.empty((n, c, WINDOW_FACTOR * h, WINDOW_FACTOR * w), dtype=np.float32)
    canonicals = np.empty((n, c, h, w), dtype=np.float32)
    targets = np.empty((n, 4))
    for i in range(n):
        canvas, u_true = scenes[int(rng.integers(len(scenes)))]
        u_pert = perturb_gaze(u_true, jitter, w, h, rng)
        win = extract_patch(canvas, grid, u_pert)
        windows[i] = win.reshape(c, WINDOW_FACTOR * h, WINDOW_FACTOR * w)
        if rng.random() < self_fraction:
            crop = extract_patch(canvas, lattice, u_true)
            canonicals[i] = crop.reshape(c, h, w).astype(np.float32)
        else:
            canonicals[i] = base
        targets[i] = update_to_target(relative_update(u_pert, u_true, w, h))
    return TrainingSet(windows, canonicals, targets)


# ---------------------------------------------------------------------------
# serialization

def save_net(path, params: ApproxNetParams) -> None:
    tensors = {f"net.{name}": getattr(params, name) for name in _FIELDS}
    container.save_tensors(path, tensors)


def load_net(path) -> ApproxNetParams:
    tensors = container.load_tensors(path)
    return ApproxNetParams(*(tensors[f"net.{name}"] for name in _FIELDS))


PAIRS_MAGIC = b"AGTP"
PAIRS_VERSION = 1


def save_pairs(path, dataset: TrainingSet) -> None:
    """Flat binary cache: header, then per-record window f32 / canonical f32
    / 4 target f64."""
    n, c = len(dataset), dataset.windows.shape[1] if len(dataset) else 1
    win_hw = dataset.windows.shape[2:] if len(dataset) else (WIN, WIN)
    can_hw = dataset.canonicals.shape[2:] if len(dataset) else (CAN, CAN)
    with open(path, "wb") as fh:
        fh.write(PAIRS_MAGIC)
        fh.write(struct.pack("<HIIIIII", PAIRS_VERSION, n, c,
                             win_hw[0], win_hw[1], can_hw[0], can_hw[1]))
        for i in range(n):
            fh.write(dataset.windows[i].astype("<f4").tobytes())
            fh.write(dataset.canonicals[i].astype("<f4").tobytes())
            fh.write(dataset.targets[i].astype("<f8").tobytes())


def load_pairs(path) -> TrainingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PAIRS_MAGIC:
        raise ValueError("not a training-pairs file")
    version, n, c, wh, ww, ch, cw = struct.unpack_from("<HIIIIII", blob, 4)
    if version != PAIRS_VERSION:
        raise ValueError(f"unsupported pairs version {version}")
    pos = 4 + struct.calcsize("<HIIIIII")
    win_n, can_n = c * wh * ww, c * ch * cw
    rec = 4 * win_n + 4 * can_n + 8 * 4
    if len(blob) - pos != n * rec:
        raise ValueError("truncated training-pairs file")
    windows = np.empty((n, c, wh, ww))
    canonicals = np.empty((n, c, ch, cw))
    targets = np.empty((n, 4))
    for i in range(n):
        base = pos + i * rec
        windows[i] = np.frombuffer(blob, "<f4", win_n, base).reshape(c, wh, ww)
        canonicals[i] = np.frombuffer(
            blob, "<f4", can_n, base + 4 * win_n).reshape(c, ch, cw)
        targets[i] = np.frombuffer(blob, "<f8", 4, base + 4 * (win_n + can_n))
    return TrainingSet(windows, canonicals, targets)
