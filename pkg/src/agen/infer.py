"""Alternating inference over (u, v, h1, h2) for one scene.

Per iteration: a gaze update (amortized ConvNet step, later single HMC
iterations), then v ~ p(v | I, u, h1), then one bottom-up Gibbs pass
through the model. The gaze trace records the approximate steps followed
by the HMC iterations; acceptance statistics refer to the HMC part only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import approxnet, brbm, grbm, hmc
from .gdbn import GdbnModel
from .image import Canvas, gradient_images
from .util import rng_stream
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch

__all__ = [
    "InferenceState",
    "InferenceSchedule",
    "sample_v",
    "gibbs_h",
    "approximate_step",
    "infer",
]


@dataclass
class InferenceState:
    u: Gaze
    v: CanonicalImage
    h1: np.ndarray  # binary sample vectors (stored as float 0/1)
    h2: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class InferenceSchedule:
    approx_steps: int = 4
    hmc_iterations: int = 5
    hmc_config: hmc.HmcConfig = field(default_factory=lambda: hmc.default_config())
    init_translation_range: float = 30.0
    init_scale_range: tuple[float, float] = (0.5, 1.5)
    strict_variance: bool = False  # Eq.-as-printed mode: sigma^2, not sigma^2/2
    clamp_v: bool = False          # keep v fixed (identity-conditioned runs)


def sample_v(
    u: Gaze,
    h1: np.ndarray,
    canvas: Canvas,
    model: GdbnModel,
    deterministic: bool = False,
    rng: np.random.Generator | None = None,
    strict_variance: bool = False,
) -> CanonicalImage:
    """v ~ Normal((mu(h1) + x(u))/2, sigma^2/2) per coordinate.

    The mean averages the top-down prediction and the extracted patch; the
    exact product-of-Gaussians variance is sigma^2/2 (strict_variance uses
    sigma^2 instead). deterministic returns the mean.
    """
    grid = PatchGrid.lattice(model.patch_width, model.patch_height)
    x = extract_patch(canvas, grid, u)
    mu, sig = grbm.visible_conditional(h1, model.layer1)
    mean = 0.5 * (mu + x)
    if deterministic:
        vals = mean
    else:
        if rng is None:
            raise ValueError("rng required unless deterministic")
        var = sig**2 if strict_variance else sig**2 / 2.0
        vals = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return CanonicalImage(vals, model.patch_width, model.patch_height,
                          model.channels)


def gibbs_h(
    v: CanonicalImage,
    model: GdbnModel,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Bottom-up pass: h1 ~ p(h1|v), h2 ~ p(h2|h1).

    Returns (h1, h2, q1, q2): binary samples and their probabilities.
    """
    q1 = grbm.hidden_conditional(v.values, model.layer1)
    h1 = (rng.random(q1.shape) < q1).astype(np.float64)
    q2 = brbm.hidden_conditional(h1, model.layer2)
    h2 = (rng.random(q2.shape) < q2).astype(np.float64)
    return h1, h2, q1, q2


def approximate_step(
    state: InferenceState,
    canvas: Canvas,
    net: approxnet.ApproxNetParams,
) -> InferenceState:
    """One amortized gaze update; v and h are untouched."""
    w, h = state.v.width, state.v.height
    grid = PatchGrid.window(w, h, approxnet.WINDOW_FACTOR)
    win = extract_patch(canvas, grid, state.u)
    window = win.reshape(canvas.channels, grid.height, grid.width)
    upd = approxnet.forward(net, window, state.v.planes())
    u_new = approxnet.apply_update(state.u, upd, w, h)
    return replace(state, u=u_new, step=state.step + 1)


def _random_init(
    canvas: Canvas,
    model: GdbnModel,
    schedule: InferenceSchedule,
    rng: np.random.Generator,
) -> Gaze:
    r = schedule.init_translation_range
    cx = canvas.width / 2.0 + rng.uniform(-r, r)
    cy = canvas.height / 2.0 + rng.uniform(-r, r)
    s = rng.uniform(*schedule.init_scale_range)
    return approxnet.gaze_at_center(0.0, s, cx, cy,
                                    model.patch_width, model.patch_height)


def infer(
    canvas: Canvas,
    model: GdbnModel,
    net: approxnet.ApproxNetParams | None,
    schedule: InferenceSchedule,
    seed: int,
    u0: Gaze | None = None,
    v_init: CanonicalImage | None = None,
) -> tuple[InferenceState, hmc.HmcTrace]:
    """Full inference on one scene.

    u starts at u0 (or randomly inside the schedule ranges); v starts at
    v_init (or the model's mean patch). The returned trace holds one entry
    per approximate step (accept flag True, U evaluated at the new state)
    followed by one entry per HMC iteration.
    """
    rng = rng_stream(seed, "infer")
    if canvas.grad_x is None:
        gradient_images(canvas, hmc.GRAD_BLUR_SIGMA)
    if u0 is None:
        u0 = _random_init(canvas, model, schedule, rng)
    if v_init is None:
        v_init = CanonicalImage(model.mean_patch, model.patch_width,
                                model.patch_height, model.channels)
    sigma = model.layer1.sigma
    h1, h2, _, _ = gibbs_h(v_init, model, rng)
    state = InferenceState(u=u0, v=v_init, h1=h1, h2=h2, step=0)
    trace = hmc.HmcTrace([], [], [])

    def refresh_vh(state: InferenceState) -> InferenceState:
        if schedule.clamp_v:
            return state
        v = sample_v(state.u, state.h1, canvas, model, rng=rng,
                     strict_variance=schedule.strict_variance)
        h1, h2, _, _ = gibbs_h(v, model, rng)
        return replace(state, v=v, h1=h1, h2=h2)

    for _ in range(schedule.approx_steps):
        if net is None:
            raise ValueError("schedule has approx steps but no net given")
        state = approximate_step(state, canvas, net)
        trace.samples.append(state.u)
        trace.potentials.append(hmc.potential(state.u, state.v, canvas, sigma))
        trace.accept_flags.append(True)
        state = refresh_vh(state)

    one_iter = replace(schedule.hmc_config, n_iterations=1)
    for _ in range(schedule.hmc_iterations):
        piece = hmc.run(state.u, state.v, canvas, sigma, one_iter, rng=rng)
        state = replace(state, u=piece.samples[-1], step=state.step + 1)
        trace.extend(piece)
        state = refresh_vh(state)
    return state, trace
