"""Monte Carlo EM: learn the patch model from scenes without pose labels.

E-step: run full inference per scene and keep the tail of the HMC chain as
posterior samples of (x(u), u); the approximate-inference steps serve as
burn-in. M-step: continue GDBN training on the sampled patches (warm
start). Optionally the ConvNet is refreshed each round with
high-confidence E-step poses as pseudo-labels.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import approxnet, gdbn
from .gdbn import GdbnModel
from .grbm import TrainHyper
from .image import Canvas
from .infer import InferenceSchedule, infer
from .util import rng_stream
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch

__all__ = ["EmConfig", "e_step", "m_step", "run_em", "write_report_csv"]


@dataclass(frozen=True)
class EmConfig:
    rounds: int = 3
    e_samples_per_image: int = 2
    m_hyper1: TrainHyper = field(default_factory=lambda: TrainHyper(
        learning_rate=0.001, epochs=5, minibatch=32, momentum=0.5))
    m_hyper2: TrainHyper = field(default_factory=lambda: TrainHyper(
        learning_rate=0.01, epochs=10, minibatch=32, momentum=0.5))
    refresh_net: bool = False
    bootstrap_fraction: float = 1.0
    # pairs/epochs for the bootstrap net and optional per-round refresh
    bootstrap_pairs: int = 4000
    net_hyper: TrainHyper = field(default_factory=lambda: TrainHyper(
        learning_rate=0.003, epochs=8, minibatch=128, momentum=0.9))
    refresh_pairs: int = 1000
    refresh_epochs: int = 2
    # held-out bound evaluation
    ais_chains: int = 64
    ais_dists: int = 1500
    bound_mc: int = 50

    def __post_init__(self):
        if self.rounds < 1 or self.e_samples_per_image < 1:
            raise ValueError("rounds and e_samples_per_image must be >= 1")
        if not (0.0 <= self.bootstrap_fraction <= 1.0):
            raise ValueError("bootstrap_fraction must be in [0, 1]")


@dataclass(frozen=True)
class _PosteriorSample:
    scene_index: int
    patch: np.ndarray
    gaze: Gaze
    potential: float


def _e_step_indexed(
    scenes: list[Canvas],
    model: GdbnModel,
    net: approxnet.ApproxNetParams,
    schedule: InferenceSchedule,
    seed: int,
    e_samples_per_image: int,
) -> list[_PosteriorSample]:
    rng = rng_stream(seed, "em.e_step")
    grid = PatchGrid.lattice(model.patch_width, model.patch_height)
    out: list[_PosteriorSample] = []
    k = min(e_samples_per_image, max(schedule.hmc_iterations, 1))
    for i, canvas in enumerate(scenes):
        scene_seed = int(rng.integers(2**62))
        state, trace = infer(canvas, model, net, schedule, scene_seed)
        if not np.all(np.isfinite(state.v.values)):
            warnings.warn(f"skipping scene {i}: non-finite inference state")
            continue
        tail = list(zip(trace.samples, trace.potentials))[schedule.approx_steps:]
        kept = tail[-k:] if tail else [(state.u, float("nan"))]
        for g, pot in kept:
            patch = extract_patch(canvas, grid, g)
            if np.all(np.isfinite(patch)):
                out.append(_PosteriorSample(i, patch, g, float(pot)))
    return out


def e_step(
    scenes: list[Canvas],
    model: GdbnModel,
    net: approxnet.ApproxNetParams,
    schedule: InferenceSchedule,
    seed: int,
    e_samples_per_image: int = 1,
) -> list[tuple[np.ndarray, Gaze]]:
    """Posterior samples of (patch, gaze) from each scene's chain tail."""
    samples = _e_step_indexed(scenes, model, net, schedule, seed,
                              e_samples_per_image)
    return [(s.patch, s.gaze) for s in samples]


def m_step(
    samples: list[np.ndarray] | np.ndarray,
    model: GdbnModel,
    config: EmConfig,
) -> GdbnModel:
    """Continue GDBN training on sampled patches (warm start both layers)."""
    patches = np.asarray(samples, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] == 0:
        raise ValueError("samples must be a nonempty (N, D) matrix")
    return gdbn.greedy_train(
        patches, config.m_hyper1, config.m_hyper2,
        model.patch_width, model.patch_height, model.channels, model0=model)


def _refresh_net(
    net: approxnet.ApproxNetParams,
    scenes: list[Canvas],
    samples: list[_PosteriorSample],
    model: GdbnModel,
    config: EmConfig,
    seed: int,
) -> approxnet.ApproxNetParams:
    """Fine-tune the net on high-confidence pseudo-labels (U below median)."""
    pots = np.array([s.potential for s in samples])
    finite = pots[np.isfinite(pots)]
    if finite.size == 0:
        return net
    cutoff = float(np.median(finite))
    confident = [(scenes[s.scene_index], s.gaze) for s in samples
                 if np.isfinite(s.potential) and s.potential <= cutoff]
    if not confident:
        return net
    canonical = CanonicalImage(model.mean_patch, model.patch_width,
                               model.patch_height, model.channels)
    pairs = approxnet.make_training_pairs(
        confident, canonical, approxnet.JitterRanges(), config.refresh_pairs, seed)
    hyper = TrainHyper(
        learning_rate=config.net_hyper.learning_rate * 0.3,
        epochs=config.refresh_epochs,
        minibatch=config.net_hyper.minibatch,
        momentum=config.net_hyper.momentum,
        seed=seed,
    )
    refreshed, _ = approxnet.sgd_train(pairs, hyper, params0=net)
    return refreshed


def run_em(
    model: GdbnModel,
    labeled_bootstrap: list[tuple[Canvas, Gaze]],
    unlabeled: list[Canvas],
    config: EmConfig,
    seed: int,
    schedule: InferenceSchedule | None = None,
    net: approxnet.ApproxNetParams | None = None,
    heldout_patches: np.ndarray | None = None,
    true_gazes: list[Gaze] | None = None,
    out_dir=None,
) -> tuple[GdbnModel, approxnet.ApproxNetParams, list[dict]]:
    """Alternate E and M steps from a pretrained model.

    The ConvNet is bootstrapped from labeled scenes unless a trained net is
    passed in. The report holds one row per round: sample count, mean IOU
    against true_gazes when given, and the held-out variational bound when
    heldout_patches is given (log Z re-estimated by AIS each round).
    """
    rng = rng_stream(seed, "em.run")
    if schedule is None:
        schedule = InferenceSchedule()
    if net is None:
        if not labeled_bootstrap:
            raise ValueError("labeled_bootstrap required when net is untrained")
        n_boot = max(1, int(round(len(labeled_bootstrap) * config.bootstrap_fraction)))
        boot_scenes = labeled_bootstrap[:n_boot]
        canonical = CanonicalImage(model.mean_patch, model.patch_width,
                                   model.patch_height, model.channels)
        pairs = approxnet.make_training_pairs(
            boot_scenes, canonical, approxnet.JitterRanges(),
            config.bootstrap_pairs, int(rng.integers(2**62)))
        net, _ = approxnet.sgd_train(pairs, config.net_hyper,
                                     channels=model.channels)

    grid = PatchGrid.lattice(model.patch_width, model.patch_height)
    report: list[dict] = []
    for rnd in range(config.rounds):
        e_seed = int(rng.integers(2**62))
        samples = _e_step_indexed(unlabeled, model, net, schedule, e_seed,
                                  config.e_samples_per_image)
        if not samples:
            raise RuntimeError(f"E-step produced no samples at round {rnd}")
        patches = np.stack([s.patch for s in samples])
        model = m_step(patches, model, config)

        row: dict = {"round": rnd, "n_samples": len(samples)}
        if true_gazes is not None:
            from .bench import gaze_iou  # local import avoids a cycle
            ious = [gaze_iou(s.gaze, true_gazes[s.scene_index], grid)
                    for s in samples]
            row["mean_iou"] = float(np.mean(ious))
        else:
            row["mean_iou"] = float("nan")
        if heldout_patches is not None:
            est = gdbn.ais_log_z(model.layer2, config.ais_chains,
                                 config.ais_dists, int(rng.integers(2**62)))
            mean, se = gdbn.bound_over_set(model, heldout_patches,
                                           config.bound_mc, est.log_z,
                                           seed=int(rng.integers(2**62)))
            row["heldout_bound_nats"] = mean
            row["stderr"] = se
        else:
            row["heldout_bound_nats"] = float("nan")
            row["stderr"] = float("nan")
        report.append(row)

        if out_dir is not None:
            gdbn.save_model(os.path.join(out_dir, f"model_round{rnd}.agen"), model)
        if config.refresh_net and rnd + 1 < config.rounds:
            net = _refresh_net(net, unlabeled, samples, model, config,
                               int(rng.integers(2**62)))
    return model, net, report


def write_report_csv(path, report: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("round,n_samples,mean_iou,heldout_bound_nats,stderr\n")
        for r in report:
            fh.write(f"{r['round']},{r['n_samples']},{r['mean_iou']:.6f},"
                     f"{r['heldout_bound_nats']:.6f},{r['stderr']:.6f}\n")
