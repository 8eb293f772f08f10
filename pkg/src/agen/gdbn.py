"""2-layer Gaussian Deep Belief Network.

p(v, h1, h2) = p(v | h1) p(h1, h2): a Gaussian RBM's visible conditional
under a binary-binary RBM prior on h1. Greedy training fits the layers in
sequence; evaluation uses a factorial variational bound with the top-layer
partition function estimated by annealed importance sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import brbm, container, grbm
from .grbm import TrainHyper
from .util import binary_entropy, log_sum_exp, rng_stream, sigmoid, softplus

__all__ = [
    "GdbnModel",
    "AisEstimate",
    "greedy_train",
    "sample",
    "variational_bound",
    "bound_over_set",
    "ais_log_z",
    "save_model",
    "load_model",
]


@dataclass
class GdbnModel:
    layer1: grbm.GrbmParams
    layer2: brbm.BrbmParams
    patch_width: int
    patch_height: int
    channels: int = 1

    def __post_init__(self):
        if self.layer1.n_hidden != self.layer2.n_visible:
            raise ValueError("layer1 hidden count must equal layer2 visible count")
        if self.layer1.n_visible != self.patch_width * self.patch_height * self.channels:
            raise ValueError("layer1 visible count must match patch geometry")

    @property
    def n_visible(self) -> int:
        return self.layer1.n_visible

    @property
    def mean_patch(self) -> np.ndarray:
        """The model's mean canonical image (visible biases)."""
        return self.layer1.b.copy()


@dataclass(frozen=True)
class AisEstimate:
    log_z: float
    log_z_ci_low: float
    log_z_ci_high: float
    n_chains: int
    n_distributions: int


def greedy_train(
    patches: np.ndarray,
    hyper1: TrainHyper,
    hyper2: TrainHyper,
    patch_width: int,
    patch_height: int,
    channels: int = 1,
    h1: int = 128,
    h2: int = 32,
    cd_k: int = 1,
    n_fantasy: int = 64,
    model0: GdbnModel | None = None,
    monitor=None,
) -> GdbnModel:
    """Layer-wise training: CD on layer 1, FPCD on layer 2.

    Layer 2 trains on the layer-1 hidden probabilities of the data. Pass
    model0 to warm-start both layers (sizes then come from model0).
    """
    patches = np.asarray(patches, dtype=np.float64)
    l1 = grbm.cd_train(
        patches, cd_k, hyper1, n_hidden=h1,
        params0=None if model0 is None else model0.layer1, monitor=monitor,
    )
    activations = grbm.hidden_conditional(patches, l1)
    l2 = brbm.fpcd_train(
        activations, hyper2, n_fantasy=n_fantasy, n_hidden=h2,
        params0=None if model0 is None else model0.layer2,
    )
    if model0 is not None:
        return GdbnModel(l1, l2, model0.patch_width, model0.patch_height,
                         model0.channels)
    return GdbnModel(l1, l2, patch_width, patch_height, channels)


def sample(model: GdbnModel, n: int, gibbs_steps: int, seed: int) -> np.ndarray:
    """Ancestral samples (n, D): top-layer Gibbs, then one top-down pass.

    The visible readout is the conditional mean (no pixel noise added).
    """
    if gibbs_steps < 1:
        raise ValueError("gibbs_steps must be >= 1")
    rng = rng_stream(seed, "gdbn.sample")
    h1 = (rng.random((n, model.layer2.n_visible)) < 0.5).astype(np.float64)
    h2 = None
    for _ in range(gibbs_steps):
        h1, h2 = brbm.gibbs_step(h1, model.layer2, rng)
    # top-down: resample h1 from the last h2, then mean visible readout
    q1 = brbm.visible_conditional(h2, model.layer2)
    h1 = (rng.random(q1.shape) < q1).astype(np.float64)
    mu, _ = grbm.visible_conditional(h1, model.layer1)
    return mu


def log_p_v_given_h1(v: np.ndarray, h1: np.ndarray, params: grbm.GrbmParams) -> np.ndarray:
    """log Normal(v; mu(h1), sigma^2) summed over pixels; h1 may be a batch."""
    mu, _ = grbm.visible_conditional(h1, params)
    sig2 = np.exp(2.0 * params.log_sigma)
    ll = -params.log_sigma.sum() - 0.5 * params.n_visible * np.log(2.0 * np.pi)
    return ll - 0.5 * np.sum((v - mu) ** 2 / sig2, axis=-1)


def variational_bound(
    model: GdbnModel,
    v: np.ndarray,
    n_mc: int,
    log_z: float,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte Carlo lower bound on log p(v) in nats.

    bound = E_q[log p(v|h1) - F(h1)] - log_z + entropy(q), with q the
    factorial posterior from the layer-1 hidden conditional and F the
    top-layer free energy.
    """
    if rng is None:
        rng = rng_stream(seed, "gdbn.bound")
    v = np.asarray(v, dtype=np.float64)
    q = grbm.hidden_conditional(v, model.layer1)
    h1 = (rng.random((n_mc, q.size)) < q).astype(np.float64)
    terms = log_p_v_given_h1(v, h1, model.layer1) - brbm.free_energy(h1, model.layer2)
    return float(terms.mean() - log_z + binary_entropy(q).sum())


def bound_over_set(
    model: GdbnModel, patches: np.ndarray, n_mc: int, log_z: float, seed: int = 0
) -> tuple[float, float]:
    """(mean, standard error) of the bound over a set of patches."""
    rng = rng_stream(seed, "gdbn.bound_set")
    vals = np.array(
        [variational_bound(model, v, n_mc, log_z, rng=rng) for v in patches]
    )
    n = len(vals)
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def ais_log_z(
    layer2: brbm.BrbmParams, n_chains: int, n_dists: int, seed: int
) -> AisEstimate:
    """Annealed importance sampling estimate of the top layer's log Z.

    Base distribution: the same visible biases with W2 = 0, c2 = 0, whose
    partition function is exact. The geometric path scales W2 and c2 by
    beta_k = k/n_dists; one Gibbs sweep per intermediate distribution.
    CI: +/- 3 sigma of log Z via the delta method on normalized weights.
    """
    if n_chains < 2 or n_dists < 2:
        raise ValueError("n_chains and n_dists must be >= 2")
    rng = rng_stream(seed, "gdbn.ais")
    w2, b2, c2 = layer2.W2, layer2.b2, layer2.c2
    h1_count, h2_count = w2.shape
    log_z_base = float(softplus(b2).sum() + h2_count * np.log(2.0))

    def log_p_star(h1: np.ndarray, beta: float) -> np.ndarray:
        return h1 @ b2 + softplus(beta * (h1 @ w2 + c2)).sum(axis=1)

    h1 = (rng.random((n_chains, h1_count)) < sigmoid(b2)).astype(np.float64)
    log_w = np.zeros(n_chains)
    betas = np.arange(n_dists + 1) / n_dists
    for k in range(1, n_dists + 1):
        log_w += log_p_star(h1, betas[k]) - log_p_star(h1, betas[k - 1])
        if k < n_dists:
            beta = betas[k]
            q2 = sigmoid(beta * (h1 @ w2 + c2))
            h2 = (rng.random(q2.shape) < q2).astype(np.float64)
            q1 = sigmoid(beta * (h2 @ w2.T) + b2)
            h1 = (rng.random(q1.shape) < q1).astype(np.float64)
    if not np.any(np.isfinite(log_w)):
        raise FloatingPointError("all AIS weights degenerate")
    log_ratio = log_sum_exp(log_w) - np.log(n_chains)
    log_z = log_z_base + float(log_ratio)
    # delta method: sd(log Z-hat) ~ relative s.e. of the weight mean
    norm = np.exp(log_w - log_w.max())
    rel_se = float(norm.std(ddof=1) / norm.mean() / np.sqrt(n_chains))
    return AisEstimate(
        log_z=log_z,
        log_z_ci_low=log_z - 3.0 * rel_se,
        log_z_ci_high=log_z + 3.0 * rel_se,
        n_chains=n_chains,
        n_distributions=n_dists,
    )


def save_model(path, model: GdbnModel) -> None:
    tensors = grbm.to_tensors(model.layer1)
    tensors.update(brbm.to_tensors(model.layer2))
    tensors["geometry"] = np.array(
        [model.patch_width, model.patch_height, model.channels], dtype=np.float64
    )
    container.save_tensors(path, tensors)


def load_model(path) -> GdbnModel:
    tensors = container.load_tensors(path)
    geom = tensors["geometry"].astype(int)
    return GdbnModel(
        layer1=grbm.from_tensors(tensors),
        layer2=brbm.from_tensors(tensors),
        patch_width=int(geom[0]),
        patch_height=int(geom[1]),
        channels=int(geom[2]),
    )
