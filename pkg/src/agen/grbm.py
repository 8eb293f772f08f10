"""Gaussian Restricted Boltzmann Machine with learned per-pixel variances.

Energy of a joint configuration (v real, h binary):

    E(v, h) = 1/2 sum_i (v_i - b_i)^2 / sigma_i^2 - sum_j c_j h_j
              - sum_ij W_ij v_i h_j

Conditionals (consistent with this energy for any sigma):

    p(h_j = 1 | v) = sigmoid(sum_i W_ij v_i + c_j)
    p(v_i | h)     = Normal(b_i + sigma_i^2 sum_j W_ij h_j, sigma_i^2)

Note the hidden activation uses v directly, not v/sigma^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .util import rng_stream, sigmoid

__all__ = ["GrbmParams", "TrainHyper", "energy", "hidden_conditional",
           "visible_conditional", "sample_hidden", "sample_visible", "cd_train"]

LOG_SIGMA_MIN = np.log(1e-3)
LOG_SIGMA_MAX = np.log(10.0)


@dataclass(frozen=True)
class TrainHyper:
    """Minibatch training hyperparameters (shared by all trainers)."""

    learning_rate: float
    epochs: int
    minibatch: int = 32
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class GrbmParams:
    """W: (D, H); b: (D,); c: (H,); log_sigma: (D,)."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        d, h = self.W.shape
        if self.b.shape != (d,) or self.c.shape != (h,) or self.log_sigma.shape != (d,):
            raise ValueError("parameter shapes inconsistent")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def copy(self) -> "GrbmParams":
        return GrbmParams(self.W.copy(), self.b.copy(), self.c.copy(),
                          self.log_sigma.copy())


def energy(v: np.ndarray, h: np.ndarray, params: GrbmParams) -> float:
    """E(v, h) per the module docstring."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (params.n_visible,) or h.shape != (params.n_hidden,):
        raise ValueError("dimension mismatch")
    sig2 = np.exp(2.0 * params.log_sigma)
    quad = 0.5 * np.sum((v - params.b) ** 2 / sig2)
    return float(quad - params.c @ h - v @ params.W @ h)


def hidden_conditional(v: np.ndarray, params: GrbmParams) -> np.ndarray:
    """p(h_j = 1 | v); accepts a (D,) vector or (N, D) batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise ValueError("dimension mismatch")
    return sigmoid(v @ params.W + params.c)


def visible_conditional(h: np.ndarray, params: GrbmParams) -> tuple[np.ndarray, np.ndarray]:
    """(mu, sigma) of p(v | h); accepts (H,) or (N, H)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_hidden:
        raise ValueError("dimension mismatch")
    sig2 = np.exp(2.0 * params.log_sigma)
    mu = params.b + sig2 * (h @ params.W.T)
    return mu, np.broadcast_to(params.sigma, mu.shape)


def sample_hidden(v: np.ndarray, params: GrbmParams, rng: np.random.Generator) -> np.ndarray:
    q = hidden_conditional(v, params)
    return (rng.random(q.shape) < q).astype(np.float64)


def sample_visible(h: np.ndarray, params: GrbmParams, rng: np.random.Generator) -> np.ndarray:
    mu, sig = visible_conditional(h, params)
    return mu + sig * rng.standard_normal(mu.shape)


def _init_params(data: np.ndarray, n_hidden: int, rng: np.random.Generator) -> GrbmParams:
    # W small-random; b/sigma moment-matched to the data; c zero
    d = data.shape[1]
    w = 0.01 * rng.standard_normal((d, n_hidden))
    b = data.mean(axis=0)
    std = data.std(axis=0)
    log_sigma = np.clip(np.log(np.maximum(std, 1e-12)), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return GrbmParams(w, b, np.zeros(n_hidden), log_sigma)


def reconstruction_error(data: np.ndarray, params: GrbmParams) -> float:
    """Mean-field reconstruction: mean ||v - mu(q(v))||^2 / D."""
    q = hidden_conditional(data, params)
    mu, _ = visible_conditional(q, params)
    return float(np.mean(np.sum((data - mu) ** 2, axis=1)) / params.n_visible)


def cd_train(
    data: np.ndarray,
    k: int,
    hyper: TrainHyper,
    n_hidden: int | None = None,
    params0: GrbmParams | None = None,
    monitor=None,
) -> GrbmParams:
    """Minibatch CD-k training; deterministic given hyper.seed.

    Pass params0 to warm-start (n_hidden is then ignored); otherwise a fresh
    model with n_hidden units is initialized from the data moments.
    monitor, if given, is called as monitor(epoch, reconstruction_error).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("data must be a nonempty (N, D) matrix")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = rng_stream(hyper.seed, "grbm.cd")
    if params0 is not None:
        params = params0.copy()
    else:
        if n_hidden is None:
            raise ValueError("n_hidden required without params0")
        params = _init_params(data, n_hidden, rng)

    vel = {name: np.zeros_like(getattr(params, name))
           for name in ("W", "b", "c", "log_sigma")}
    n = data.shape[0]
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            v0 = data[perm[start : start + hyper.minibatch]]
            m = v0.shape[0]
            q0 = hidden_conditional(v0, params)
            h = (rng.random(q0.shape) < q0).astype(np.float64)
            vk, qk = v0, q0
            for _ in range(k):
                vk = sample_visible(h, params, rng)
                qk = hidden_conditional(vk, params)
                h = (rng.random(qk.shape) < qk).astype(np.float64)
            sig2 = np.exp(2.0 * params.log_sigma)
            grads = {
                "W": (v0.T @ q0 - vk.T @ qk) / m - hyper.weight_decay * params.W,
                "b": ((v0 - params.b) / sig2).mean(0) - ((vk - params.b) / sig2).mean(0),
                "c": q0.mean(0) - qk.mean(0),
                "log_sigma": ((v0 - params.b) ** 2 / sig2).mean(0)
                - ((vk - params.b) ** 2 / sig2).mean(0),
            }
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(
                        f"non-finite CD gradient for {name} at epoch {epoch}"
                    )
                vel[name] = hyper.momentum * vel[name] + hyper.learning_rate * g
                arr = getattr(params, name)
                arr += vel[name]
            np.clip(params.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX,
                    out=params.log_sigma)
        if monitor is not None:
            monitor(epoch, reconstruction_error(data, params))
    return params


def to_tensors(params: GrbmParams, prefix: str = "layer1.") -> dict[str, np.ndarray]:
    return {
        prefix + "W": params.W,
        prefix + "b": params.b,
        prefix + "c": params.c,
        prefix + "log_sigma": params.log_sigma,
    }


def from_tensors(tensors: dict[str, np.ndarray], prefix: str = "layer1.") -> GrbmParams:
    return GrbmParams(
        W=tensors[prefix + "W"],
        b=tensors[prefix + "b"],
        c=tensors[prefix + "c"],
        log_sigma=tensors[prefix + "log_sigma"],
    )
