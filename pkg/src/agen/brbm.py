"""Binary-binary RBM (the top layer), trained with FPCD.

Joint: p(h1, h2) prop. exp(b2.h1 + c2.h2 + h1.W2.h2); marginalizing h2
gives the free energy

    F(h1) = -b2.h1 - sum_j softplus((h1 W2)_j + c2_j),   log p*(h1) = -F(h1).

FPCD keeps persistent fantasy particles whose Gibbs transitions use
W2 + fast_W; fast_W decays geometrically and receives the same gradient as
W2 scaled by fast_lr. With fast_lr = 0 and fast_decay = 0 the trainer is
plain PCD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grbm import TrainHyper
from .util import rng_stream, sigmoid, softplus

__all__ = ["BrbmParams", "free_energy", "gibbs_step", "fpcd_train"]


@dataclass
class BrbmParams:
    """W2: (H1, H2); b2: (H1,); c2: (H2,); fast_W: training-time device."""

    W2: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    fast_W: np.ndarray | None = None
    fast_decay: float = 0.95

    def __post_init__(self):
        h1, h2 = self.W2.shape
        if self.b2.shape != (h1,) or self.c2.shape != (h2,):
            raise ValueError("parameter shapes inconsistent")
        if self.fast_W is None:
            self.fast_W = np.zeros_like(self.W2)
        elif self.fast_W.shape != self.W2.shape:
            raise ValueError("fast_W shape mismatch")

    @property
    def n_visible(self) -> int:
        return self.W2.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> "BrbmParams":
        return BrbmParams(self.W2.copy(), self.b2.copy(), self.c2.copy(),
                          self.fast_W.copy(), self.fast_decay)


def free_energy(h1: np.ndarray, params: BrbmParams) -> np.ndarray | float:
    """F(h1); accepts (H1,) or (N, H1), returning scalar or (N,)."""
    h1 = np.asarray(h1, dtype=np.float64)
    if h1.shape[-1] != params.n_visible:
        raise ValueError("dimension mismatch")
    f = -(h1 @ params.b2) - softplus(h1 @ params.W2 + params.c2).sum(axis=-1)
    return float(f) if h1.ndim == 1 else f


def _weights(params: BrbmParams, use_fast: bool) -> np.ndarray:
    return params.W2 + params.fast_W if use_fast else params.W2


def hidden_conditional(h1: np.ndarray, params: BrbmParams, use_fast: bool = False) -> np.ndarray:
    return sigmoid(np.asarray(h1, float) @ _weights(params, use_fast) + params.c2)


def visible_conditional(h2: np.ndarray, params: BrbmParams, use_fast: bool = False) -> np.ndarray:
    return sigmoid(np.asarray(h2, float) @ _weights(params, use_fast).T + params.b2)


def gibbs_step(
    h1: np.ndarray,
    params: BrbmParams,
    rng: np.random.Generator,
    use_fast: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """One alternation h2' ~ p(h2|h1) then h1' ~ p(h1|h2'); batch-friendly."""
    q2 = hidden_conditional(h1, params, use_fast)
    h2 = (rng.random(q2.shape) < q2).astype(np.float64)
    q1 = visible_conditional(h2, params, use_fast)
    h1_new = (rng.random(q1.shape) < q1).astype(np.float64)
    return h1_new, h2


def _init_params(data: np.ndarray, n_hidden: int, rng: np.random.Generator) -> BrbmParams:
    h1 = data.shape[1]
    w = 0.01 * rng.standard_normal((h1, n_hidden))
    p = np.clip(data.mean(axis=0), 0.01, 0.99)
    b2 = np.log(p / (1.0 - p))
    return BrbmParams(w, b2, np.zeros(n_hidden))


def fpcd_train(
    data: np.ndarray,
    hyper: TrainHyper,
    n_fantasy: int = 64,
    n_hidden: int | None = None,
    fast_lr: float | None = None,
    fast_decay: float = 0.95,
    params0: BrbmParams | None = None,
    monitor=None,
) -> BrbmParams:
    """Fast Persistent CD; deterministic given hyper.seed.

    data entries may be probabilities in [0, 1] (mean-field activations).
    fast_lr defaults to the regular learning rate. fast_lr=0 with
    fast_decay=0 reduces the trainer to plain PCD.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("data must be a nonempty (N, H1) matrix")
    if np.any((data < 0) | (data > 1)):
        raise ValueError("data entries must lie in [0, 1]")
    rng = rng_stream(hyper.seed, "brbm.fpcd")
    if params0 is not None:
        params = params0.copy()
    else:
        if n_hidden is None:
            raise ValueError("n_hidden required without params0")
        params = _init_params(data, n_hidden, rng)
    params.fast_decay = fast_decay
    if fast_lr is None:
        fast_lr = hyper.learning_rate

    vel = {name: np.zeros_like(getattr(params, name))
           for name in ("W2", "b2", "c2")}
    fantasy = (rng.random((n_fantasy, params.n_visible)) < 0.5).astype(np.float64)
    n = data.shape[0]
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            v0 = data[perm[start : start + hyper.minibatch]]
            m = v0.shape[0]
            q0 = hidden_conditional(v0, params)
            # fantasy transition uses the fast weights
            fantasy, _ = gibbs_step(fantasy, params, rng, use_fast=True)
            qf = hidden_conditional(fantasy, params)
            grads = {
                "W2": (v0.T @ q0) / m - (fantasy.T @ qf) / n_fantasy
                - hyper.weight_decay * params.W2,
                "b2": v0.mean(0) - fantasy.mean(0),
                "c2": q0.mean(0) - qf.mean(0),
            }
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(
                        f"non-finite FPCD gradient for {name} at epoch {epoch}"
                    )
                vel[name] = hyper.momentum * vel[name] + hyper.learning_rate * g
                arr = getattr(params, name)
                arr += vel[name]
            params.fast_W = params.fast_decay * params.fast_W + fast_lr * grads["W2"]
        if monitor is not None:
            monitor(epoch, float(np.mean(free_energy(data, params))))
    return params


def to_tensors(params: BrbmParams, prefix: str = "layer2.") -> dict[str, np.ndarray]:
    # fast_W is a training-time device and is not part of the model
    return {prefix + "W2": params.W2, prefix + "b2": params.b2, prefix + "c2": params.c2}


def from_tensors(tensors: dict[str, np.ndarray], prefix: str = "layer2.") -> BrbmParams:
    return BrbmParams(
        W2=tensors[prefix + "W2"],
        b2=tensors[prefix + "b2"],
        c2=tensors[prefix + "c2"],
    )
