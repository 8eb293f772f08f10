"""Hamiltonian Monte Carlo over the 4-D gaze posterior.

Potential: U(u) = 1/2 sum_i (x_i(u) - v_i)^2 / sigma_i^2 (flat prior on u).
Dynamics: leapfrog with per-coordinate masses, du/dt = M^-1 r, and a
Metropolis accept/reject on H = U + K so the chain is exact even where the
interpolated image gradients are approximate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .image import Canvas, gradient_images
from .util import rng_stream
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch, patch_gradient

__all__ = [
    "HmcConfig",
    "HmcTrace",
    "default_config",
    "potential",
    "potential_grad",
    "leapfrog",
    "run_chain",
    "run",
]

GRAD_BLUR_SIGMA = 1.0


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.02
    n_leapfrog: int = 20
    mass: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    n_iterations: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (self.step_size > 0):
            raise ValueError("step_size must be > 0")
        if any(m <= 0 for m in self.mass):
            raise ValueError("masses must be > 0")


def default_config(patch_width: int = 24, seed: int = 0) -> HmcConfig:
    """Masses put (dx, dy) in quarter-patch-width units; (a, b) unit mass."""
    m_t = (4.0 / patch_width) ** 2
    return HmcConfig(step_size=0.02, n_leapfrog=20, mass=(1.0, 1.0, m_t, m_t),
                     n_iterations=5, seed=seed)


@dataclass
class HmcTrace:
    samples: list[Gaze]
    potentials: list[float]
    accept_flags: list[bool]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags)) if self.accept_flags else 0.0

    def extend(self, other: "HmcTrace") -> None:
        self.samples.extend(other.samples)
        self.potentials.extend(other.potentials)
        self.accept_flags.extend(other.accept_flags)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "a", "b", "dx", "dy", "U", "accepted"])
            for i, (g, u_val, acc) in enumerate(
                zip(self.samples, self.potentials, self.accept_flags)
            ):
                w.writerow([i, repr(g.a), repr(g.b), repr(g.dx), repr(g.dy),
                            repr(float(u_val)), int(acc)])


def potential(u: Gaze, v: CanonicalImage, canvas: Canvas, sigma: np.ndarray) -> float:
    """U(u) = 1/2 ||(x(u) - v)/sigma||^2."""
    grid = PatchGrid.lattice(v.width, v.height)
    x = extract_patch(canvas, grid, u)
    return float(0.5 * np.sum(((x - v.values) / sigma) ** 2))


def potential_grad(u: Gaze, v: CanonicalImage, canvas: Canvas, sigma: np.ndarray) -> np.ndarray:
    """dU/du = sum_i (x_i - v_i)/sigma_i^2 * patch_gradient row i."""
    grid = PatchGrid.lattice(v.width, v.height)
    x = extract_patch(canvas, grid, u)
    g = patch_gradient(canvas, grid, u)
    return g.T @ ((x - v.values) / sigma**2)


def leapfrog(
    u: np.ndarray,
    r: np.ndarray,
    step_size: float,
    n_steps: int,
    grad_fn,
    inv_mass: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Half-kick / drift / kick integrator; returns (u', r', finite_ok)."""
    u = u.astype(np.float64).copy()
    r = r.astype(np.float64).copy()
    g = grad_fn(u)
    r -= 0.5 * step_size * g
    for i in range(n_steps):
        u += step_size * inv_mass * r
        g = grad_fn(u)
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(u)):
            return u, r, False
        if i < n_steps - 1:
            r -= step_size * g
    r -= 0.5 * step_size * g
    return u, r, True


def run_chain(
    u0: np.ndarray,
    potential_fn,
    grad_fn,
    config: HmcConfig,
    rng: np.random.Generator | None = None,
) -> HmcTrace:
    """Generic HMC over a 4-vector state; one sample per iteration."""
    if rng is None:
        rng = rng_stream(config.seed, "hmc")
    mass = np.asarray(config.mass, dtype=np.float64)
    inv_mass = 1.0 / mass
    sqrt_mass = np.sqrt(mass)
    u = np.asarray(u0, dtype=np.float64).copy()
    u_pot = float(potential_fn(u))
    trace = HmcTrace([], [], [])
    for _ in range(config.n_iterations):
        r = sqrt_mass * rng.standard_normal(4)
        h0 = u_pot + 0.5 * np.sum(r * r * inv_mass)
        u_new, r_new, ok = leapfrog(
            u, r, config.step_size, config.n_leapfrog, grad_fn, inv_mass
        )
        accepted = False
        if ok:
            pot_new = float(potential_fn(u_new))
            h1 = pot_new + 0.5 * np.sum(r_new * r_new * inv_mass)
            if np.isfinite(h1) and np.log(rng.random()) < h0 - h1:
                u, u_pot = u_new, pot_new
                accepted = True
        trace.samples.append(Gaze.from_vector(u))
        trace.potentials.append(u_pot)
        trace.accept_flags.append(accepted)
    return trace


def run(
    u0: Gaze,
    v: CanonicalImage,
    canvas: Canvas,
    sigma: np.ndarray,
    config: HmcConfig,
    rng: np.random.Generator | None = None,
) -> HmcTrace:
    """HMC on the gaze posterior for canonical image v over the canvas."""
    if canvas.grad_x is None:
        gradient_images(canvas, GRAD_BLUR_SIGMA)
    sigma = np.asarray(sigma, dtype=np.float64)

    def potential_fn(vec: np.ndarray) -> float:
        return potential(Gaze.from_vector(vec), v, canvas, sigma)

    def grad_fn(vec: np.ndarray) -> np.ndarray:
        return potential_grad(Gaze.from_vector(vec), v, canvas, sigma)

    return run_chain(u0.as_vector(), potential_fn, grad_fn, config, rng=rng)
