"""Synthetic datasets with known intrinsic dimension, density or cluster labels.

Every generator takes ``n`` and ``seed`` and returns a :class:`Synthetic`, so results
are reproducible without any external data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from datamanifold.exceptions import PreconditionError


@dataclass(frozen=True)
class Synthetic:
    points: np.ndarray
    labels: np.ndarray | None = None
    log_density: np.ndarray | None = None
    intrinsic_dim: float | None = None


def uniform(n: int, d: int = 2, seed: int = 0) -> Synthetic:
    """Uniform samples in the unit hypercube ``[0, 1]^d`` (density 1)."""
    pts = np.random.default_rng(seed).random((n, d))
    return Synthetic(pts, None, np.zeros(n), float(d))


def gaussian_1d(n: int, seed: int = 0) -> Synthetic:
    """Standard normal samples on the line with their exact log-density."""
    x = np.random.default_rng(seed).standard_normal(n)
    return Synthetic(x[:, None], None, -0.5 * x**2 - 0.5 * np.log(2 * np.pi), 1.0)


def gaussian_mix(n: int, seed: int = 0, separation: float = 5.0) -> Synthetic:
    """Equal mixture of two unit-variance 2D Gaussians ``separation`` apart."""
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < 0.5).astype(np.int64)
    centers = np.array([[0.0, 0.0], [separation, 0.0]])
    pts = centers[labels] + rng.standard_normal((n, 2))
    sq = ((pts[:, None, :] - centers[None]) ** 2).sum(axis=2)
    logp = logsumexp(-0.5 * sq, axis=1) + np.log(0.5) - np.log(2 * np.pi)
    return Synthetic(pts, labels, logp, 2.0)


def spiral(n: int, seed: int = 0, turns: float = 3.0, noise: float = 0.01) -> Synthetic:
    """Noisy Archimedean spiral in the plane; a one-dimensional manifold."""
    rng = np.random.default_rng(seed)
    t = np.sqrt(rng.random(n)) * turns * 2 * np.pi
    pts = np.column_stack([t * np.cos(t), t * np.sin(t)]) / (turns * 2 * np.pi)
    pts += noise * rng.standard_normal(pts.shape)
    return Synthetic(pts, None, None, 1.0)


# centers of the strip mixture in (angle along the strip, offset across it)
MOBIUS_CENTERS = np.array(
    [[2 * np.pi * c / 8, 0.45 * (-1) ** c] for c in range(8)]
)
MOBIUS_SIGMA = np.array([0.22, 0.14])


def mobius(
    n: int = 10_000,
    seed: int = 0,
    dim: int = 50,
    noise: float = 1e-4,
    radius: float = 1.0,
    half_width: float = 0.5,
) -> Synthetic:
    """Eight-component Gaussian mixture on a Möbius strip, embedded in ``dim`` dimensions.

    Points are drawn in strip coordinates ``(u, v)``, mapped onto the strip in 3D,
    padded with zero columns and perturbed by isotropic noise of amplitude ``noise``.
    ``labels`` are the generating components.
    """
    if dim < 3:
        raise PreconditionError("the strip needs at least three embedding dimensions")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 8, size=n)
    uv = MOBIUS_CENTERS[labels] + MOBIUS_SIGMA * rng.standard_normal((n, 2))
    u, v = uv[:, 0], uv[:, 1] * half_width
    # u -> u + 2 pi maps (u, v) onto (u, -v), so no wrapping is needed
    r = radius + v * np.cos(u / 2)
    pts = np.zeros((n, dim))
    pts[:, 0] = r * np.cos(u)
    pts[:, 1] = r * np.sin(u)
    pts[:, 2] = v * np.sin(u / 2)
    pts += noise * rng.standard_normal(pts.shape)
    return Synthetic(pts, labels.astype(np.int64), None, 2.0)


GENERATORS = {
    "uniform-d": uniform,
    "gaussian-mix": gaussian_mix,
    "spiral": spiral,
    "mobius": mobius,
}


def generate(name: str, n: int | None = None, seed: int = 0, **kwargs) -> Synthetic:
    """Dispatch by name; ``uniform-d`` accepts ``d`` (default 2)."""
    if name not in GENERATORS:
        raise PreconditionError(f"unknown demo {name!r}; choose from {sorted(GENERATORS)}")
    if n is None:
        n = 10_000 if name == "mobius" else 2000
    return GENERATORS[name](n, seed=seed, **kwargs)
