"""Counter-based random streams keyed by (seed, trajectory, step).

Every (seed, trajectory, channel) triple owns an independent Philox stream.
Step ``k`` of a trajectory consumes the k-th row of that stream, and numpy
fills arrays sequentially, so the value at step ``k`` does not depend on how
many steps were generated in total, on other trajectories, or on which
worker produced it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .system_model import matvec

CHANNEL_NOISE = 0
CHANNEL_P1, CHANNEL_P2, CHANNEL_P3, CHANNEL_P4 = 1, 2, 3, 4
CHANNEL_X0 = 5


@dataclass(frozen=True)
class StreamKey:
    seed: int
    traj: int
    step: int


def channel_generator(seed, traj, channel):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(traj), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


def _noise_factor(noise):
    cov = noise.covariance
    w, U = np.linalg.eigh(cov)
    return U * np.sqrt(np.clip(w, 0.0, None))


def noise_block(noise, seed, traj, steps):
    """First ``steps`` noise draws of one trajectory, shape (steps, q)."""
    gen = channel_generator(seed, traj, CHANNEL_NOISE)
    q = noise.dim
    if noise.kind == "gaussian":
        z = gen.standard_normal((steps, q))
        return noise.mean + matvec(_noise_factor(noise), z)
    if noise.kind == "uniform_box":
        u = gen.random((steps, q))
        return noise.mean + noise.half_widths * (2.0 * u - 1.0)
    u = gen.random(steps)
    idx = np.searchsorted(np.cumsum(noise.probs), u, side="right")
    idx = np.minimum(idx, noise.probs.size - 1)
    return noise.support[idx]


def sample_noise(noise, key: StreamKey):
    return noise_block(noise, key.seed, key.traj, key.step + 1)[-1]


def ball_block(seed, traj, channel, steps, dim, radius):
    """Uniform draws strictly inside the open ball of the given radius."""
    u = channel_generator(seed, traj, channel).random((steps, dim + 1))
    if dim == 0:
        return np.zeros((steps, 0))
    z = ndtri(np.clip(u[:, :dim], 1e-300, 1.0 - 1e-16))
    nrm = np.linalg.norm(z, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    r = radius * (1.0 - 1e-9) * u[:, dim:] ** (1.0 / dim)
    return z / nrm * r


def ball_points(seed, n_points, dim, radius, channel=CHANNEL_X0):
    """Initial states uniform in the open ball; one stream per point index."""
    return np.stack([ball_block(seed, i, channel, 1, dim, radius)[0] for i in range(n_points)])
