"""Seed lineage and Brownian increments.

Every random stream is addressed by ``(base_seed, scenario, purpose, block)``
through :class:`numpy.random.SeedSequence` spawn keys, so a stream never
depends on how many other streams exist or in which order they are drawn.
Particles are grouped in fixed blocks of :data:`BLOCK` columns; particle
``i`` always reads column ``i % BLOCK`` of block ``i // BLOCK``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK = 1024

PURPOSES = {
    "W0": 0,
    "B0": 1,
    "idio_W": 2,
    "idio_B": 3,
    "x0": 4,
    "sigma0": 5,
}


def stream(base_seed: int, scenario: int, purpose: str, block: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(scenario), PURPOSES[purpose], int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def particle_uniforms(base_seed: int, scenario: int, purpose: str, n: int) -> np.ndarray:
    """One uniform per particle, each fixed by its index alone."""
    n_blocks = -(-n // BLOCK)
    parts = [stream(base_seed, scenario, purpose, b).random(BLOCK) for b in range(n_blocks)]
    return np.concatenate(parts)[:n] if parts else np.empty(0)


class IdioStream:
    """Per-particle Brownian increments, produced a few time steps at a time.

    ``refine`` fine sub-steps are drawn per coarse step and summed, so a
    coarse run and a ``refine``-times finer run see the same paths.
    """

    def __init__(self, base_seed: int, scenario: int, purpose: str, n: int, dt: float, refine: int = 1):
        self.n = n
        self.dt = dt
        self.refine = refine
        self._fine_sd = np.sqrt(dt / refine)
        n_blocks = -(-n // BLOCK)
        self._gens = [stream(base_seed, scenario, purpose, b) for b in range(n_blocks)]

    def next(self, m: int) -> np.ndarray:
        """Increments for the next ``m`` steps, shape ``(m, n)``."""
        rows = m * self.refine
        z = np.concatenate([g.standard_normal((rows, BLOCK)) for g in self._gens], axis=1)[:, : self.n]
        if self.refine > 1:
            z = z.reshape(m, self.refine, self.n).sum(axis=1)
        return self._fine_sd * z


@dataclass
class NoiseBundle:
    """Common-noise increments of one scenario plus the lineage for the rest.

    ``common_B0 = rho3 * common_W0 + sqrt(1 - rho3^2) * (independent increments)``.
    """

    dt: float
    n_steps: int
    common_W0: np.ndarray
    common_B0: np.ndarray
    base_seed: int
    scenario: int
    refine: int = 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def seed_lineage(self) -> dict:
        return {"base_seed": self.base_seed, "scenario": self.scenario, "refine": self.refine}

    def idio(self, purpose: str, n: int) -> IdioStream:
        return IdioStream(self.base_seed, self.scenario, purpose, n, self.dt, self.refine)

    def coarsen(self, factor: int) -> "NoiseBundle":
        """Same Brownian paths sampled on a ``factor``-times coarser grid."""
        if self.n_steps % factor:
            raise ValueError("n_steps must be divisible by the coarsening factor")
        m = self.n_steps // factor
        return NoiseBundle(
            dt=self.dt * factor,
            n_steps=m,
            common_W0=self.common_W0.reshape(m, factor).sum(axis=1),
            common_B0=self.common_B0.reshape(m, factor).sum(axis=1),
            base_seed=self.base_seed,
            scenario=self.scenario,
            refine=self.refine * factor,
        )


def make_noise(base_seed: int, scenario: int, dt: float, n_steps: int, rho3: float = 0.0) -> NoiseBundle:
    sd = np.sqrt(dt)
    dW0 = sd * stream(base_seed, scenario, "W0").standard_normal(n_steps)
    indep = sd * stream(base_seed, scenario, "B0").standard_normal(n_steps)
    dB0 = rho3 * dW0 + np.sqrt(1.0 - rho3**2) * indep
    return NoiseBundle(dt=dt, n_steps=n_steps, common_W0=dW0, common_B0=dB0,
                       base_seed=base_seed, scenario=scenario)
