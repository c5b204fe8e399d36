"""Droplet soaking kinematics and the molecule release source.

The droplet is a thin cylinder of fixed height ``h0`` whose footprint
shrinks exponentially as liquid soaks into the agar at velocity ``K``:

    A(t) = A0 exp(-K t / h0),   r(t) = r0 exp(-K t / (2 h0))

Molecules leave with the liquid, at ``C_m K A(t)`` mol/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def initial_height(volume, area):
    """Height of a cylindrical droplet of the given volume and footprint."""
    if not volume > 0 or not area > 0:
        raise ValueError(f"volume and area must be positive (got {volume}, {area})")
    return volume / area


def _check_time(t):
    if t < 0:
        raise ValueError(f"negative time {t}")


@dataclass(frozen=True)
class SoakingModel:
    initial_area_m2: float
    initial_height_m: float
    soaking_rate_m_s: float
    concentration_mol_m3: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("initial_area_m2", "initial_height_m", "concentration_mol_m3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        # K = 0 is a droplet that never soaks in: nothing is ever released.
        if not self.soaking_rate_m_s >= 0:
            raise ValueError("soaking_rate_m_s must be >= 0")

    @classmethod
    def from_config(cls, config):
        d = config.droplet
        area = d.initial_area_m2
        return cls(
            initial_area_m2=area,
            initial_height_m=initial_height(d.initial_volume_m3, area),
            soaking_rate_m_s=config.soaking_rate_m_s,
            concentration_mol_m3=config.species.droplet_concentration_mol_m3,
            center=tuple(d.center),
        )

    @property
    def decay_rate_per_s(self):
        return self.soaking_rate_m_s / self.initial_height_m

    @property
    def time_constant_s(self):
        if self.soaking_rate_m_s == 0:
            return math.inf
        return self.initial_height_m / self.soaking_rate_m_s

    @property
    def initial_radius_m(self):
        return math.sqrt(self.initial_area_m2 / math.pi)

    @property
    def initial_volume_m3(self):
        return self.initial_area_m2 * self.initial_height_m

    @property
    def total_content_mol(self):
        return self.concentration_mol_m3 * self.initial_volume_m3

    def decay(self, t):
        """Fraction of the initial footprint still covered at ``t``."""
        return math.exp(-t * self.decay_rate_per_s)


def area_at(model: SoakingModel, t):
    _check_time(t)
    return model.initial_area_m2 * model.decay(t)


def radius_at(model: SoakingModel, t):
    _check_time(t)
    return model.initial_radius_m * math.exp(-0.5 * t * model.decay_rate_per_s)


def volume_at(model: SoakingModel, t):
    return area_at(model, t) * model.initial_height_m


def release_rate(model: SoakingModel, t):
    """Molecules entering the agar, mol/s."""
    _check_time(t)
    return (model.concentration_mol_m3 * model.soaking_rate_m_s
            * model.initial_area_m2 * model.decay(t))


def cumulative_release(model: SoakingModel, t):
    """Moles released over ``[0, t]``."""
    _check_time(t)
    return model.total_content_mol * -math.expm1(-t * model.decay_rate_per_s)


def interval_release(model: SoakingModel, t0, t1):
    """Moles released over ``[t0, t1]``, computed without cancellation."""
    _check_time(t0)
    k = model.decay_rate_per_s
    return model.total_content_mol * math.exp(-t0 * k) * -math.expm1(-(t1 - t0) * k)


@dataclass(frozen=True)
class ReleaseBatch:
    time_s: float
    positions: np.ndarray  # (count, 2) surface points; z = 0 implied
    moles_represented: float

    @property
    def count(self):
        return len(self.positions)


def particle_budget(model: SoakingModel, weight):
    """Most particles a run may ever release."""
    return math.ceil(model.total_content_mol / weight)


def stochastic_round(x, u):
    """``floor(x)`` plus one with probability ``frac(x)``, given ``u ~ U[0,1)``."""
    n = math.floor(x)
    return n + (1 if u < x - n else 0)


def disk_points(center, radius, u_radial, u_angle):
    """Map uniform draws to points uniform on a disk."""
    r = radius * np.sqrt(u_radial)
    theta = 2.0 * np.pi * u_angle
    pts = np.empty((len(r), 2))
    pts[:, 0] = center[0] + r * np.cos(theta)
    pts[:, 1] = center[1] + r * np.sin(theta)
    return pts


def expected_batch_size(model, t, dt, weight):
    return interval_release(model, t, t + dt) / weight


def sample_release_batch(model: SoakingModel, t, dt, weight, rng: np.random.Generator,
                         released_so_far=0) -> ReleaseBatch:
    """Draw the particles released during ``[t, t + dt]``.

    The count is the stochastically rounded interval integral of the release
    rate, clipped so a run never exceeds :func:`particle_budget`. Positions
    are uniform on the footprint at ``t``.
    """
    _check_time(t)
    if not dt > 0 or not weight > 0:
        raise ValueError("dt and weight must be positive")
    n = stochastic_round(expected_batch_size(model, t, dt, weight), rng.random())
    n = max(0, min(n, particle_budget(model, weight) - released_so_far))
    u = rng.random((n, 2))
    pos = disk_points(model.center, radius_at(model, t), u[:, 0], u[:, 1])
    return ReleaseBatch(time_s=t, positions=pos, moles_represented=n * weight)
