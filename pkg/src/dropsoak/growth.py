"""Surface consumption by the growing bacterial lawn."""
from __future__ import annotations

import math
from dataclasses import dataclass


class TimeStepTooCoarseError(ValueError):
    """Absorption probability exceeds 1; the time step must shrink."""


@dataclass(frozen=True)
class ConsumptionSchedule:
    """Stepwise doubling of the surface reaction velocity.

    The rate doubles at every multiple of ``doubling_period_s`` and is held
    at ``cap_m_s`` once it gets there.
    """

    k0_m_s: float
    doubling_period_s: float = 1200.0
    cap_m_s: float = math.inf

    def __post_init__(self):
        if not self.k0_m_s >= 0:
            raise ValueError("k0_m_s must be >= 0")
        if not self.doubling_period_s > 0:
            raise ValueError("doubling_period_s must be > 0")
        if not self.cap_m_s >= 0:
            raise ValueError("cap_m_s must be >= 0")

    def doublings(self, t):
        return math.floor(t / self.doubling_period_s)

    def rate_at(self, t):
        if t < 0:
            raise ValueError(f"negative time {t}")
        if self.k0_m_s == 0:
            return 0.0
        n = self.doublings(t)
        # Avoid overflowing 2**n for very long uncapped horizons.
        if n > 1023 or self.k0_m_s * 2.0**n >= self.cap_m_s:
            return float(self.cap_m_s)
        return self.k0_m_s * 2.0**n

    @classmethod
    def from_config(cls, config):
        g = config.growth
        return cls(g.initial_consumption_rate_m_s, g.doubling_period_s,
                   config.resolved_cap())


def consumption_rate_at(schedule: ConsumptionSchedule, t: float) -> float:
    return schedule.rate_at(t)


def absorption_probability(k, D, dt):
    """Per-encounter consumption probability ``k * sqrt(pi * dt / D)``.

    Applies to particles whose Brownian step ends below the reactive surface;
    with that test the scheme reproduces the Robin law ``D dc/dz = k c`` as
    ``dt -> 0``.
    """
    if k < 0 or not D > 0 or not dt > 0:
        raise ValueError(f"need k >= 0, D > 0, dt > 0 (got {k}, {D}, {dt})")
    p = k * math.sqrt(math.pi * dt / D)
    if p > 1 + 1e-12:
        raise TimeStepTooCoarseError(
            f"absorption probability {p:.4g} > 1 for k={k:g} m/s, D={D:g} m^2/s, "
            f"dt={dt:g} s: time step too coarse for this consumption rate, reduce dt"
        )
    return min(p, 1.0)
