"""Soaking-rate estimation from measured droplet footprints.

Under exponential shrinkage ``ln A(t) = ln A0 - (K / h0) t``, so ``K`` follows
from the slope of log-area against time once the droplet height is known.
Only ``K / h0`` is identifiable from areas alone.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .droplet import initial_height


class SoakingFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AreaSeries:
    times_s: np.ndarray
    areas_m2: np.ndarray
    concentration_tag: str = ""
    volume_m3: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=float)
        a = np.asarray(self.areas_m2, dtype=float)
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "areas_m2", a)
        if t.ndim != 1 or t.shape != a.shape:
            raise ValueError("times and areas must be 1-D and the same length")
        if len(t) < 2:
            raise ValueError("need at least 2 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite sample")
        if np.any(t < 0):
            raise ValueError("sample times must be >= 0")
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise ValueError(f"times must be strictly increasing (sample {bad[0] + 1})")
        if np.any(a <= 0):
            raise ValueError("areas must be positive")

    @classmethod
    def from_radii(cls, times_s, radii_m, **kwargs):
        r = np.asarray(radii_m, dtype=float)
        if np.any(r <= 0):
            raise ValueError("radii must be positive")
        return cls(times_s, np.pi * r**2, **kwargs)

    def h0(self):
        """Droplet height from the recorded volume and the first footprint."""
        if self.volume_m3 is None:
            raise ValueError("series has no droplet volume")
        return derive_h0(self.volume_m3, float(self.areas_m2[0]))


@dataclass
class SoakingFit:
    soaking_rate_m_s: float
    initial_area_m2: float
    r_squared: float
    residuals: np.ndarray
    h0_m: float
    flags: list = field(default_factory=list)

    @property
    def decay_rate_per_s(self):
        return self.soaking_rate_m_s / self.h0_m


def derive_h0(volume, initial_area):
    return initial_height(volume, initial_area)


def fit_soaking_rate(series: AreaSeries, h0) -> SoakingFit:
    """Least-squares line through ``(t, ln A)``; ``K = -slope * h0``.

    A non-decaying series is not an error: a negative estimate carries the
    ``"negative soaking rate"`` flag and a flat one ``"no soaking detected"``.
    """
    if not (h0 > 0 and math.isfinite(h0)):
        raise ValueError("h0 must be positive and finite")
    t = series.times_s
    y = np.log(series.areas_m2)
    flags = []
    if np.ptp(y) == 0.0:
        slope, intercept = 0.0, float(y[0])
    else:
        tc = t - t.mean()
        slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
        intercept = float(y.mean() - slope * t.mean())
    resid = y - (intercept + slope * t)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    k = -slope * h0
    if k == 0.0:
        flags.append("no soaking detected")
    elif k < 0.0:
        flags.append("negative soaking rate")
        warnings.warn(f"fitted soaking rate is negative ({k:.3g} m/s); "
                      "the droplet area grows over time", SoakingFitWarning, stacklevel=2)
    return SoakingFit(k + 0.0, math.exp(intercept), r2, resid, h0, flags)


def two_point_estimate(a0, a1, h0, radius=False):
    """Exact inversion of exponential shrinkage between two samples.

    ``a0`` and ``a1`` are ``(t, area)`` pairs, or ``(t, radius)`` with
    ``radius=True``.
    """
    (t0, v0), (t1, v1) = a0, a1
    if not t1 > t0:
        raise ValueError("second sample must be later than the first")
    if not (v0 > 0 and v1 > 0):
        raise ValueError("areas/radii must be positive")
    if radius:
        return 2.0 * h0 * math.log(v0 / v1) / (t1 - t0)
    return h0 * math.log(v0 / v1) / (t1 - t0)


def synthetic_series(k, h0, initial_area, times_s, noise=0.0, rng=None, tag=""):
    """Areas following exponential shrinkage, with optional multiplicative noise."""
    t = np.asarray(times_s, dtype=float)
    a = initial_area * np.exp(-k * t / h0)
    if noise:
        rng = rng if rng is not None else np.random.default_rng()
        a = a * (1.0 + noise * rng.standard_normal(len(t)))
    return AreaSeries(t, a, concentration_tag=tag, volume_m3=initial_area * h0)
