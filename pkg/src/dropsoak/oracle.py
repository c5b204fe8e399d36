"""Deterministic axisymmetric finite-volume solver for the same model.

Cells are annular rings ``[r_i, r_i+1] x [z_j, z_j+1]``. Fluxes are exchanged
across shared faces, so the discrete total mass changes only through the
surface source and the bacterial sink:

* top surface ``z = 0``: influx ``C_m K`` per unit area under the droplet,
  outflux ``k c_face`` with ``c_face`` the half-cell Robin extrapolation
  ``c0 / (1 + k dz / 2D)``;
* side wall, plate bottom and the axis: zero flux.

The source per step is the exact time integral of the shrinking footprint
over each ring, so the released total matches the closed form exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimulationConfig, validate_config
from .droplet import SoakingModel, cumulative_release
from .growth import ConsumptionSchedule

log = logging.getLogger(__name__)


class StabilityError(RuntimeError):
    pass


class NegativeConcentrationError(RuntimeError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n_r: int = 64
    n_z: int = 32
    dt_pde: float | None = None  # None -> 90% of the stability limit

    def __post_init__(self):
        if self.n_r < 8 or self.n_z < 8:
            raise ValueError("need n_r, n_z >= 8")
        if self.dt_pde is not None and not self.dt_pde > 0:
            raise ValueError("dt_pde must be > 0")

    def spacing(self, geometry):
        return geometry.plate_radius_m / self.n_r, geometry.agar_depth_m / self.n_z

    @classmethod
    def parse(cls, text, dt_pde=None):
        """``"64x32"`` -> Grid(64, 32)."""
        try:
            nr, nz = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"grid must look like NRxNZ, got {text!r}") from None
        return cls(nr, nz, dt_pde)


def stable_dt(D, dr, dz, k_max=0.0):
    """Largest explicit step keeping every cell update a convex combination."""
    k_eff = k_max / (1.0 + k_max * dz / (2.0 * D)) if math.isfinite(k_max) else 2.0 * D / dz
    interior = 2.0 * D / dr**2 + 2.0 * D / dz**2
    top = 2.0 * D / dr**2 + D / dz**2 + k_eff / dz
    return 1.0 / max(interior, top)


@dataclass
class Field:
    time_s: float
    mass: np.ndarray  # (n_r, n_z) moles per cell
    r_edges: np.ndarray
    dz: float

    @property
    def ring_areas(self):
        return np.pi * np.diff(self.r_edges**2)

    @property
    def concentration(self):
        return self.mass / (self.ring_areas[:, None] * self.dz)

    def total_mass(self):
        return float(self.mass.sum())

    def radial_profile(self):
        """Z-integrated moles per annulus."""
        return self.mass.sum(axis=1)

    def xy_grid(self, bins, plate_radius, supersample=8):
        """Z-integrated moles in each (x, y) bin of the plate's bounding square."""
        return profile_to_xy(self.radial_profile(), self.r_edges, bins, plate_radius,
                             supersample)


def profile_to_xy(profile, r_edges, bins, plate_radius, supersample=8):
    """Spread annular amounts evenly over each annulus, then bin in (x, y)."""
    nx, ny = bins
    density = np.asarray(profile, float) / (np.pi * np.diff(np.asarray(r_edges) ** 2))
    h = 2.0 * plate_radius
    sx = (np.arange(nx * supersample) + 0.5) / (nx * supersample) * h - plate_radius
    sy = (np.arange(ny * supersample) + 0.5) / (ny * supersample) * h - plate_radius
    r = np.hypot(sx[:, None], sy[None, :])
    idx = np.searchsorted(r_edges, r, side="right") - 1
    inside = (idx >= 0) & (idx < len(density))
    vals = np.where(inside, density[np.clip(idx, 0, len(density) - 1)], 0.0)
    sub_area = (h / (nx * supersample)) * (h / (ny * supersample))
    return vals.reshape(nx, supersample, ny, supersample).sum(axis=(1, 3)) * sub_area


@dataclass
class OracleResult:
    config: SimulationConfig
    grid: Grid
    dt_used: float
    snapshots: list
    times_s: np.ndarray
    released_mol: np.ndarray
    in_agar_mol: np.ndarray
    consumed_mol: np.ndarray

    @property
    def residual_mol(self):
        return self.released_mol - self.consumed_mol - self.in_agar_mol

    def max_relative_residual(self):
        total = float(self.released_mol[-1]) if len(self.released_mol) else 0.0
        res = float(np.max(np.abs(self.residual_mol))) if len(self.times_s) else 0.0
        return res / total if total > 0 else res


def _footprint_integral(c, r0sq, tau, t0, t1):
    """Integral over [t0, t1] of min(r(s)^2, c), r(s)^2 = r0sq exp(-s/tau)."""
    if c <= 0.0:
        return 0.0
    s_c = tau * math.log(r0sq / c) if c < r0sq else -math.inf
    flat_end = min(max(s_c, t0), t1)
    out = c * (flat_end - t0)
    if flat_end < t1:
        out += r0sq * tau * (math.exp(-flat_end / tau) - math.exp(-t1 / tau))
    return out


def source_per_ring(model: SoakingModel, r_edges, t0, t1):
    """Moles entering each surface ring during [t0, t1]."""
    if abs(model.center[0]) > 0 or abs(model.center[1]) > 0:
        raise ValueError("the axisymmetric solver needs the droplet on the plate axis")
    if model.soaking_rate_m_s == 0:
        return np.zeros(len(r_edges) - 1)
    r0sq = model.initial_radius_m**2
    tau = model.time_constant_s
    F = np.array([_footprint_integral(e * e, r0sq, tau, t0, t1) for e in r_edges])
    return (model.concentration_mol_m3 * model.soaking_rate_m_s * math.pi) * np.diff(F)


def _event_times(config, schedule):
    T = config.end_time_s
    ev = {T}
    ev.update(t for t in config.snapshot_times_s if 0 < t <= T)
    if schedule.k0_m_s > 0:
        n = 1
        while n * schedule.doubling_period_s < T:
            if schedule.rate_at((n - 1) * schedule.doubling_period_s) >= schedule.cap_m_s:
                break
            ev.add(n * schedule.doubling_period_s)
            n += 1
    return sorted(ev)


def solve(config: SimulationConfig, grid: Grid = Grid(), auto_shrink=True) -> OracleResult:
    report = validate_config(config)
    if not report.ok:
        raise ValueError(str(report))
    geo = config.geometry
    D = config.species.diffusion_coeff_m2_s
    model = SoakingModel.from_config(config)
    schedule = ConsumptionSchedule.from_config(config)
    dr, dz = grid.spacing(geo)
    T = config.end_time_s
    k_max = schedule.rate_at(max(T, 0.0))

    limit = stable_dt(D, dr, dz, k_max)
    if grid.dt_pde is None:
        dt = 0.9 * limit
    elif grid.dt_pde > limit:
        if not auto_shrink:
            raise StabilityError(
                f"dt_pde={grid.dt_pde:g} s exceeds the explicit stability limit {limit:.6g} s "
                f"(D={D:g}, dr={dr:.4g}, dz={dz:.4g}, k_max={k_max:.4g})")
        log.warning("dt_pde %.6g s exceeds stability limit; shrinking to %.6g s",
                    grid.dt_pde, limit)
        dt = limit
    else:
        dt = grid.dt_pde

    r_edges = np.linspace(0.0, geo.plate_radius_m, grid.n_r + 1)
    ring = np.pi * np.diff(r_edges**2)
    vol = ring * dz
    g_r = D * 2.0 * np.pi * r_edges[1:-1] * dz / dr   # faces between rings
    g_z = D * ring / dz                               # faces between layers

    mass = np.zeros((grid.n_r, grid.n_z))
    released = consumed = 0.0
    times, rel, agar, cons = [0.0], [0.0], [0.0], [0.0]
    snap_at: dict[float, list] = {}
    for i, ts in enumerate(config.snapshot_times_s):
        snap_at.setdefault(ts, []).append(i)
    snaps: list = [None] * len(config.snapshot_times_s)

    def record_snaps(t):
        for i in snap_at.get(t, ()):
            snaps[i] = Field(t, mass.copy(), r_edges, dz)

    record_snaps(0.0)
    t = 0.0
    for t_event in _event_times(config, schedule):
        while t < t_event:
            h = min(dt, t_event - t)
            if t_event - (t + h) < 1e-9 * dt:
                h = t_event - t
            c = mass / vol[:, None]
            flux_r = g_r[:, None] * (c[:-1, :] - c[1:, :]) * h
            flux_z = g_z[:, None] * (c[:, :-1] - c[:, 1:]) * h
            k = schedule.rate_at(t)
            k_eff = k / (1.0 + k * dz / (2.0 * D))
            sink = k_eff * c[:, 0] * ring * h
            src = source_per_ring(model, r_edges, t, t + h)
            mass[:-1, :] -= flux_r
            mass[1:, :] += flux_r
            mass[:, :-1] -= flux_z
            mass[:, 1:] += flux_z
            mass[:, 0] += src - sink
            released += float(src.sum())
            consumed += float(sink.sum())
            t = t_event if h == t_event - t else t + h
            peak = mass.max()
            if mass.min() < -1e-12 * max(peak, 0.0):
                raise NegativeConcentrationError(
                    f"negative mass {mass.min():.3g} at t={t:g} s; scheme unstable")
            times.append(t)
            rel.append(released)
            agar.append(float(mass.sum()))
            cons.append(consumed)
        record_snaps(t_event)

    return OracleResult(config, grid, dt, snaps, np.array(times), np.array(rel),
                        np.array(agar), np.array(cons))


# --------------------------------------------------------------------------
# cross-validation


PHYSICS_KEYS = (
    "plate_radius_m", "agar_depth_m", "diffusion_coeff_m2_s",
    "droplet_concentration_mol_m3", "initial_volume_m3", "initial_radius_m",
    "center", "soaking_rate_m_s", "initial_consumption_rate_m_s",
    "doubling_period_s", "consumption_cap_m_s", "end_time_s", "snapshot_times_s",
)


def physics_signature(config: SimulationConfig):
    """Model parameters two engines must share before they can be compared."""
    g, s, d, gr = config.geometry, config.species, config.droplet, config.growth
    return {
        "plate_radius_m": g.plate_radius_m,
        "agar_depth_m": g.agar_depth_m,
        "diffusion_coeff_m2_s": s.diffusion_coeff_m2_s,
        "droplet_concentration_mol_m3": s.droplet_concentration_mol_m3,
        "initial_volume_m3": d.initial_volume_m3,
        "initial_radius_m": d.initial_radius_m,
        "center": [float(v) for v in d.center],
        "soaking_rate_m_s": config.soaking_rate_m_s,
        "initial_consumption_rate_m_s": gr.initial_consumption_rate_m_s,
        "doubling_period_s": gr.doubling_period_s,
        "consumption_cap_m_s": config.resolved_cap(),
        "end_time_s": config.end_time_s,
        "snapshot_times_s": [float(v) for v in config.snapshot_times_s],
    }


def signature_mismatches(a, b, rtol=1e-12):
    bad = []
    for key in PHYSICS_KEYS:
        va, vb = np.atleast_1d(np.asarray(a[key], float)), np.atleast_1d(np.asarray(b[key], float))
        if va.shape != vb.shape or not np.allclose(va, vb, rtol=rtol, atol=0.0):
            bad.append(key)
    return bad


@dataclass
class ProfileSet:
    """Z-integrated radial amounts (moles) at snapshot times, from either engine."""

    times_s: np.ndarray
    r_edges: np.ndarray
    profiles: list
    consumed_mol: np.ndarray
    released_mol: np.ndarray
    residual: float
    signature: dict = field(default_factory=dict)

    @classmethod
    def from_oracle(cls, res: OracleResult):
        snaps = res.snapshots
        times = np.array([f.time_s for f in snaps])
        idx = np.searchsorted(res.times_s, times)
        return cls(times, snaps[0].r_edges, [f.radial_profile() for f in snaps],
                   res.consumed_mol[idx], res.released_mol[idx],
                   res.max_relative_residual(), physics_signature(res.config))

    @classmethod
    def from_pbs(cls, run_result, config: SimulationConfig):
        w = config.species.particle_weight_mol
        snaps = run_result.snapshots
        ts_t, ts_rel, ts_in, ts_con = run_result.timeseries.as_arrays()
        times = np.array([s.time_s for s in snaps])
        idx = np.searchsorted(ts_t, times)
        residual = float(np.max(np.abs(ts_rel - ts_in - ts_con))) if len(ts_t) else 0.0
        return cls(times, snaps[0].radial_edges,
                   [s.radial_counts * w for s in snaps],
                   np.array([s.consumed_grid.sum() * w for s in snaps]),
                   ts_rel[idx] * w, residual, physics_signature(config))


def _coarsen(profile, edges, n):
    m = len(profile) // n
    return np.asarray(profile, float).reshape(n, m).sum(axis=1)


def _rel(a, b):
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return abs(a - b) / abs(b)


@dataclass
class CompareReport:
    times_s: list
    l1: list
    consumed_rel_error: list
    candidate_residual: float
    reference_residual: float

    def max_l1(self):
        return max(self.l1, default=0.0)

    def max_consumed_error(self):
        return max(self.consumed_rel_error, default=0.0)

    def passes(self, l1_max=0.05, consumed_max=0.10):
        return self.max_l1() < l1_max and self.max_consumed_error() <= consumed_max


def compare_profiles(candidate: ProfileSet, reference: ProfileSet, check_signature=True):
    """Normalized L1 gap between radial profiles and consumed-total errors.

    The L1 gap at each time is ``sum |cand - ref| / sum ref``; both sets are
    first summed onto the coarsest common uniform radial binning.
    """
    if check_signature and candidate.signature and reference.signature:
        bad = signature_mismatches(candidate.signature, reference.signature)
        if bad:
            raise ConfigMismatchError("configs differ in: " + ", ".join(bad))
    if len(candidate.times_s) != len(reference.times_s) or not np.allclose(
            candidate.times_s, reference.times_s, rtol=1e-9, atol=1e-9):
        raise ConfigMismatchError("snapshot times differ")
    if not math.isclose(candidate.r_edges[-1], reference.r_edges[-1], rel_tol=1e-12):
        raise ConfigMismatchError("radial extents differ")
    n = math.gcd(len(candidate.r_edges) - 1, len(reference.r_edges) - 1)
    l1, cons = [], []
    for pc, pr, cc, cr in zip(candidate.profiles, reference.profiles,
                              candidate.consumed_mol, reference.consumed_mol):
        a = _coarsen(pc, candidate.r_edges, n)
        b = _coarsen(pr, reference.r_edges, n)
        tot = b.sum()
        diff = np.abs(a - b).sum()
        l1.append(0.0 if diff == 0 else (diff / tot if tot > 0 else math.inf))
        cons.append(_rel(float(cc), float(cr)))
    return CompareReport(list(map(float, reference.times_s)), l1, cons,
                         candidate.residual, reference.residual)


def _as_profiles(obj, config=None):
    if isinstance(obj, ProfileSet):
        return obj
    if isinstance(obj, OracleResult):
        return ProfileSet.from_oracle(obj)
    cfg = config if config is not None else getattr(obj, "config", None)
    if cfg is None:
        raise TypeError("a PBS result needs its config")
    return ProfileSet.from_pbs(obj, cfg)


def compare_to_pbs(oracle, pbs, config=None) -> CompareReport:
    """Compare a particle run (or any profile set) against the oracle."""
    return compare_profiles(_as_profiles(pbs, config), _as_profiles(oracle))


def expected_uniform_concentration(config: SimulationConfig):
    """Equilibrium concentration once all droplet content is spread evenly."""
    g = config.geometry
    model = SoakingModel.from_config(config)
    return model.total_content_mol / (math.pi * g.plate_radius_m**2 * g.agar_depth_m)


def released_reference(config, t):
    return cumulative_release(SoakingModel.from_config(config), t)
