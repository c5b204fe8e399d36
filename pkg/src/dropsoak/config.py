"""Units, plate geometry and validated run configuration.

Coordinates: the origin sits at the centre of the agar surface, ``z`` grows
downward into the agar, so ``z = 0`` is the bacteria-covered surface and
``z = agar_depth_m`` is the plate bottom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

HOUR = 3600.0

MOLAR = "molar"
MOL_PER_M3 = "mol_per_m3"

# Soaking rates paired with droplet concentrations (M -> m/s). Higher
# concentration soaks faster.
SOAKING_RATES = {0.1: 1.2e-7, 0.01: 6.1e-8, 0.001: 5.5e-9}

DEFAULT_SNAPSHOT_TIMES_S = (0.0, 10 * HOUR, 25 * HOUR, 55 * HOUR)


def concentration_to_si(value, unit=MOLAR):
    """Convert a concentration to mol/m^3 (1 M = 1000 mol/m^3)."""
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"concentration must be positive and finite, got {value!r}")
    if unit in (MOLAR, "M"):
        return value * 1000.0
    if unit in (MOL_PER_M3, "mol/m3", "mol/m^3"):
        return float(value)
    raise ValueError(f"unknown concentration unit {unit!r}")


@dataclass(frozen=True)
class PlateGeometry:
    plate_radius_m: float = 0.1
    agar_depth_m: float = 6e-3


@dataclass(frozen=True)
class SpeciesParams:
    diffusion_coeff_m2_s: float = 5e-11
    droplet_concentration_mol_m3: float = 100.0
    particle_weight_mol: float = 2e-13


@dataclass(frozen=True)
class DropletSpec:
    initial_volume_m3: float = 1e-8
    initial_radius_m: float = 0.01
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def initial_area_m2(self):
        return math.pi * self.initial_radius_m**2

    @property
    def initial_height_m(self):
        return self.initial_volume_m3 / self.initial_area_m2


@dataclass(frozen=True)
class GrowthParams:
    # No default for the initial consumption rate: it is never reported and
    # must be supplied by the caller.
    initial_consumption_rate_m_s: float
    doubling_period_s: float = 1200.0
    # None -> largest rate keeping the absorption probability <= 1 at the
    # configured time step; math.inf -> uncapped doubling.
    max_consumption_rate_m_s: float | None = None


@dataclass(frozen=True)
class SimulationConfig:
    growth: GrowthParams
    geometry: PlateGeometry = field(default_factory=PlateGeometry)
    species: SpeciesParams = field(default_factory=SpeciesParams)
    droplet: DropletSpec = field(default_factory=DropletSpec)
    soaking_rate_m_s: float = 1.2e-7
    time_step_s: float = 10.0
    end_time_s: float = 55 * HOUR
    snapshot_times_s: tuple[float, ...] = DEFAULT_SNAPSHOT_TIMES_S
    histogram_bins: tuple[int, int] = (64, 64)
    radial_bins: int = 64
    timeseries_stride: int = 1
    rng_seed: int = 0

    @property
    def n_steps(self):
        """Whole time steps that fit in ``[0, end_time_s]``."""
        return int(math.floor(self.end_time_s / self.time_step_s + 1e-9))

    def resolved_cap(self):
        """Consumption-rate cap in effect for this run (m/s)."""
        cap = self.growth.max_consumption_rate_m_s
        if cap is not None:
            return cap
        return max_rate_for_probability(
            1.0, self.species.diffusion_coeff_m2_s, self.time_step_s
        )

    def with_overrides(self, **kwargs):
        """Copy with top-level fields or dotted sub-fields replaced.

        ``cfg.with_overrides(**{"species.particle_weight_mol": 1e-12})``
        """
        top = {}
        nested: dict[str, dict] = {}
        for key, value in kwargs.items():
            if "." in key:
                group, name = key.split(".", 1)
                nested.setdefault(group, {})[name] = value
            else:
                top[key] = value
        for group, values in nested.items():
            top[group] = replace(getattr(self, group), **values)
        return replace(self, **top)


def max_rate_for_probability(p, diffusion_coeff, dt):
    """Surface rate k at which k * sqrt(pi dt / D) equals ``p``."""
    return p / math.sqrt(math.pi * dt / diffusion_coeff)


def table_config(concentration_molar=0.1, *, kb0, **overrides):
    """Plate, droplet and species values of the reference experiment.

    ``kb0`` (initial bacterial consumption rate, m/s) is required. The
    particle weight is scaled with concentration so the 0.1 M droplet is
    represented by ~5e6 particles.
    """
    if concentration_molar not in SOAKING_RATES:
        raise ValueError(
            f"no reference soaking rate for {concentration_molar} M; "
            f"choose one of {sorted(SOAKING_RATES)}"
        )
    cfg = SimulationConfig(
        growth=GrowthParams(initial_consumption_rate_m_s=kb0),
        species=SpeciesParams(
            droplet_concentration_mol_m3=concentration_to_si(concentration_molar),
        ),
        soaking_rate_m_s=SOAKING_RATES[concentration_molar],
    )
    return cfg.with_overrides(**overrides) if overrides else cfg


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def messages(self):
        return [str(v) for v in self.violations]

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.messages())


def _positive_finite(x):
    return isinstance(x, (int, float)) and math.isfinite(x) and x > 0


def validate_config(config: SimulationConfig) -> ValidationReport:
    """Check every invariant of ``config``; never raises."""
    from .growth import ConsumptionSchedule

    out: list[Violation] = []

    def bad(name, msg):
        out.append(Violation(name, msg))

    geo, sp, dr, gr = config.geometry, config.species, config.droplet, config.growth
    if not _positive_finite(geo.plate_radius_m):
        bad("geometry.plate_radius_m", "must be > 0")
    if not _positive_finite(geo.agar_depth_m):
        bad("geometry.agar_depth_m", "must be > 0")
    if not _positive_finite(sp.diffusion_coeff_m2_s):
        bad("species.diffusion_coeff_m2_s", "must be > 0")
    if not _positive_finite(sp.droplet_concentration_mol_m3):
        bad("species.droplet_concentration_mol_m3", "must be > 0")
    if not _positive_finite(sp.particle_weight_mol):
        bad("species.particle_weight_mol", "must be > 0")
    if not _positive_finite(dr.initial_volume_m3):
        bad("droplet.initial_volume_m3", "must be > 0")
    if not _positive_finite(dr.initial_radius_m):
        bad("droplet.initial_radius_m", "must be > 0")
    elif _positive_finite(geo.plate_radius_m):
        if dr.initial_radius_m > geo.plate_radius_m:
            bad("droplet.initial_radius_m", "droplet exceeds plate")
        cx, cy = dr.center
        if math.hypot(cx, cy) + dr.initial_radius_m > geo.plate_radius_m * (1 + 1e-12):
            bad("droplet.center", "droplet footprint extends past the plate edge")
    K = config.soaking_rate_m_s
    if not (isinstance(K, (int, float)) and math.isfinite(K) and K >= 0):
        bad("soaking_rate_m_s", "must be >= 0")

    k0 = gr.initial_consumption_rate_m_s
    if not (isinstance(k0, (int, float)) and math.isfinite(k0) and k0 >= 0):
        bad("growth.initial_consumption_rate_m_s", "must be >= 0")
    if not _positive_finite(gr.doubling_period_s):
        bad("growth.doubling_period_s", "must be > 0")
    cap = gr.max_consumption_rate_m_s
    if cap is not None and not (cap >= 0 and not math.isnan(cap)):
        bad("growth.max_consumption_rate_m_s", "must be >= 0")
    elif cap is not None and math.isfinite(k0) and cap < k0:
        bad("growth.max_consumption_rate_m_s", "cap must be >= initial rate")

    dt, T = config.time_step_s, config.end_time_s
    if not _positive_finite(dt):
        bad("time_step_s", "must be > 0")
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T >= 0):
        bad("end_time_s", "must be >= 0")
    elif _positive_finite(dt) and 0 < T < dt:
        bad("end_time_s", "must be 0 or >= time_step_s")
    for ts in config.snapshot_times_s:
        if not (math.isfinite(ts) and 0 <= ts <= T):
            bad("snapshot_times_s", f"snapshot time {ts} outside [0, {T}]")
    nx, ny = config.histogram_bins
    if nx < 1 or ny < 1:
        bad("histogram_bins", "need >= 1 bin per axis")
    if config.radial_bins < 1:
        bad("radial_bins", "need >= 1 radial bin")
    if config.timeseries_stride < 1:
        bad("timeseries_stride", "must be >= 1")
    if not (0 <= int(config.rng_seed) < 2**64):
        bad("rng_seed", "must fit in an unsigned 64-bit integer")

    if out:
        return ValidationReport(tuple(out))

    # Absorption probability must stay <= 1 over the whole run. The schedule
    # is non-decreasing, so checking t=0 and t=T suffices.
    D = sp.diffusion_coeff_m2_s
    factor = math.sqrt(math.pi * dt / D)
    p0 = k0 * factor
    if p0 > 1 + 1e-12:
        bad("growth.initial_consumption_rate_m_s",
            f"absorption probability > 1 at t=0 (P={p0:.3g}); reduce time_step_s")
    else:
        sched = ConsumptionSchedule(k0, gr.doubling_period_s, config.resolved_cap())
        t_last = max(T - dt, 0.0)
        k_last = sched.rate_at(t_last)
        p_last = k_last * factor
        if p_last > 1 + 1e-12:
            bad("growth.max_consumption_rate_m_s",
                f"absorption probability > 1 at t={t_last:g} s (P={p_last:.3g}); "
                "set a cap or reduce time_step_s")
    return ValidationReport(tuple(out))
