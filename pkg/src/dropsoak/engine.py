"""Particle-based simulation of release, diffusion and surface consumption.

Each simulated particle stands for ``particle_weight_mol`` moles. A step

1. releases a batch of particles at ``z = 0`` over the droplet footprint,
2. gives every particle a Gaussian displacement with per-axis standard
   deviation ``sqrt(2 D dt)``,
3. offers every particle whose step ends above the surface (``z < 0``) to the
   bacteria, which consume it with the absorption probability for the
   current surface rate; survivors are mirrored back,
4. mirrors off the side wall and the plate bottom.

Randomness is keyed by (seed, particle id, step index), so the outcome is the
same for any thread count.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import rng as _rng
from .config import PlateGeometry, SimulationConfig, validate_config
from .droplet import (SoakingModel, disk_points, expected_batch_size, particle_budget,
                      radius_at, stochastic_round)
from .growth import ConsumptionSchedule, absorption_probability

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class ReflectionError(RuntimeError):
    """Wall reflection did not bring a particle back inside the plate."""


@dataclass
class SimState:
    time_s: float
    step_index: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    ids: np.ndarray
    released: int = 0
    consumed: int = 0
    reservoir_mol: float = 0.0
    # Consumption events as (time_s, x_m, y_m) rows, one array per step.
    ledger_chunks: list = field(default_factory=list)
    rng_seed: int = 0

    @classmethod
    def initial(cls, config: SimulationConfig):
        model = SoakingModel.from_config(config)
        empty = np.empty(0)
        return cls(0.0, 0, empty, empty.copy(), empty.copy(),
                   np.empty(0, dtype=np.int64), reservoir_mol=model.total_content_mol,
                   rng_seed=int(config.rng_seed))

    @property
    def alive(self):
        return len(self.x)

    @property
    def positions(self):
        return np.column_stack([self.x, self.y, self.z])

    def ledger(self):
        if not self.ledger_chunks:
            return np.empty((0, 3))
        return np.concatenate(self.ledger_chunks)


@dataclass
class Snapshot:
    time_s: float
    grid: np.ndarray            # (nx, ny) alive counts, z-integrated
    consumed_grid: np.ndarray   # (nx, ny) cumulative consumption counts
    outside: np.ndarray         # (nx, ny) True for bins wholly off the plate
    extent: tuple[float, float, float, float]
    radial_edges: np.ndarray
    radial_counts: np.ndarray   # alive counts per annulus


@dataclass
class TimeSeries:
    times_s: list = field(default_factory=list)
    in_agar_counts: list = field(default_factory=list)
    consumed_counts: list = field(default_factory=list)
    released_counts: list = field(default_factory=list)

    def append(self, state: SimState):
        self.times_s.append(state.time_s)
        self.in_agar_counts.append(state.alive)
        self.consumed_counts.append(state.consumed)
        self.released_counts.append(state.released)

    def as_arrays(self):
        return (np.asarray(self.times_s, dtype=float),
                np.asarray(self.released_counts, dtype=np.int64),
                np.asarray(self.in_agar_counts, dtype=np.int64),
                np.asarray(self.consumed_counts, dtype=np.int64))


@dataclass
class RunResult:
    snapshots: list
    timeseries: TimeSeries
    ledger: np.ndarray
    final_state: SimState
    consumption_cap_m_s: float
    config: SimulationConfig | None = None


def reflect_cylinder(p_old, p_new, geometry: PlateGeometry):
    """Mirror ``p_new`` back into the plate without any surface consumption."""
    x0, y0, z0 = (np.atleast_1d(np.asarray(c, dtype=float)) for c in p_old)
    x1, y1, z1 = (np.atleast_1d(np.asarray(c, dtype=float)) for c in p_new)
    x, y, z, status, _, _ = _kernels.advance(
        x0, y0, z0, x1 - x0, y1 - y0, z1 - z0, np.ones_like(x0), 0.0,
        geometry.plate_radius_m, geometry.agar_depth_m)
    if (status == _kernels.STUCK).any():
        raise ReflectionError("reflection did not converge; time step too large for the geometry")
    if np.ndim(p_new[0]) == 0:
        return float(x[0]), float(y[0]), float(z[0])
    return x, y, z


def _check(config):
    report = validate_config(config)
    if not report.ok:
        raise ConfigError(str(report))


class _RunContext:
    """Quantities derived once per run."""

    def __init__(self, config: SimulationConfig, backend=None):
        self.config = config
        self.backend = _kernels.resolve_backend(backend)
        self.model = SoakingModel.from_config(config)
        self.schedule = ConsumptionSchedule.from_config(config)
        self.sigma = math.sqrt(2.0 * config.species.diffusion_coeff_m2_s * config.time_step_s)
        self.weight = config.species.particle_weight_mol
        self.budget = particle_budget(self.model, self.weight)
        seed = config.rng_seed
        self.move_key = _rng.stream_key(seed, _rng.STREAM_MOVE)
        self.place_key = _rng.stream_key(seed, _rng.STREAM_PLACE)
        self.count_key = _rng.stream_key(seed, _rng.STREAM_COUNT)


def _release(ctx: _RunContext, t, step_index, released):
    cfg = ctx.config
    expected = expected_batch_size(ctx.model, t, cfg.time_step_s, ctx.weight)
    n = stochastic_round(expected, _rng.uniform_int(ctx.count_key, step_index, 0))
    n = max(0, min(n, ctx.budget - released))
    ids = np.arange(released, released + n, dtype=np.int64)
    if n == 0:
        return ids, np.empty((0, 2))
    ik = _rng.item_keys(ctx.place_key, ids)
    pos = disk_points(ctx.model.center, radius_at(ctx.model, t),
                      _rng.uniforms_from_item_keys(ik, 0),
                      _rng.uniforms_from_item_keys(ik, 1))
    return ids, pos


def _advance(state: SimState, ctx: _RunContext, force_p=None) -> SimState:
    cfg = ctx.config
    t = state.time_s
    dt = cfg.time_step_s
    k = ctx.schedule.rate_at(t)
    p = absorption_probability(k, cfg.species.diffusion_coeff_m2_s, dt) if force_p is None else force_p

    new_ids, new_pos = _release(ctx, t, state.step_index, state.released)
    x = np.concatenate([state.x, new_pos[:, 0]])
    y = np.concatenate([state.y, new_pos[:, 1]])
    z = np.concatenate([state.z, np.zeros(len(new_ids))])
    ids = np.concatenate([state.ids, new_ids])
    released = state.released + len(new_ids)

    geo = cfg.geometry
    x, y, z, status, cx, cy = _kernels.step_particles(
        x, y, z, ids, ctx.move_key, state.step_index, ctx.sigma, p,
        geo.plate_radius_m, geo.agar_depth_m, backend=ctx.backend)
    if (status == _kernels.STUCK).any():
        raise ReflectionError(
            f"wall reflection failed at t={t:g} s; time step too large for the geometry")

    t_new = (state.step_index + 1) * dt
    eaten = status == _kernels.CONSUMED
    n_eaten = int(np.count_nonzero(eaten))
    chunks = state.ledger_chunks
    if n_eaten:
        # Particle order is id order, so the ledger is reproducible.
        chunk = np.column_stack([np.full(n_eaten, t_new), cx[eaten], cy[eaten]])
        chunks = chunks + [chunk]
        keep = ~eaten
        x, y, z, ids = x[keep], y[keep], z[keep], ids[keep]

    reservoir = max(ctx.model.total_content_mol - released * ctx.weight, 0.0)
    return SimState(t_new, state.step_index + 1, x, y, z, ids, released,
                    state.consumed + n_eaten, reservoir, chunks, state.rng_seed)


def step(state: SimState, config: SimulationConfig, backend=None) -> SimState:
    """Advance ``state`` by one time step; ``state`` itself is left untouched."""
    _check(config)
    if state.time_s + config.time_step_s > config.end_time_s * (1 + 1e-12) + 1e-12:
        raise ValueError("step would pass end_time_s")
    return _advance(state, _RunContext(config, backend))


def bin_snapshot(x, y, geometry: PlateGeometry, bins):
    """Histogram points into (nx, ny) bins over the plate's bounding square.

    Returns ``(counts, outside)``; ``outside`` marks bins lying wholly off
    the plate disk.
    """
    nx, ny = bins
    if nx < 1 or ny < 1:
        raise ValueError("need at least one bin per axis")
    rp = geometry.plate_radius_m
    counts, xe, ye = np.histogram2d(np.asarray(x, float), np.asarray(y, float),
                                    bins=(nx, ny), range=((-rp, rp), (-rp, rp)))
    return counts.astype(np.int64), outside_mask(xe, ye, rp)


def outside_mask(x_edges, y_edges, rp):
    # Nearest point of each bin to the origin.
    def nearest(edges):
        lo, hi = edges[:-1], edges[1:]
        return np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(abs(lo), abs(hi)))
    nxp = nearest(x_edges)[:, None]
    nyp = nearest(y_edges)[None, :]
    return nxp**2 + nyp**2 > rp**2


def radial_edges(geometry: PlateGeometry, n):
    return np.linspace(0.0, geometry.plate_radius_m, n + 1)


def radial_histogram(x, y, geometry, n):
    r = np.hypot(x, y)
    counts, _ = np.histogram(r, bins=radial_edges(geometry, n))
    return counts.astype(np.int64)


def take_snapshot(state: SimState, config: SimulationConfig) -> Snapshot:
    geo = config.geometry
    grid, outside = bin_snapshot(state.x, state.y, geo, config.histogram_bins)
    led = state.ledger()
    consumed, _ = bin_snapshot(led[:, 1], led[:, 2], geo, config.histogram_bins)
    rp = geo.plate_radius_m
    return Snapshot(
        time_s=state.time_s, grid=grid, consumed_grid=consumed, outside=outside,
        extent=(-rp, rp, -rp, rp), radial_edges=radial_edges(geo, config.radial_bins),
        radial_counts=radial_histogram(state.x, state.y, geo, config.radial_bins),
    )


def snapshot_steps(config: SimulationConfig):
    """Step index at which each requested snapshot time is recorded."""
    n = config.n_steps
    return [min(n, int(round(t / config.time_step_s))) for t in config.snapshot_times_s]


def run(config: SimulationConfig, backend=None, progress=None) -> RunResult:
    """Simulate ``[0, end_time_s]`` and collect snapshots and totals."""
    _check(config)
    ctx = _RunContext(config, backend)
    cap = config.resolved_cap()
    log.info("consumption cap %.6g m/s (P=%.4g at dt=%g s)", cap,
             cap * math.sqrt(math.pi * config.time_step_s / config.species.diffusion_coeff_m2_s)
             if math.isfinite(cap) else math.inf, config.time_step_s)
    n_steps = config.n_steps
    wanted = {}
    for i, s in enumerate(snapshot_steps(config)):
        wanted.setdefault(s, []).append(i)
    snaps: list = [None] * len(config.snapshot_times_s)
    series = TimeSeries()
    state = SimState.initial(config)

    def record(st):
        if st.step_index % config.timeseries_stride == 0 or st.step_index == n_steps:
            series.append(st)
        for i in wanted.get(st.step_index, ()):
            snaps[i] = take_snapshot(st, config)

    record(state)
    for _ in range(n_steps):
        state = _advance(state, ctx)
        record(state)
        if progress is not None:
            progress(state)
    return RunResult(snaps, series, state.ledger(), state, cap, config)
