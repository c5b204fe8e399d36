import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropsoak.droplet import (SoakingModel, area_at, cumulative_release, initial_height,
                              interval_release, particle_budget, radius_at, release_rate,
                              sample_release_batch, stochastic_round, volume_at)

A0 = math.pi * 0.01**2


def model(k=1.2e-7, h0=3.18e-5, c=100.0, area=A0, center=(0.0, 0.0)):
    return SoakingModel(area, h0, k, c, center)


# ---- initial_height


def test_initial_height_reference():
    assert initial_height(1e-8, math.pi * 0.01**2) == pytest.approx(3.183e-5, rel=2e-4)


def test_initial_height_derived():
    assert initial_height(2e-8, 3.1416e-4) == pytest.approx(6.366e-5, rel=1e-4)


@given(st.floats(1e-8, 1e3), st.floats(1e-8, 1e3))
def test_initial_height_identity(a, h):
    assert initial_height(a * h, a) == pytest.approx(h, rel=1e-14)


@pytest.mark.parametrize("v,a", [(0, 1), (1, 0), (-1, 1), (1, -1)])
def test_initial_height_rejects_non_positive(v, a):
    with pytest.raises(ValueError):
        initial_height(v, a)


# ---- kinematics


def test_area_examples():
    m = model(k=5.5e-9)
    assert area_at(m, 0.0) == pytest.approx(3.1416e-4, rel=1e-4)
    # exp(-5.5e-9 * 2400 / 3.18e-5) = exp(-0.41509)
    assert area_at(m, 2400.0) == pytest.approx(A0 * math.exp(-0.41509434), rel=1e-7)
    assert area_at(m, 2400.0) == pytest.approx(2.074e-4, rel=5e-4)
    assert area_at(m, 1e6) < 1e-4 * A0


def test_radius_examples():
    m = model(k=5.5e-9)
    assert radius_at(m, 0.0) == pytest.approx(0.01, rel=1e-15)
    assert radius_at(m, 2400.0) == pytest.approx(8.126e-3, rel=1e-4)
    for t in (0.0, 600.0, 1200.0, 2400.0):
        assert math.pi * radius_at(m, t) ** 2 == pytest.approx(area_at(m, t), rel=1e-14)


def test_release_rate_examples():
    m = model()
    assert release_rate(m, 0.0) == pytest.approx(3.770e-9, rel=2e-4)
    assert release_rate(m, 1e7) == 0.0


def test_release_rate_integrates_to_content():
    m = model(c=100.0, area=A0, h0=1e-8 / A0)
    # composite Simpson over 60 time constants
    t = np.linspace(0.0, 60 * m.time_constant_s, 200001)
    y = np.array([release_rate(m, s) for s in t[::100]])
    ts = t[::100]
    h = ts[1] - ts[0]
    integral = h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
    assert integral == pytest.approx(1e-6, rel=1e-8)


def test_cumulative_release_examples():
    m = model(c=100.0, h0=3.18e-5, area=1e-8 / 3.18e-5)
    assert cumulative_release(m, 0.0) == 0.0
    assert cumulative_release(m, 265.0) == pytest.approx(1e-6 * (1 - math.exp(-1)), rel=2e-3)
    assert cumulative_release(m, 1e9) == pytest.approx(1e-6, rel=1e-12)


@pytest.mark.parametrize("fn", [area_at, radius_at, release_rate, cumulative_release])
def test_negative_time_rejected(fn):
    with pytest.raises(ValueError):
        fn(model(), -1.0)


def test_zero_soaking_rate_releases_nothing():
    m = model(k=0.0)
    assert math.isinf(m.time_constant_s)
    assert cumulative_release(m, 1e9) == 0.0
    assert area_at(m, 1e9) == A0


ks = st.floats(1e-10, 1e-6)
times = st.floats(0.0, 1e5)


@settings(max_examples=300)
@given(ks, times, times)
def test_area_semigroup(k, t, s):
    m = model(k=k)
    assert area_at(m, t + s) == pytest.approx(area_at(m, t) * area_at(m, s) / A0,
                                              rel=1e-12, abs=1e-300)


@settings(max_examples=300)
@given(ks, times, st.floats(1e-3, 1e3))
def test_source_mass_conservation(k, t, c):
    m = model(k=k, c=c)
    total = c * m.initial_volume_m3
    assert cumulative_release(m, t) + c * volume_at(m, t) == pytest.approx(total, rel=1e-12)


@settings(max_examples=200)
@given(ks, st.floats(1.0, 1e5))
def test_volume_derivative(k, t):
    m = model(k=k)
    h = 1e-3 * min(t, m.time_constant_s)
    dv = (volume_at(m, t + h) - volume_at(m, t - h)) / (2 * h)
    assert dv == pytest.approx(-area_at(m, t) * k, rel=1e-6)


@settings(max_examples=200)
@given(ks, times, st.floats(1e-3, 1e4))
def test_interval_release_is_difference(k, t, dt):
    m = model(k=k)
    # The plain difference cancels, so compare at the scale of the content.
    diff = cumulative_release(m, t + dt) - cumulative_release(m, t)
    assert interval_release(m, t, t + dt) == pytest.approx(
        diff, rel=1e-9, abs=1e-14 * m.total_content_mol)


# ---- release batches


def test_stochastic_round():
    assert stochastic_round(2.25, 0.2) == 3
    assert stochastic_round(2.25, 0.3) == 2
    assert stochastic_round(3.0, 0.0) == 3
    u = np.random.default_rng(1).random(100000)
    mean = np.mean([stochastic_round(0.3, x) for x in u])
    assert mean == pytest.approx(0.3, abs=5 * math.sqrt(0.21 / 1e5))


def test_batch_positions_inside_footprint():
    m = model(center=(0.003, -0.002))
    rng = np.random.default_rng(0)
    for t in (0.0, 100.0, 500.0):
        b = sample_release_batch(m, t, 10.0, 1e-12, rng)
        assert b.count > 0
        d2 = (b.positions[:, 0] - 0.003) ** 2 + (b.positions[:, 1] + 0.002) ** 2
        assert np.all(d2 <= radius_at(m, t) ** 2 * (1 + 1e-12))
        assert b.moles_represented == pytest.approx(b.count * 1e-12)


def test_batch_expected_count():
    m = model()
    w = 1e-12
    rng = np.random.default_rng(3)
    counts = [sample_release_batch(m, 50.0, 20.0, w, rng).count for _ in range(200)]
    expected = interval_release(m, 50.0, 70.0) / w
    assert min(counts) >= math.floor(expected) and max(counts) <= math.floor(expected) + 1
    assert np.mean(counts) == pytest.approx(expected, abs=0.2)


def test_radial_cdf_is_uniform_on_disk():
    m = model()
    rng = np.random.default_rng(7)
    t = 300.0
    batch = sample_release_batch(m, t, 100.0, 1e-12, rng)
    assert batch.count >= 1e5
    u = np.sort(np.sum(batch.positions**2, axis=1)) / radius_at(m, t) ** 2
    n = len(u)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    ks_stat = max(np.max(ecdf_hi - u), np.max(u - ecdf_lo))
    assert ks_stat < 0.01
    angles = np.arctan2(batch.positions[:, 1], batch.positions[:, 0])
    hist, _ = np.histogram(angles, bins=8, range=(-math.pi, math.pi))
    assert np.all(np.abs(hist - n / 8) < 5 * math.sqrt(n / 8))


def _released_total(m, w, rng, dt=10.0, horizon_tau=40):
    released = 0
    t = 0.0
    end = horizon_tau * m.time_constant_s
    while t < end:
        released += sample_release_batch(m, t, dt, w, rng, released_so_far=released).count
        t += dt
    return released


def test_total_release_matches_content():
    m = model(c=100.0, h0=1e-8 / A0)
    w = 1e-6 / 5000.3
    totals = [_released_total(m, w, np.random.default_rng(s)) for s in range(20)]
    n_batches = math.ceil(40 * m.time_constant_s / 10.0)
    # stochastic rounding: each batch contributes at most 1/4 to the variance
    sigma = math.sqrt(n_batches * 0.25 / 20)
    assert abs(np.mean(totals) - 5000.3) <= 3 * sigma
    assert max(totals) <= particle_budget(m, w)


def test_heavy_particles_release_at_most_one():
    m = model()
    w = m.total_content_mol * 1.5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        released = 0
        for i in range(200):
            b = sample_release_batch(m, i * 10.0, 10.0, w, rng, released_so_far=released)
            assert b.count in (0, 1)
            released += b.count
        assert released <= 1


def test_budget():
    m = model(c=100.0, h0=1e-8 / A0)
    assert particle_budget(m, 1e-12) == 1000000
    assert particle_budget(m, 3e-7) == 4
