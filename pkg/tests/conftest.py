import math

import pytest

from dropsoak.config import HOUR, table_config

# Acceptance criteria register one line each here; printed at session end.
ACCEPTANCE_LINES = {}


def desk_config(kb0=0.0, *, particles=2e4, **overrides):
    """Small plate, 0.1 M droplet, weight chosen for about ``particles`` particles."""
    cfg = table_config(0.1, kb0=kb0)
    content = cfg.species.droplet_concentration_mol_m3 * cfg.droplet.initial_volume_m3
    base = {
        "geometry.plate_radius_m": 0.02,
        "species.particle_weight_mol": content / particles,
        "end_time_s": 1.0 * HOUR,
        "snapshot_times_s": (0.0, 0.5 * HOUR, 1.0 * HOUR),
    }
    base.update(overrides)
    return cfg.with_overrides(**base)


@pytest.fixture
def desk():
    return desk_config


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def close(a, b, rel):
    return math.isclose(a, b, rel_tol=rel, abs_tol=0.0)
