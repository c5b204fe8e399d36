"""On-disk formats: config files, CSV grids and series, run manifests.

Every float is written as ``%.16e`` (17 significant digits), which re-parses to
the identical double and does not depend on the locale.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import (DropletSpec, GrowthParams, PlateGeometry, SimulationConfig,
                     SpeciesParams, concentration_to_si)

FLOAT_FMT = "%.16e"


class FormatError(ValueError):
    """Malformed input file; ``row`` is 1-based when known."""

    def __init__(self, message, path=None, row=None):
        self.path = str(path) if path is not None else None
        self.row = row
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f", row {row}"
            where += ": "
        super().__init__(where + message)


def fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FMT % x


# --------------------------------------------------------------------------
# config files

_FLOAT_KEYS = {
    "plate_radius_m": ("geometry", "plate_radius_m"),
    "agar_depth_m": ("geometry", "agar_depth_m"),
    "diffusion_coeff_m2_s": ("species", "diffusion_coeff_m2_s"),
    "particle_weight_mol": ("species", "particle_weight_mol"),
    "initial_volume_m3": ("droplet", "initial_volume_m3"),
    "initial_radius_m": ("droplet", "initial_radius_m"),
    "initial_consumption_rate_m_s": ("growth", "initial_consumption_rate_m_s"),
    "doubling_period_s": ("growth", "doubling_period_s"),
    "soaking_rate_m_s": (None, "soaking_rate_m_s"),
    "time_step_s": (None, "time_step_s"),
    "end_time_s": (None, "end_time_s"),
}
_INT_KEYS = {"radial_bins", "timeseries_stride", "rng_seed"}
KNOWN_KEYS = set(_FLOAT_KEYS) | _INT_KEYS | {
    "droplet_concentration", "droplet_concentration_mol_m3", "max_consumption_rate_m_s",
    "droplet_center_m", "snapshot_times_s", "histogram_bins",
}


def _to_float(value, key):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise FormatError(f"{key}: expected a number, got {value!r}") from None


def parse_concentration(text):
    """``"0.1 M"`` or ``"100 mol/m3"`` -> mol/m^3."""
    if isinstance(text, (int, float)):
        raise FormatError("droplet_concentration needs a unit tag, e.g. '0.1 M'")
    parts = str(text).split()
    if len(parts) != 2:
        raise FormatError(f"droplet_concentration must be '<value> <unit>', got {text!r}")
    value, unit = parts
    units = {"M": "molar", "molar": "molar", "mol/m3": "mol_per_m3",
             "mol/m^3": "mol_per_m3", "mol_per_m3": "mol_per_m3"}
    if unit not in units:
        raise FormatError(f"unknown concentration unit {unit!r} (use M or mol/m3)")
    try:
        return concentration_to_si(float(value), units[unit])
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def _float_list(value, key):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        raise FormatError(f"{key}: expected a list")
    return [_to_float(v, key) for v in value]


def config_from_mapping(data, overrides=None):
    """Build a config from flat keys, applying ``overrides`` (same keys) last."""
    data = dict(data or {})
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise FormatError("unknown config keys: " + ", ".join(sorted(unknown)))
    if "initial_consumption_rate_m_s" not in data:
        raise FormatError("initial_consumption_rate_m_s (--kb0) is required")
    groups: dict[str | None, dict] = {None: {}, "geometry": {}, "species": {},
                                      "droplet": {}, "growth": {}}
    for key, (group, name) in _FLOAT_KEYS.items():
        if key in data:
            groups[group][name] = _to_float(data[key], key)
    for key in _INT_KEYS:
        if key in data:
            try:
                groups[None][key] = int(data[key])
            except (TypeError, ValueError):
                raise FormatError(f"{key}: expected an integer, got {data[key]!r}") from None
    if "droplet_concentration" in data:
        groups["species"]["droplet_concentration_mol_m3"] = parse_concentration(
            data["droplet_concentration"])
    elif "droplet_concentration_mol_m3" in data:
        groups["species"]["droplet_concentration_mol_m3"] = _to_float(
            data["droplet_concentration_mol_m3"], "droplet_concentration_mol_m3")
    if "max_consumption_rate_m_s" in data:
        cap = data["max_consumption_rate_m_s"]
        groups["growth"]["max_consumption_rate_m_s"] = (
            None if cap in (None, "none", "auto") else _to_float(cap, "max_consumption_rate_m_s"))
    if "droplet_center_m" in data:
        c = _float_list(data["droplet_center_m"], "droplet_center_m")
        if len(c) != 2:
            raise FormatError("droplet_center_m needs two values")
        groups["droplet"]["center"] = tuple(c)
    if "snapshot_times_s" in data:
        groups[None]["snapshot_times_s"] = tuple(_float_list(data["snapshot_times_s"],
                                                             "snapshot_times_s"))
    if "histogram_bins" in data:
        b = data["histogram_bins"]
        if isinstance(b, str):
            b = b.lower().replace("x", ",").split(",")
        try:
            nx, ny = (int(v) for v in b)
        except (TypeError, ValueError):
            raise FormatError(f"histogram_bins must be two integers, got {b!r}") from None
        groups[None]["histogram_bins"] = (nx, ny)
    return SimulationConfig(
        growth=GrowthParams(**groups["growth"]),
        geometry=PlateGeometry(**groups["geometry"]),
        species=SpeciesParams(**groups["species"]),
        droplet=DropletSpec(**groups["droplet"]),
        **groups[None],
    )


def config_to_mapping(config: SimulationConfig):
    """Flat, fully explicit mapping (concentration in mol/m^3)."""
    d = {}
    for key, (group, name) in _FLOAT_KEYS.items():
        src = config if group is None else getattr(config, group)
        d[key] = float(getattr(src, name))
    d["droplet_concentration"] = f"{config.species.droplet_concentration_mol_m3!r} mol/m3"
    cap = config.growth.max_consumption_rate_m_s
    d["max_consumption_rate_m_s"] = "auto" if cap is None else float(cap)
    d["droplet_center_m"] = [float(v) for v in config.droplet.center]
    d["snapshot_times_s"] = [float(v) for v in config.snapshot_times_s]
    d["histogram_bins"] = [int(v) for v in config.histogram_bins]
    d["radial_bins"] = int(config.radial_bins)
    d["timeseries_stride"] = int(config.timeseries_stride)
    d["rng_seed"] = int(config.rng_seed)
    return d


def read_config_mapping(path):
    """Flat mapping from a YAML config file or a run manifest."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}", path) from None
        data = data.get("config", data)
    else:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise FormatError(f"invalid config syntax: {exc}", path) from None
    if not isinstance(data, dict):
        raise FormatError("config must be a key/value mapping", path)
    return data


def load_config(path, overrides=None):
    try:
        return config_from_mapping(read_config_mapping(path), overrides)
    except FormatError as exc:
        if exc.path is None:
            raise FormatError(str(exc), path) from None
        raise


def dump_config(config: SimulationConfig, path):
    lines = ["# dropsoak run configuration (SI units)"]
    for key, value in config_to_mapping(config).items():
        if isinstance(value, list):
            value = "[" + ", ".join(fmt(v) if isinstance(v, float) else str(v) for v in value) + "]"
        elif isinstance(value, float):
            value = fmt(value)
        elif isinstance(value, str) and key == "droplet_concentration":
            value = f'"{value}"'
        lines.append(f"{key}: {value}")
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# CSV grids, profiles, series


def write_grid_csv(path, time_s, extent, grid, quantity, outside=None):
    """Dense (nx rows x ny columns) grid with a three-line header.

    Bins lying wholly off the plate are written as ``nan``.
    """
    grid = np.asarray(grid)
    nx, ny = grid.shape
    x0, x1, y0, y1 = extent
    with open(path, "w", newline="") as fh:
        fh.write(f"# time_s={fmt(float(time_s))}\n")
        fh.write(f"# x_min={fmt(x0)},x_max={fmt(x1)},y_min={fmt(y0)},y_max={fmt(y1)},"
                 f"nx={nx},ny={ny}\n")
        fh.write(f"# quantity={quantity}\n")
        for i in range(nx):
            row = []
            for j in range(ny):
                row.append("nan" if outside is not None and outside[i, j] else fmt(grid[i, j]))
            fh.write(",".join(row) + "\n")


def _parse_header_kv(line):
    out = {}
    for part in line.lstrip("#").strip().split(","):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_grid_csv(path):
    with open(path) as fh:
        head = [fh.readline() for _ in range(3)]
        if not all(line.startswith("#") for line in head):
            raise FormatError("grid file needs a 3-line '#' header", path)
        meta = {}
        for line in head[:2]:
            meta.update(_parse_header_kv(line))
        # The quantity label is free text and may itself contain commas.
        label = head[2].lstrip("#").strip()
        if not label.startswith("quantity="):
            raise FormatError("third header line must be '# quantity=...'", path, 3)
        meta["quantity"] = label[len("quantity="):]
        grid = np.loadtxt(fh, delimiter=",", ndmin=2)
    meta["time_s"] = float(meta["time_s"])
    for k in ("x_min", "x_max", "y_min", "y_max"):
        meta[k] = float(meta[k])
    meta["nx"], meta["ny"] = int(meta["nx"]), int(meta["ny"])
    return meta, grid


def write_profile_csv(path, time_s, r_edges, amount_mol, consumed_mol, released_mol, weight):
    with open(path, "w", newline="") as fh:
        fh.write(f"# time_s={fmt(float(time_s))},consumed_mol={fmt(float(consumed_mol))},"
                 f"released_mol={fmt(float(released_mol))},particle_weight_mol={fmt(float(weight))}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r_inner_m", "r_outer_m", "amount_mol"])
        for a, b, m in zip(r_edges[:-1], r_edges[1:], amount_mol):
            w.writerow([fmt(a), fmt(b), fmt(float(m))])


def read_profile_csv(path):
    with open(path) as fh:
        meta = {k: float(v) for k, v in _parse_header_kv(fh.readline()).items()}
        rows = list(csv.DictReader(fh))
    inner = np.array([float(r["r_inner_m"]) for r in rows])
    outer = np.array([float(r["r_outer_m"]) for r in rows])
    amount = np.array([float(r["amount_mol"]) for r in rows])
    edges = np.append(inner, outer[-1:]) if len(rows) else np.zeros(1)
    return meta, edges, amount


def write_table_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# --------------------------------------------------------------------------
# area series for calibration


def read_area_series(path, radius=None):
    """Read ``time_s,area_m2`` (or ``time_s,radius_m``) rows.

    Lines starting with ``#`` are comments; ``# concentration: 0.1 M``
    tags the series. ``radius=None`` picks the column from the header.
    Returns ``(times, values, is_radius, tag)``.
    """
    path = Path(path)
    tag = path.stem
    header = None
    times, values = [], []
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.lower().startswith("concentration"):
                    tag = body.split(":", 1)[-1].strip() or tag
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = [c.lower() for c in cells]
                if len(header) < 2 or header[0] != "time_s" or header[1] not in ("area_m2", "radius_m"):
                    raise FormatError("header must be 'time_s,area_m2' or 'time_s,radius_m'",
                                      path, lineno)
                continue
            if len(cells) < 2:
                raise FormatError("expected two columns", path, lineno)
            try:
                t, v = float(cells[0]), float(cells[1])
            except ValueError:
                raise FormatError(f"non-numeric value in {line!r}", path, lineno) from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise FormatError("non-finite value", path, lineno)
            if times and t <= times[-1]:
                raise FormatError("times must be strictly increasing", path, lineno)
            if v <= 0:
                raise FormatError("area/radius must be positive", path, lineno)
            if t < 0:
                raise FormatError("time must be >= 0", path, lineno)
            times.append(t)
            values.append(v)
    if header is None:
        raise FormatError("empty table", path)
    if len(times) < 2:
        raise FormatError("need at least two samples", path)
    is_radius = header[1] == "radius_m"
    if radius is not None and radius != is_radius:
        raise FormatError(f"expected a {'radius_m' if radius else 'area_m2'} column", path, 1)
    return np.array(times), np.array(values), is_radius, tag


def write_area_series(path, times, values, radius=False, tag=None):
    with open(path, "w", newline="") as fh:
        if tag:
            fh.write(f"# concentration: {tag}\n")
        fh.write("time_s,radius_m\n" if radius else "time_s,area_m2\n")
        for t, v in zip(times, values):
            fh.write(f"{fmt(float(t))},{fmt(float(v))}\n")


# --------------------------------------------------------------------------
# manifests


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, files, **extra):
    out_dir = Path(out_dir)
    manifest = {
        "tool": "dropsoak",
        "version": __version__,
        "command": command,
        "config": config_to_mapping(config) if config is not None else None,
        "seed": int(config.rng_seed) if config is not None else None,
        **extra,
        "outputs": {name: sha256_file(out_dir / name) for name in sorted(files)},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return manifest


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FormatError("manifest.json not found", path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest: {exc}", path) from None


def verify_manifest(out_dir):
    """Names of listed outputs that are missing or whose checksum differs."""
    manifest = read_manifest(out_dir)
    bad = []
    for name, digest in manifest.get("outputs", {}).items():
        p = Path(out_dir) / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad


def write_error_record(out_dir, exit_code, kind, message, **details):
    record = {"status": "error", "exit_code": exit_code, "kind": kind,
              "message": message, **details}
    if out_dir is not None:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(Path(out_dir) / "error.json", "w") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        except OSError:
            pass
    return record
