"""File ingestion and synthetic data generation.

Two on-disk formats are owned here:

* generation CSV — header ``timestamp,plant_id,technology,energy_gwh``,
  UTF-8, LF line endings, timestamps ISO-8601 UTC on exact hours;
* GT1 grid tensors — text header (``GRIDTS1`` magic, ``key=value`` lines,
  ``DATA`` terminator) followed by little-endian float32 payload in
  ``[time][variable][lat][lon]`` order.

The synthetic generators plant known coefficients and smooth space-time
wind fields so that downstream estimators can be checked against exact
ground truth; everything is a pure function of the scenario seed.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_data import (
    GridSpec,
    GridStateSequence,
    LocationSet,
    Technology,
    TimeSeriesPanel,
    as_utc_hours,
)
from .errors import FormatError, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("timestamp", "plant_id", "technology", "energy_gwh")
GT1_MAGIC = "GRIDTS1"
_GT1_KEYS = ("lat0", "dlat", "n_lat", "lon0", "dlon", "n_lon", "variables", "t0", "dt", "n_times")


def _format_ts(t: np.datetime64) -> str:
    return f"{np.datetime_as_string(np.datetime64(t, 's'), unit='s')}Z"


def _parse_ts(text: str, where: str) -> np.datetime64:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1]
    elif raw.endswith("+00:00"):
        raw = raw[:-6]
    try:
        return np.datetime64(raw, "s")
    except ValueError:
        raise FormatError(f"{where}: cannot parse timestamp {text!r}") from None


# ---------------------------------------------------------------------------
# Generation CSV
# ---------------------------------------------------------------------------

def load_generation_csv(path) -> TimeSeriesPanel:
    """Load an hourly generation CSV into a validated panel.

    Hours absent from the file (between the first and last timestamp seen)
    become explicit NaN entries.  Duplicate (timestamp, plant) rows and
    off-hour timestamps are rejected with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"generation file not found: {path}")
    rows: dict[tuple[np.datetime64, str], tuple[Technology, float]] = {}
    plant_tech: dict[str, Technology] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise FormatError(
                f"{path}:1: header must be '{','.join(CSV_COLUMNS)}', got '{','.join(header)}'"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            where = f"{path}:{lineno}"
            ts = _parse_ts(row[0], where)
            if np.datetime64(ts, "h").astype("datetime64[s]") != ts:
                raise FormatError(f"{where}: timestamp {row[0]!r} is not on an exact hour")
            plant = row[1].strip()
            if not plant:
                raise FormatError(f"{where}: empty plant_id")
            try:
                tech = Technology(row[2].strip())
            except ValueError:
                raise FormatError(f"{where}: unknown technology {row[2]!r}") from None
            try:
                energy = float(row[3])
            except ValueError:
                raise FormatError(f"{where}: cannot parse energy {row[3]!r}") from None
            if not np.isfinite(energy):
                raise FormatError(f"{where}: non-finite energy {row[3]!r}")
            if plant in plant_tech and plant_tech[plant] is not tech:
                raise FormatError(
                    f"{where}: plant '{plant}' switches technology "
                    f"({plant_tech[plant].value} -> {tech.value})"
                )
            plant_tech[plant] = tech
            key = (ts, plant)
            if key in rows:
                raise FormatError(
                    f"{where}: duplicate (timestamp, plant) row ({_format_ts(ts)}, {plant})"
                )
            rows[key] = (tech, energy)
    if not rows:
        raise FormatError(f"{path}: no data rows")

    all_ts = sorted({ts for ts, _ in rows})
    t_first, t_last = all_ts[0], all_ts[-1]
    n = int((t_last - t_first) // np.timedelta64(3600, "s")) + 1
    timestamps = t_first + np.arange(n) * np.timedelta64(3600, "s")
    index = {t: i for i, t in enumerate(timestamps)}

    series = {
        (plant, tech): np.full(n, np.nan) for plant, tech in plant_tech.items()
    }
    for (ts, plant), (tech, energy) in rows.items():
        series[(plant, tech)][index[ts]] = energy
    n_missing = sum(int(np.isnan(v).sum()) for v in series.values())
    if n_missing:
        logger.info("%s: %d missing hourly entries filled as explicit NaN", path, n_missing)
    return TimeSeriesPanel(timestamps=timestamps, series=series)


def write_generation_csv(panel: TimeSeriesPanel, path) -> None:
    """Write a panel back to the generation CSV format (NaN rows omitted)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        keys = sorted(panel.series.keys(), key=lambda k: (k[0], k[1].value))
        for i, t in enumerate(panel.timestamps):
            stamp = _format_ts(t)
            for plant, tech in keys:
                v = panel.series[(plant, tech)][i]
                if np.isnan(v):
                    continue
                fh.write(f"{stamp},{plant},{tech.value},{v:.17g}\n")


# ---------------------------------------------------------------------------
# GT1 grid tensors
# ---------------------------------------------------------------------------

def write_grid_tensor(seq: GridStateSequence, path) -> None:
    spec = seq.spec
    header = io.StringIO()
    header.write(GT1_MAGIC + "\n")
    header.write(f"lat0={spec.lat0:.17g}\n")
    header.write(f"dlat={spec.dlat:.17g}\n")
    header.write(f"n_lat={spec.n_lat}\n")
    header.write(f"lon0={spec.lon0:.17g}\n")
    header.write(f"dlon={spec.dlon:.17g}\n")
    header.write(f"n_lon={spec.n_lon}\n")
    header.write(f"variables={','.join(spec.variables)}\n")
    header.write(f"t0={_format_ts(spec.t0)}\n")
    header.write(f"dt={spec.dt}\n")
    header.write(f"n_times={seq.n_times}\n")
    header.write("DATA\n")
    payload = np.ascontiguousarray(seq.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(payload.tobytes())


def load_grid_tensor(path) -> GridStateSequence:
    """Load a GT1 file; byte counts are verified before any decoding."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"grid tensor file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()

    newline = blob.find(b"\n")
    if newline < 0 or blob[:newline].decode("ascii", "replace") != GT1_MAGIC:
        raise FormatError(f"{path}: bad magic, expected '{GT1_MAGIC}'")
    pos = newline + 1
    fields: dict[str, str] = {}
    while True:
        newline = blob.find(b"\n", pos)
        if newline < 0:
            raise FormatError(f"{path}: header not terminated by DATA line")
        line = blob[pos:newline].decode("ascii", "replace")
        pos = newline + 1
        if line == "DATA":
            break
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        if key in fields:
            raise FormatError(f"{path}: duplicated header key '{key}'")
        fields[key] = value
    missing = [k for k in _GT1_KEYS if k not in fields]
    if missing:
        raise FormatError(f"{path}: missing header key(s) {', '.join(missing)}")

    try:
        spec = GridSpec(
            lat0=float(fields["lat0"]),
            dlat=float(fields["dlat"]),
            n_lat=int(fields["n_lat"]),
            lon0=float(fields["lon0"]),
            dlon=float(fields["dlon"]),
            n_lon=int(fields["n_lon"]),
            variables=tuple(fields["variables"].split(",")),
            t0=_parse_ts(fields["t0"], str(path)),
            dt=int(fields["dt"]),
        )
        n_times = int(fields["n_times"])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header value ({exc})") from None

    expected = n_times * spec.n_variables * spec.n_lat * spec.n_lon * 4
    payload = blob[pos:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(
        n_times, spec.n_variables, spec.n_lat, spec.n_lon
    )
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return GridStateSequence(spec=spec, data=data)


# ---------------------------------------------------------------------------
# Synthetic scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticScenario:
    """Everything needed to regenerate a desk-scale dataset bit for bit."""

    seed: int = 0
    hours: int = 1440
    start: str = "2020-01-06T00:00:00"  # a Monday

    # planted marginal-response structure (thermal = linear model + noise)
    alpha: float = 12.0
    beta_solar: float = -0.67
    beta_wind: float = -0.95
    beta_demand: float = 0.8
    beta_wind_ramp: float = 0.1
    beta_solar_ramp: float = -0.1
    gamma_hydro: float = 0.3
    gamma_geothermal: float = -0.2
    gamma_import: float = 0.15
    month_offsets: tuple[float, ...] = (
        0.0, 0.25, -0.15, 0.1, -0.3, 0.2, 0.05, -0.1, 0.3, -0.2, 0.15, -0.05,
    )
    year_offsets: tuple[float, ...] = (0.0, 0.4, -0.3, 0.2)
    noise_scale: float = 0.0
    n_thermal_plants: int = 1

    # grid wind generator
    grid_lat0: float = -32.0
    grid_dlat: float = 0.25
    grid_n_lat: int = 6
    grid_lon0: float = -72.0
    grid_dlon: float = 0.25
    grid_n_lon: int = 8
    base_flow: float = 6.0
    diurnal_amplitude: float = 1.2
    spatial_amplitude: float = 2.5
    spatial_wavelength_cells: float = 8.0
    travel_cells_per_step: float = 1.0
    grid_noise_scale: float = 0.25
    grid_noise_ar: float = 0.9
    n_locations: int = 3

    def __post_init__(self):
        if self.hours < 2:
            raise ValidationError("scenario needs at least 2 hours")
        if self.n_thermal_plants < 1:
            raise ValidationError("scenario needs at least one thermal plant")
        if self.grid_n_lat < 2 or self.grid_n_lon < 2:
            raise ValidationError("scenario grid needs at least 2 cells per axis")
        if self.spatial_wavelength_cells <= 0:
            raise ValidationError("spatial wavelength must be positive")
        for name in ("noise_scale", "diurnal_amplitude", "spatial_amplitude", "grid_noise_scale"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not (0.0 <= self.grid_noise_ar < 1.0):
            raise ValidationError("grid_noise_ar must lie in [0, 1)")
        if not (1 <= self.n_locations <= self.grid_n_lat * self.grid_n_lon):
            raise ValidationError("n_locations must fit inside the grid")


@dataclass(frozen=True)
class SyntheticData:
    """Output bundle of :func:`generate_synthetic`."""

    scenario: SyntheticScenario
    panel: TimeSeriesPanel
    grid: GridStateSequence
    locations: LocationSet
    #: hourly wind magnitude at each location, shape [n_locations, hours]
    location_winds: np.ndarray
    hourly_timestamps: np.ndarray

    def __iter__(self):
        # allow `panel, grid = generate_synthetic(...)`
        return iter((self.panel, self.grid))


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    noise = rng.standard_normal(n) * sigma
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = phi * acc + noise[i]
        out[i] = acc
    return out


def _exogenous_series(scn: SyntheticScenario, rng: np.random.Generator, hours_of_day, dows):
    n = scn.hours
    solar_shape = np.maximum(0.0, np.sin(np.pi * (hours_of_day - 6) / 12.0))
    solar = 3.0 * solar_shape * (0.75 + 0.25 * np.abs(np.sin(2 * np.pi * np.arange(n) / 197.0)))
    solar = solar + np.maximum(0.0, 0.15 * _ar1(rng, n, 0.8, 0.3)) * solar_shape

    wind = np.maximum(0.0, 2.2 + _ar1(rng, n, 0.9, 0.3) + 0.4 * np.sin(2 * np.pi * (hours_of_day - 3) / 24.0))
    demand = 6.0 + 1.2 * np.sin(2 * np.pi * (hours_of_day - 17) / 24.0) \
        + 0.5 * (dows < 5) + 0.2 * _ar1(rng, n, 0.85, 0.25)
    demand = np.maximum(0.5, demand)
    hydro = np.maximum(0.0, 1.5 + 0.5 * np.sin(2 * np.pi * np.arange(n) / (24.0 * 90.0)) + 0.15 * _ar1(rng, n, 0.9, 0.2))
    geo = np.maximum(0.0, 0.8 + 0.05 * _ar1(rng, n, 0.7, 0.3))
    imports = 0.3 * _ar1(rng, n, 0.8, 0.4)
    return solar, wind, demand, hydro, geo, imports


def _planted_thermal(scn: SyntheticScenario, rng, solar, wind, demand, hydro, geo, imports,
                     months, year_index) -> np.ndarray:
    d_wind = np.diff(wind, prepend=wind[0])
    d_solar = np.diff(solar, prepend=solar[0])
    month_fx = np.asarray(scn.month_offsets)[months - 1]
    year_fx = np.asarray(scn.year_offsets)[np.minimum(year_index, len(scn.year_offsets) - 1)]
    g = (
        scn.alpha
        + scn.beta_solar * solar
        + scn.beta_wind * wind
        + scn.beta_demand * demand
        + scn.beta_wind_ramp * d_wind
        + scn.beta_solar_ramp * d_solar
        + scn.gamma_hydro * hydro
        + scn.gamma_geothermal * geo
        + scn.gamma_import * imports
        + month_fx
        + year_fx
    )
    if scn.noise_scale > 0:
        g = g + rng.standard_normal(scn.hours) * scn.noise_scale
    if np.any(g < 0):
        raise ValidationError(
            "planted thermal series went negative; raise alpha or shrink coefficients"
        )
    return g


def _hourly_grid_fields(scn: SyntheticScenario, rng: np.random.Generator) -> np.ndarray:
    """Hourly [hours, 2, n_lat, n_lon] (u10, v10) fields in m/s."""
    n, nlat, nlon = scn.hours, scn.grid_n_lat, scn.grid_n_lon
    t = np.arange(n)[:, None, None]
    jj = np.arange(nlon)[None, None, :]
    ii = np.arange(nlat)[None, :, None]
    cells_per_hour = scn.travel_cells_per_step / 6.0

    fields = np.empty((n, 2, nlat, nlon))
    for k, (base, phase) in enumerate(((scn.base_flow, 0.0), (0.35 * scn.base_flow, 1.3))):
        diurnal = scn.diurnal_amplitude * np.sin(2 * np.pi * t / 24.0 + phase)
        travelling = scn.spatial_amplitude * np.sin(
            2 * np.pi * (jj - cells_per_hour * t) / scn.spatial_wavelength_cells
            + phase
            + 0.4 * ii / max(nlat - 1, 1)
        )
        noise = np.zeros((n, nlat, nlon))
        if scn.grid_noise_scale > 0:
            innov = rng.standard_normal((n, nlat, nlon)) * scn.grid_noise_scale
            acc = np.zeros((nlat, nlon))
            for s in range(n):
                acc = scn.grid_noise_ar * acc + innov[s]
                noise[s] = acc
        fields[:, k] = base + diurnal + travelling + noise
    return fields


def generate_synthetic(scenario: SyntheticScenario) -> SyntheticData:
    """Generate a panel plus grid sequence with planted ground truth.

    The thermal series is built exactly from the scenario's planted linear
    model (plus Gaussian noise), and the grid wind fields combine a diurnal
    sinusoid, a travelling spatial sinusoid, and AR(1) noise, so both the
    regression and the forecasters have recoverable structure.  The same
    seed always reproduces byte-identical outputs.
    """
    scn = scenario
    start = np.datetime64(scn.start, "s")
    timestamps = as_utc_hours(start + np.arange(scn.hours) * np.timedelta64(3600, "s"))

    hours_of_day = (timestamps.astype("datetime64[h]") - timestamps.astype("datetime64[D]")).astype(np.int64)
    dows = (timestamps.astype("datetime64[D]").astype(np.int64) + 3) % 7
    months = (timestamps.astype("datetime64[M]") - timestamps.astype("datetime64[Y]")).astype(np.int64) + 1
    years = timestamps.astype("datetime64[Y]").astype(np.int64) + 1970
    year_index = years - years[0]

    rng_panel = np.random.default_rng([scn.seed, 1])
    solar, wind, demand, hydro, geo, imports = _exogenous_series(scn, rng_panel, hours_of_day, dows)
    thermal_total = _planted_thermal(
        scn, rng_panel, solar, wind, demand, hydro, geo, imports, months, year_index
    )

    series: dict[tuple[str, Technology], np.ndarray] = {
        ("solar_park", Technology.SOLAR): solar,
        ("wind_fleet", Technology.WIND): wind,
        ("system", Technology.DEMAND): demand,
        ("hydro_dam", Technology.HYDRO): hydro,
        ("geo_field", Technology.GEOTHERMAL): geo,
        ("interconnect", Technology.IMPORT): imports,
    }
    if scn.n_thermal_plants == 1:
        series[("thermal_01", Technology.THERMAL)] = thermal_total
    else:
        shares = rng_panel.dirichlet(np.full(scn.n_thermal_plants, 5.0))
        for p, share in enumerate(shares, start=1):
            series[(f"thermal_{p:02d}", Technology.THERMAL)] = share * thermal_total
    panel = TimeSeriesPanel(
        timestamps=timestamps,
        series=series,
        metadata={"import_sign_convention": "positive = net inflow"},
    )

    rng_grid = np.random.default_rng([scn.seed, 2])
    hourly = _hourly_grid_fields(scn, rng_grid)
    spec = GridSpec(
        lat0=scn.grid_lat0, dlat=scn.grid_dlat, n_lat=scn.grid_n_lat,
        lon0=scn.grid_lon0, dlon=scn.grid_dlon, n_lon=scn.grid_n_lon,
        variables=("u10", "v10"), t0=start, dt=21600,
    )
    six_hourly = hourly[::6].astype(np.float32)
    if six_hourly.shape[0] < 2:
        raise ValidationError("scenario too short for a 6-hourly grid sequence (needs >= 12 h)")
    grid = GridStateSequence(spec=spec, data=six_hourly)

    rng_loc = np.random.default_rng([scn.seed, 3])
    flat = rng_loc.choice(scn.grid_n_lat * scn.grid_n_lon, size=scn.n_locations, replace=False)
    entries = []
    cells = []
    for k, f in enumerate(sorted(int(v) for v in flat), start=1):
        i, j = divmod(f, scn.grid_n_lon)
        entries.append((f"farm_{k:02d}", float(spec.lat_centers[i]), float(spec.lon_centers[j])))
        cells.append((i, j))
    locations = LocationSet(entries=tuple(entries))

    winds = np.stack(
        [np.hypot(hourly[:, 0, i, j], hourly[:, 1, i, j]) for i, j in cells]
    )
    return SyntheticData(
        scenario=scn,
        panel=panel,
        grid=grid,
        locations=locations,
        location_winds=winds,
        hourly_timestamps=timestamps,
    )


def synthetic_fleet(seed: int, hours: int = 1440, n_plants: int = 20,
                    wind_fraction: float = 0.65, noise_scale: float = 0.05):
    """A thermal fleet with per-plant planted wind- or solar-following behavior.

    Returns ``(panel, labels)`` where ``labels[plant_id]`` is the planted
    ``"wind_following"`` / ``"solar_following"`` ground truth.
    """
    if n_plants < 1:
        raise ValidationError("fleet needs at least one plant")
    base = SyntheticScenario(seed=seed, hours=hours, noise_scale=0.0)
    start = np.datetime64(base.start, "s")
    timestamps = as_utc_hours(start + np.arange(hours) * np.timedelta64(3600, "s"))
    hours_of_day = (timestamps.astype("datetime64[h]") - timestamps.astype("datetime64[D]")).astype(np.int64)
    dows = (timestamps.astype("datetime64[D]").astype(np.int64) + 3) % 7

    rng = np.random.default_rng([seed, 4])
    solar, wind, demand, hydro, geo, imports = _exogenous_series(base, rng, hours_of_day, dows)

    n_wind = int(round(wind_fraction * n_plants))
    labels: dict[str, str] = {}
    series: dict[tuple[str, Technology], np.ndarray] = {
        ("solar_park", Technology.SOLAR): solar,
        ("wind_fleet", Technology.WIND): wind,
        ("system", Technology.DEMAND): demand,
        ("hydro_dam", Technology.HYDRO): hydro,
        ("geo_field", Technology.GEOTHERMAL): geo,
        ("interconnect", Technology.IMPORT): imports,
    }
    for p in range(1, n_plants + 1):
        plant = f"thermal_{p:02d}"
        follows_wind = p <= n_wind
        strong = -rng.uniform(0.5, 0.9)
        weak = -rng.uniform(0.02, 0.08)
        b_wind, b_solar = (strong, weak) if follows_wind else (weak, strong)
        g = (
            6.0
            + b_solar * solar
            + b_wind * wind
            + 0.3 * demand
            + rng.standard_normal(hours) * noise_scale
        )
        series[(plant, Technology.THERMAL)] = np.maximum(0.0, g)
        labels[plant] = "wind_following" if follows_wind else "solar_following"
    panel = TimeSeriesPanel(timestamps=timestamps, series=series)
    return panel, labels


def with_noise(scenario: SyntheticScenario, noise_scale: float) -> SyntheticScenario:
    return replace(scenario, noise_scale=noise_scale)
