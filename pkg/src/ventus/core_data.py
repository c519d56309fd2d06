"""Shared domain types: hourly generation panels, regular lat-lon grids,
location sets and calendar covariates.

All types are immutable after construction (their arrays are frozen), so
they are safe to hand to parallel readers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import OutOfDomainError, ValidationError

HOUR = np.timedelta64(1, "h")
SECONDS_PER_DAY = 86400


class Technology(enum.Enum):
    THERMAL = "thermal"
    SOLAR = "solar"
    WIND = "wind"
    HYDRO = "hydro"
    GEOTHERMAL = "geothermal"
    IMPORT = "import"
    DEMAND = "demand"


#: Technologies whose energy values must be non-negative.  Imports and demand
#: follow their own sign conventions, declared in panel metadata.
GENERATION_TECHNOLOGIES = frozenset(
    {
        Technology.THERMAL,
        Technology.SOLAR,
        Technology.WIND,
        Technology.HYDRO,
        Technology.GEOTHERMAL,
    }
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def as_utc_hours(timestamps) -> np.ndarray:
    """Normalize assorted timestamp input to a datetime64[s] array on exact hours."""
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    if ts.ndim != 1 or ts.size == 0:
        raise ValidationError("timestamps must be a non-empty 1-D sequence")
    on_hour = ts.astype("datetime64[h]").astype("datetime64[s]")
    if not np.array_equal(on_hour, ts):
        bad = ts[on_hour != ts][0]
        raise ValidationError(f"timestamp {bad} is not aligned to an exact hour")
    return ts


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Aligned hourly records of energy by (plant, technology), in GWh.

    Missing observations are encoded as NaN; they are never silently
    dropped, and modelling code decides how to treat them.
    """

    timestamps: np.ndarray
    series: Mapping[tuple[str, Technology], np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = as_utc_hours(self.timestamps)
        if ts.size > 1:
            steps = np.diff(ts).astype("timedelta64[s]").astype(np.int64)
            if not np.all(steps == 3600):
                first_bad = int(np.argmax(steps != 3600))
                raise ValidationError(
                    "timestamps must increase in constant 1-hour steps; "
                    f"step after {ts[first_bad]} is {steps[first_bad]} s"
                )
        object.__setattr__(self, "timestamps", _freeze(ts))

        clean: dict[tuple[str, Technology], np.ndarray] = {}
        for key, values in self.series.items():
            plant, tech = key
            if not isinstance(tech, Technology):
                raise ValidationError(f"series key {key!r} has a non-Technology member")
            vals = np.asarray(values, dtype=np.float64)
            if vals.shape != ts.shape:
                raise ValidationError(
                    f"series {plant}/{tech.value} has {vals.size} values "
                    f"for {ts.size} timestamps"
                )
            present = ~np.isnan(vals)
            if not np.all(np.isfinite(vals[present])):
                raise ValidationError(f"series {plant}/{tech.value} contains non-finite values")
            if tech in GENERATION_TECHNOLOGIES and np.any(vals[present] < 0):
                raise ValidationError(f"series {plant}/{tech.value} has negative generation")
            clean[(str(plant), tech)] = _freeze(vals)
        object.__setattr__(self, "series", clean)

    @property
    def n_hours(self) -> int:
        return int(self.timestamps.size)

    def plants(self, technology: Technology | None = None) -> list[str]:
        return sorted(
            plant
            for plant, tech in self.series.keys()
            if technology is None or tech is technology
        )

    def aggregate(self, technology: Technology) -> np.ndarray:
        """Sum all series of one technology; NaN propagates (missing stays missing)."""
        members = [v for (_, tech), v in self.series.items() if tech is technology]
        if not members:
            raise ValidationError(f"panel has no series of technology '{technology.value}'")
        return np.sum(members, axis=0)


@dataclass(frozen=True)
class GridSpec:
    """Geometry and variable layout of a regular lat-lon grid."""

    lat0: float
    dlat: float
    n_lat: int
    lon0: float
    dlon: float
    n_lon: int
    variables: tuple[str, ...]
    t0: np.datetime64
    dt: int  # seconds between states

    def __post_init__(self):
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValidationError("grid steps dlat/dlon must be positive")
        if self.n_lat < 2 or self.n_lon < 2:
            raise ValidationError("grid needs at least 2 cells per axis")
        variables = tuple(str(v) for v in self.variables)
        if not variables:
            raise ValidationError("grid needs at least one variable")
        if len(set(variables)) != len(variables):
            raise ValidationError("grid variable names must be unique")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "t0", np.datetime64(self.t0, "s"))
        dt = int(self.dt)
        if dt <= 0 or SECONDS_PER_DAY % dt != 0:
            raise ValidationError(f"dt={dt} must be positive and divide 86400")
        object.__setattr__(self, "dt", dt)

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def lat_centers(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.n_lat)

    @property
    def lon_centers(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.n_lon)

    def variable_index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise ValidationError(f"grid has no variable '{name}'") from None

    def times(self, n_times: int) -> np.ndarray:
        return self.t0 + np.arange(n_times) * np.timedelta64(self.dt, "s")


@dataclass(frozen=True)
class GridStateSequence:
    """Time-ordered gridded states, indexed ``[time][variable][lat][lon]``.

    Stored as float32, matching the on-disk tensor format bit for bit.
    """

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        expected = (self.spec.n_variables, self.spec.n_lat, self.spec.n_lon)
        if data.ndim != 4 or data.shape[1:] != expected:
            raise ValidationError(
                f"grid data shape {data.shape} does not match spec [T]{list(expected)}"
            )
        if data.shape[0] < 2:
            raise ValidationError("grid sequence needs at least 2 time steps")
        if not np.all(np.isfinite(data)):
            raise ValidationError("grid data contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n_times(self) -> int:
        return int(self.data.shape[0])

    def variable(self, name: str) -> np.ndarray:
        return self.data[:, self.spec.variable_index(name)]


@dataclass(frozen=True)
class LocationSet:
    """Named points in degrees, e.g. interpolated wind-farm sites."""

    entries: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        entries = tuple((str(n), float(lat), float(lon)) for n, lat, lon in self.entries)
        names = [n for n, _, _ in entries]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise ValidationError(f"duplicate location name '{dup}'")
        object.__setattr__(self, "entries", entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [n for n, _, _ in self.entries]


def _snap_axis(value: float, origin: float, step: float, count: int, axis: str, name: str) -> int:
    u = (value - origin) / step
    if u < -0.5 - 1e-9 or u > count - 0.5 + 1e-9:
        raise OutOfDomainError(
            f"location '{name}': {axis}={value} lies outside the grid "
            f"(centers {origin} .. {origin + step * (count - 1)})"
        )
    base = math.floor(u)
    # Equidistant between two centers -> lower index wins.
    idx = base if (u - base) <= 0.5 else base + 1
    return min(max(idx, 0), count - 1)


def snap_to_grid(locations: LocationSet, spec: GridSpec) -> dict[str, tuple[int, int]]:
    """Map each location to the nearest grid cell center (planar lat/lon distance)."""
    out: dict[str, tuple[int, int]] = {}
    for name, lat, lon in locations:
        i = _snap_axis(lat, spec.lat0, spec.dlat, spec.n_lat, "lat", name)
        j = _snap_axis(lon, spec.lon0, spec.dlon, spec.n_lon, "lon", name)
        out[name] = (i, j)
    return out


@dataclass(frozen=True)
class CalendarCovariates:
    """Hour-of-day, day-of-week and month, raw and as sine/cosine pairs."""

    hour: np.ndarray          # 0..23
    day_of_week: np.ndarray   # 0=Monday .. 6=Sunday
    month: np.ndarray         # 1..12
    hour_sin: np.ndarray
    hour_cos: np.ndarray
    dow_sin: np.ndarray
    dow_cos: np.ndarray
    month_sin: np.ndarray
    month_cos: np.ndarray

    COLUMN_NAMES = (
        "hour", "day_of_week", "month",
        "hour_sin", "hour_cos", "dow_sin", "dow_cos", "month_sin", "month_cos",
    )

    def matrix(self) -> np.ndarray:
        """Stack all nine columns into an [n, 9] float matrix."""
        return np.column_stack([getattr(self, c).astype(np.float64) for c in self.COLUMN_NAMES])


def calendar_features(timestamps) -> CalendarCovariates:
    """Compute calendar covariates for UTC instants.

    Encoded pairs satisfy sin^2 + cos^2 = 1 on each sample; angles use the
    natural period of each field (24 h, 7 d, 12 months).
    """
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    hours = (ts.astype("datetime64[h]") - ts.astype("datetime64[D]")).astype(np.int64)
    days = ts.astype("datetime64[D]").astype(np.int64)
    dow = (days + 3) % 7  # 1970-01-01 was a Thursday
    months = (ts.astype("datetime64[M]") - ts.astype("datetime64[Y]")).astype(np.int64) + 1

    hour_angle = 2.0 * np.pi * hours / 24.0
    dow_angle = 2.0 * np.pi * dow / 7.0
    month_angle = 2.0 * np.pi * (months - 1) / 12.0
    return CalendarCovariates(
        hour=_freeze(hours),
        day_of_week=_freeze(dow),
        month=_freeze(months),
        hour_sin=_freeze(np.sin(hour_angle)),
        hour_cos=_freeze(np.cos(hour_angle)),
        dow_sin=_freeze(np.sin(dow_angle)),
        dow_cos=_freeze(np.cos(dow_angle)),
        month_sin=_freeze(np.sin(month_angle)),
        month_cos=_freeze(np.cos(month_angle)),
    )
