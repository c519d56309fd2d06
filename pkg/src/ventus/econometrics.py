"""Fixed-effects OLS marginal-response model and derived analyses.

The regression relates thermal generation to contemporaneous solar, wind
and demand, one-hour solar/wind ramps, control generation (hydro,
geothermal, imports) and month/year dummy intercepts.  Coefficients are
in GWh per GWh.  Standard errors are classical homoskedastic ones; the
solve goes through an orthogonal decomposition, with normal equations
kept only as a test oracle.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core_data import Technology, TimeSeriesPanel
from .errors import RankDeficientError, ValidationError
from .parallel import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_CONTROLS = (Technology.HYDRO, Technology.GEOTHERMAL, Technology.IMPORT)
SIGNIFICANCE_THRESHOLD = 1.96


@dataclass(frozen=True)
class RegressionSpec:
    """Configuration of the marginal-response regression.

    ``dependent_plant`` selects a single plant's generation as the
    dependent variable; ``None`` means aggregate thermal generation.
    """

    dependent_plant: str | None = None
    controls: tuple[Technology, ...] = DEFAULT_CONTROLS
    month_effects: bool = True
    year_effects: bool = True


@dataclass(frozen=True)
class FitResult:
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    t_stats: dict[str, float]
    residual_variance: float
    n_obs: int
    r_squared: float


class FollowingLabel(enum.Enum):
    WIND_FOLLOWING = "wind_following"
    SOLAR_FOLLOWING = "solar_following"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class PlantClassification:
    plant_id: str
    label: FollowingLabel
    deciding_coefficient: float
    t_stat: float
    tie: bool = False


def _dummies(codes: np.ndarray, prefix: str) -> tuple[np.ndarray, list[str]]:
    """One column per category except the first one present (the reference)."""
    cats = np.unique(codes)
    cols = []
    names = []
    for c in cats[1:]:
        cols.append((codes == c).astype(np.float64))
        names.append(f"{prefix}_{c}")
    if not cols:
        return np.empty((codes.size, 0)), []
    return np.column_stack(cols), names


def build_design(panel: TimeSeriesPanel, spec: RegressionSpec):
    """Assemble (y, X, column names) for the marginal-response regression.

    The first timestamp is dropped (ramp terms are undefined there) and
    rows with any missing value are removed (listwise deletion).
    """
    if spec.dependent_plant is None:
        y = panel.aggregate(Technology.THERMAL)
    else:
        matches = [v for (p, t), v in panel.series.items()
                   if p == spec.dependent_plant and t is Technology.THERMAL]
        if not matches:
            raise ValidationError(f"panel has no thermal series for plant '{spec.dependent_plant}'")
        y = matches[0]

    solar = panel.aggregate(Technology.SOLAR)
    wind = panel.aggregate(Technology.WIND)
    demand = panel.aggregate(Technology.DEMAND)
    wind_ramp = np.diff(wind, prepend=np.nan)
    solar_ramp = np.diff(solar, prepend=np.nan)

    columns = [np.ones(panel.n_hours), solar, wind, demand, wind_ramp, solar_ramp]
    names = ["intercept", "solar", "wind", "demand", "wind_ramp", "solar_ramp"]
    for tech in spec.controls:
        columns.append(panel.aggregate(tech))
        names.append(tech.value)

    ts = panel.timestamps
    months = (ts.astype("datetime64[M]") - ts.astype("datetime64[Y]")).astype(np.int64) + 1
    years = ts.astype("datetime64[Y]").astype(np.int64) + 1970
    if spec.month_effects:
        if np.unique(months).size < 2:
            warnings.warn("only one month present; month dummies dropped", stacklevel=2)
        else:
            m_cols, m_names = _dummies(months, "month")
            columns.append(m_cols)
            names.extend(m_names)
    if spec.year_effects:
        if np.unique(years).size < 2:
            warnings.warn("only one year present; year dummies dropped", stacklevel=2)
        else:
            y_cols, y_names = _dummies(years, "year")
            columns.append(y_cols)
            names.extend(y_names)

    X = np.column_stack(columns)
    keep = np.ones(panel.n_hours, dtype=bool)
    keep[0] = False  # ramps undefined at the first timestamp
    keep &= ~np.isnan(y)
    keep &= ~np.isnan(X).any(axis=1)
    return y[keep], X[keep], names


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        collinear = [names[piv[k]] for k in range(rank, X.shape[1])]
        raise RankDeficientError(
            f"design matrix is rank deficient (rank {rank} of {X.shape[1]}); "
            f"collinear columns: {', '.join(collinear)}",
            collinear_columns=collinear,
        )


def fit_fixed_effects(panel: TimeSeriesPanel, spec: RegressionSpec | None = None) -> FitResult:
    """Fit the marginal-response regression by least squares.

    Solves via QR/SVD orthogonal decomposition; classical covariance
    ``sigma^2 (X'X)^{-1}`` supplies standard errors and t statistics.
    """
    spec = spec or RegressionSpec()
    y, X, names = build_design(panel, spec)
    n, p = X.shape
    if n < p:
        raise ValidationError(f"fewer usable rows ({n}) than design columns ({p})")
    _check_rank(X, names)

    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = n - p
    sigma2 = rss / dof if dof > 0 else np.nan

    r = np.linalg.qr(X, mode="r")
    r_inv = scipy.linalg.solve_triangular(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))

    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0

    coefficients = dict(zip(names, beta.tolist()))
    standard_errors = dict(zip(names, se.tolist()))
    t_stats = {
        k: (coefficients[k] / standard_errors[k]) if standard_errors[k] > 0 else np.nan
        for k in names
    }
    return FitResult(
        coefficients=coefficients,
        standard_errors=standard_errors,
        t_stats=t_stats,
        residual_variance=sigma2,
        n_obs=n,
        r_squared=r2,
    )


def _classify_one(args) -> PlantClassification:
    panel, plant, base_spec, threshold = args
    try:
        fit = fit_fixed_effects(panel, RegressionSpec(
            dependent_plant=plant,
            controls=base_spec.controls,
            month_effects=base_spec.month_effects,
            year_effects=base_spec.year_effects,
        ))
    except ValidationError as exc:
        raise ValidationError(f"plant '{plant}': {exc}") from exc

    b_solar, t_solar = fit.coefficients["solar"], fit.t_stats["solar"]
    b_wind, t_wind = fit.coefficients["wind"], fit.t_stats["wind"]
    sig_solar = np.isfinite(t_solar) and abs(t_solar) > threshold
    sig_wind = np.isfinite(t_wind) and abs(t_wind) > threshold

    if not sig_solar and not sig_wind:
        decided = b_wind if abs(b_wind) >= abs(b_solar) else b_solar
        decided_t = t_wind if abs(b_wind) >= abs(b_solar) else t_solar
        return PlantClassification(plant, FollowingLabel.UNCLASSIFIED, decided, decided_t)
    if sig_wind and not sig_solar:
        return PlantClassification(plant, FollowingLabel.WIND_FOLLOWING, b_wind, t_wind)
    if sig_solar and not sig_wind:
        return PlantClassification(plant, FollowingLabel.SOLAR_FOLLOWING, b_solar, t_solar)
    # both significant: the larger magnitude decides, ties go to wind
    if abs(b_wind) > abs(b_solar):
        return PlantClassification(plant, FollowingLabel.WIND_FOLLOWING, b_wind, t_wind)
    if abs(b_solar) > abs(b_wind):
        return PlantClassification(plant, FollowingLabel.SOLAR_FOLLOWING, b_solar, t_solar)
    logger.warning("plant %s: |solar| == |wind| exactly; tie broken toward wind", plant)
    return PlantClassification(plant, FollowingLabel.WIND_FOLLOWING, b_wind, t_wind, tie=True)


def classify_plants(panel: TimeSeriesPanel, plants=None, *,
                    spec: RegressionSpec | None = None,
                    threshold: float = SIGNIFICANCE_THRESHOLD,
                    jobs: int = 1) -> list[PlantClassification]:
    """Label each thermal plant wind-/solar-following from its own fit.

    The label is decided by the larger-magnitude coefficient among the
    statistically significant ones (|t| > ``threshold``); without any
    significant coefficient the plant stays unclassified.  Output is
    ordered by plant id regardless of ``jobs``.
    """
    spec = spec or RegressionSpec()
    if plants is None:
        plants = panel.plants(Technology.THERMAL)
    plants = sorted(plants)
    work = [(panel, plant, spec, threshold) for plant in plants]
    return parallel_map(_classify_one, work, jobs=jobs)


def hourly_profile(panel: TimeSeriesPanel, technology: Technology, year: int,
                   *, normalize: bool = False) -> np.ndarray:
    """Mean and population std of generation by hour of day over one year.

    Returns an array of shape (24, 2): column 0 the mean, column 1 the
    standard deviation, in GWh (or per unit of installed capacity when
    ``normalize`` is set, which requires ``capacity_gwh`` metadata).
    """
    values = panel.aggregate(technology)
    years = panel.timestamps.astype("datetime64[Y]").astype(np.int64) + 1970
    in_year = years == year
    if not np.any(in_year):
        raise ValidationError(f"panel has no data for year {year}")
    hours = (panel.timestamps.astype("datetime64[h]")
             - panel.timestamps.astype("datetime64[D]")).astype(np.int64)

    scale = 1.0
    if normalize:
        capacities = panel.metadata.get("capacity_gwh", {})
        cap = capacities.get(technology.value)
        if cap is None:
            raise ValidationError(
                f"normalization requested but no capacity_gwh metadata for '{technology.value}'"
            )
        if cap <= 0:
            raise ValidationError(f"capacity for '{technology.value}' must be positive, got {cap}")
        scale = float(cap)

    out = np.empty((24, 2))
    for h in range(24):
        sel = values[in_year & (hours == h)]
        sel = sel[~np.isnan(sel)]
        if sel.size == 0:
            raise ValidationError(f"no observations at hour {h} in year {year}")
        out[h, 0] = sel.mean() / scale
        out[h, 1] = sel.std(ddof=0) / scale
    return out
