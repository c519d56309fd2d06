"""Hybrid forecast assembly and skill evaluation.

The hybrid stitches an hourly short-range forecast (up to the handoff
lead, 48 h by default) onto a 6-hourly medium-range forecast (out to
10 days).  Skill is reported per lead as RMSE against the observations,
normalized by a baseline forecast's RMSE, together with the first lead
beyond which the model stays strictly better than the baseline and a
summary over the day-ahead commitment window (14-38 h by default).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, ValidationError

DEFAULT_HANDOFF_HOURS = 48
DEFAULT_MAX_LEAD_HOURS = 240
DEFAULT_WINDOW = (14, 38)


def rmse(predictions, truths) -> float:
    """Root mean squared error over all paired elements."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise ValidationError("rmse of empty input is undefined")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class RegimeForecast:
    """Predictions on one regime's lead grid: values[loc, issue, lead]."""

    lead_hours: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        leads = np.asarray(self.lead_hours, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if leads.ndim != 1 or np.any(np.diff(leads) <= 0):
            raise ValidationError("lead grid must be strictly increasing")
        if values.ndim != 3 or values.shape[2] != leads.size:
            raise ValidationError(
                f"values shape {values.shape} must be [locations, issues, {leads.size} leads]"
            )
        object.__setattr__(self, "lead_hours", leads)
        object.__setattr__(self, "values", values)

    def at(self, lead: int) -> np.ndarray:
        hits = np.nonzero(self.lead_hours == lead)[0]
        if hits.size == 0:
            raise CoverageError(f"lead {lead}h missing from regime grid")
        return self.values[:, :, hits[0]]


@dataclass(frozen=True)
class ForecastBundle:
    """Per (location, issue, lead) forecasts from each source plus the truth.

    The lead grid is hourly up to the handoff and 6-hourly beyond it;
    ``short_term``/``medium_term`` are NaN outside their regimes (both are
    present at the handoff lead), and ``point`` is the stitched hybrid
    forecast used for scoring.
    """

    locations: tuple[str, ...]
    issue_times: np.ndarray
    lead_hours: np.ndarray
    truth: np.ndarray
    short_term: np.ndarray
    medium_term: np.ndarray
    baseline: np.ndarray
    point: np.ndarray
    handoff_hours: int

    def __post_init__(self):
        shape = (len(self.locations), len(self.issue_times), len(self.lead_hours))
        for name in ("truth", "short_term", "medium_term", "baseline", "point"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"{name} shape {arr.shape} != {shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lead_hours", np.asarray(self.lead_hours, dtype=np.int64))
        predicted = ~(np.isnan(self.short_term) & np.isnan(self.medium_term)
                      & np.isnan(self.baseline) & np.isnan(self.point))
        if np.any(np.isnan(self.truth) & predicted):
            raise ValidationError("truth must be present wherever any prediction is present")


def hybrid_lead_grid(handoff_hours: int = DEFAULT_HANDOFF_HOURS,
                     max_lead_hours: int = DEFAULT_MAX_LEAD_HOURS) -> np.ndarray:
    """Hourly leads through the handoff, then 6-hourly out to the maximum."""
    if handoff_hours < 1 or max_lead_hours < handoff_hours:
        raise ValidationError("need 1 <= handoff <= max lead")
    hourly = np.arange(1, handoff_hours + 1)
    six_hourly = np.arange(6 * (handoff_hours // 6 + 1), max_lead_hours + 1, 6)
    return np.concatenate([hourly, six_hourly])


def stitch_hybrid(short: RegimeForecast, medium: RegimeForecast, *,
                  baseline: RegimeForecast, truth: RegimeForecast,
                  locations, issue_times,
                  handoff_hours: int = DEFAULT_HANDOFF_HOURS,
                  max_lead_hours: int = DEFAULT_MAX_LEAD_HOURS) -> ForecastBundle:
    """Combine the two temporal regimes into one gap-free bundle.

    The short model must cover every hourly lead up to the handoff and
    the medium model every 6-hourly lead from the handoff to the
    maximum; a hole raises a coverage error naming the missing lead.
    The point forecast uses the short model at and below the handoff.
    """
    leads = hybrid_lead_grid(handoff_hours, max_lead_hours)
    n_loc, n_issue = len(tuple(locations)), len(issue_times)
    for rf, name in ((short, "short"), (medium, "medium"), (baseline, "baseline"), (truth, "truth")):
        if rf.values.shape[:2] != (n_loc, n_issue):
            raise ValidationError(f"{name} forecast has mismatched location/issue axes")

    shape = (n_loc, n_issue, leads.size)
    short_vals = np.full(shape, np.nan)
    medium_vals = np.full(shape, np.nan)
    baseline_vals = np.empty(shape)
    truth_vals = np.empty(shape)
    point = np.empty(shape)
    for k, lead in enumerate(leads):
        lead = int(lead)
        in_short = lead <= handoff_hours
        in_medium = lead >= handoff_hours
        if in_short:
            try:
                short_vals[:, :, k] = short.at(lead)
            except CoverageError:
                raise CoverageError(f"short model missing lead {lead}h") from None
        if in_medium:
            try:
                medium_vals[:, :, k] = medium.at(lead)
            except CoverageError:
                raise CoverageError(f"medium model missing lead {lead}h") from None
        try:
            baseline_vals[:, :, k] = baseline.at(lead)
            truth_vals[:, :, k] = truth.at(lead)
        except CoverageError as exc:
            raise CoverageError(f"baseline/truth coverage hole: {exc}") from None
        point[:, :, k] = short_vals[:, :, k] if in_short else medium_vals[:, :, k]

    return ForecastBundle(
        locations=tuple(str(loc) for loc in locations),
        issue_times=np.asarray(issue_times),
        lead_hours=leads,
        truth=truth_vals,
        short_term=short_vals,
        medium_term=medium_vals,
        baseline=baseline_vals,
        point=point,
        handoff_hours=handoff_hours,
    )


@dataclass(frozen=True)
class SkillReport:
    lead_hours: np.ndarray
    rmse_model: np.ndarray
    rmse_baseline: np.ndarray
    normalized_rmse: np.ndarray
    improvement: np.ndarray
    crossover_lead: int | None
    window: tuple[int, int]
    window_leads: np.ndarray
    window_rmse_model: float
    window_rmse_baseline: float
    window_improvement_range: tuple[float, float]
    improvement_range: tuple[float, float]


def _per_lead_rmse(values: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-lead RMSE pooled over locations and issue times."""
    err2 = (values - truth) ** 2
    return np.sqrt(np.nanmean(err2, axis=(0, 1)))


def skill_report(bundle: ForecastBundle, *, window: tuple[int, int] = DEFAULT_WINDOW) -> SkillReport:
    """Score the stitched forecast against the baseline per lead time."""
    if np.all(np.isnan(bundle.baseline)):
        raise ValidationError("bundle has no baseline forecast")
    lo, hi = window
    if lo > hi:
        raise ValidationError(f"window {window} is empty")

    rmse_model = _per_lead_rmse(bundle.point, bundle.truth)
    rmse_base = _per_lead_rmse(bundle.baseline, bundle.truth)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = rmse_model / rmse_base
    improvement = 1.0 - normalized

    better = rmse_model < rmse_base
    crossover = None
    for k in range(better.size):
        if np.all(better[k:]):
            crossover = int(bundle.lead_hours[k])
            break

    in_window = (bundle.lead_hours >= lo) & (bundle.lead_hours <= hi)
    if not np.any(in_window):
        raise ValidationError(f"no leads inside window [{lo}, {hi}] h")
    return SkillReport(
        lead_hours=bundle.lead_hours.copy(),
        rmse_model=rmse_model,
        rmse_baseline=rmse_base,
        normalized_rmse=normalized,
        improvement=improvement,
        crossover_lead=crossover,
        window=(int(lo), int(hi)),
        window_leads=bundle.lead_hours[in_window].copy(),
        window_rmse_model=float(rmse_model[in_window].mean()),
        window_rmse_baseline=float(rmse_base[in_window].mean()),
        window_improvement_range=(
            float(improvement[in_window].min()), float(improvement[in_window].max())
        ),
        improvement_range=(float(improvement.min()), float(improvement.max())),
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _csv_text(report: SkillReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lead_hours", "rmse_model", "rmse_baseline", "normalized_rmse", "improvement"])
    for k, lead in enumerate(report.lead_hours):
        writer.writerow([
            int(lead),
            f"{report.rmse_model[k]:.17g}",
            f"{report.rmse_baseline[k]:.17g}",
            f"{report.normalized_rmse[k]:.17g}",
            f"{report.improvement[k]:.17g}",
        ])
    return buf.getvalue()


def load_skill_csv(path):
    """Read back a skill.csv; returns dict of column name -> ndarray."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    cols = {}
    for name in ("lead_hours", "rmse_model", "rmse_baseline", "normalized_rmse", "improvement"):
        cols[name] = np.array([float(r[name]) for r in rows])
    return cols


def _polyline(xs, ys, x_range, y_range, frame) -> str:
    x0, y0, width, height = frame
    xmin, xmax = x_range
    ymin, ymax = y_range
    span_x = (xmax - xmin) or 1.0
    span_y = (ymax - ymin) or 1.0
    pts = []
    for x, y in zip(xs, ys):
        if not np.isfinite(y):
            continue
        px = x0 + (x - xmin) / span_x * width
        py = y0 + height - (y - ymin) / span_y * height
        pts.append(f"{px:.2f},{py:.2f}")
    return " ".join(pts)


def _svg_text(report: SkillReport) -> str:
    leads = report.lead_hours.astype(float)
    x_range = (float(leads.min()), float(leads.max()))
    panels = []

    rmax = float(np.nanmax([report.rmse_model.max(), report.rmse_baseline.max()])) or 1.0
    frame1 = (60, 30, 420, 180)
    panels.append(
        f'<g><rect x="{frame1[0]}" y="{frame1[1]}" width="{frame1[2]}" height="{frame1[3]}" '
        'fill="none" stroke="#888"/>'
        f'<text x="{frame1[0]}" y="20" font-size="12">RMSE by lead time (model vs baseline)</text>'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" '
        f'points="{_polyline(leads, report.rmse_model, x_range, (0, rmax), frame1)}"/>'
        f'<polyline fill="none" stroke="#7f7f7f" stroke-width="1.5" stroke-dasharray="4 3" '
        f'points="{_polyline(leads, report.rmse_baseline, x_range, (0, rmax), frame1)}"/>'
        "</g>"
    )

    finite = report.normalized_rmse[np.isfinite(report.normalized_rmse)]
    nmax = float(max(finite.max() if finite.size else 1.0, 1.1))
    frame2 = (60, 250, 420, 180)
    unity_y = frame2[1] + frame2[3] - (1.0 - 0.0) / (nmax or 1.0) * frame2[3]
    panels.append(
        f'<g><rect x="{frame2[0]}" y="{frame2[1]}" width="{frame2[2]}" height="{frame2[3]}" '
        'fill="none" stroke="#888"/>'
        f'<text x="{frame2[0]}" y="242" font-size="12">Normalized RMSE (1.0 = baseline)</text>'
        f'<line x1="{frame2[0]}" y1="{unity_y:.2f}" x2="{frame2[0] + frame2[2]}" y2="{unity_y:.2f}" '
        'stroke="#d62728" stroke-dasharray="2 3"/>'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" '
        f'points="{_polyline(leads, report.normalized_rmse, x_range, (0, nmax), frame2)}"/>'
        "</g>"
    )
    body = "".join(panels)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        '<svg xmlns="http://www.w3.org/2000/svg" width="520" height="470" '
        'viewBox="0 0 520 470">'
        f"{body}</svg>\n"
    )


def emit_report(report: SkillReport, out_dir) -> dict[str, Path]:
    """Write ``skill.csv`` and ``skill.svg`` into ``out_dir``.

    CSV values carry 17 significant digits, so reloading reproduces the
    in-memory float64 numbers exactly.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "skill.csv"
        csv_path.write_text(_csv_text(report), encoding="utf-8")
        svg_path = out / "skill.svg"
        svg_path.write_text(_svg_text(report), encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot write report into {out}: {exc}") from exc
    return {"csv": csv_path, "svg": svg_path}
