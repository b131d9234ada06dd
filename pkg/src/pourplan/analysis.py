"""Regression metrics and report tables for pour databases and real pours.

`rmse`, `mape` and `r2` follow the standard definitions; MAPE uses the
actual (measured) volume as denominator.  Reports are plain CSV-shaped
tables; plotting is left to external tools.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sweep import PourDatabase

SPILL_REPORT_CSV_HEADER = "theta_stop_deg,v_received_ml,v_spill_ml"
REAL_RESULTS_CSV_HEADER = "container,v_start_real_ml,v_goal_ml,record_index,v_received_real_ml,v_spill_real_ml"


class AnalysisError(ValueError):
    """Invalid series or malformed real-results file."""


@dataclass(frozen=True)
class PairedSeries:
    """Predicted vs actual volumes (mL), aligned element-wise."""

    predicted: np.ndarray
    actual: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.predicted, dtype=float).ravel()
        a = np.asarray(self.actual, dtype=float).ravel()
        object.__setattr__(self, "predicted", p)
        object.__setattr__(self, "actual", a)
        if p.size == 0 or p.size != a.size:
            raise AnalysisError("predicted and actual must have equal nonzero length")
        if (p < 0).any() or (a < 0).any():
            raise AnalysisError("volumes must be non-negative")


def rmse(series: PairedSeries) -> float:
    """Root mean squared error, mL."""
    d = series.predicted - series.actual
    return float(np.sqrt(np.mean(d * d)))


def mape(series: PairedSeries) -> float:
    """Mean absolute percentage error, percent; requires all actual > 0."""
    if (series.actual == 0).any():
        raise AnalysisError("MAPE is undefined when any actual value is zero")
    return float(np.mean(np.abs(series.predicted - series.actual) / series.actual) * 100.0)


def r2(series: PairedSeries) -> float:
    """Coefficient of determination; requires a non-constant actual series."""
    ss_tot = float(np.sum((series.actual - series.actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise AnalysisError("R² is undefined for a constant actual series")
    ss_res = float(np.sum((series.predicted - series.actual) ** 2))
    return 1.0 - ss_res / ss_tot


def max_abs_error(series: PairedSeries) -> float:
    return float(np.max(np.abs(series.predicted - series.actual)))


# -- reports ----------------------------------------------------------------


def spill_report(db: PourDatabase, container: str | None = None) -> list[tuple[float, float, float]]:
    """(theta_stop_deg, v_received, v_spill) per record, sorted by angle then
    received volume; plot-ready for a spill-vs-received scatter."""
    records = db.records if container is None else db.for_container(container)
    if not records:
        raise AnalysisError("database has no records" + (f" for {container!r}" if container else ""))
    rows = [
        (float(np.degrees(r.params.theta_stop)), r.outcome.v_received, r.outcome.v_spill)
        for r in records
    ]
    rows.sort(key=lambda row: (row[0], row[1]))
    return rows


def write_spill_report(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SPILL_REPORT_CSV_HEADER + "\n")
        for theta, received, spill in rows:
            fh.write(f"{theta:g},{received:g},{spill:g}\n")


@dataclass(frozen=True)
class RealPour:
    container: str
    v_start_real_ml: float
    v_goal_ml: float
    record_index: int
    v_received_real_ml: float
    v_spill_real_ml: float


def load_real_results(path) -> list[RealPour]:
    """Parse a measured-pour CSV (see REAL_RESULTS_CSV_HEADER for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REAL_RESULTS_CSV_HEADER:
        raise AnalysisError(
            f"real-results file must start with header {REAL_RESULTS_CSV_HEADER!r}"
        )
    pours = []
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise AnalysisError(f"row {row_no}: expected 6 columns, got {len(parts)}")
        try:
            pours.append(
                RealPour(
                    container=parts[0],
                    v_start_real_ml=float(parts[1]),
                    v_goal_ml=float(parts[2]),
                    record_index=int(parts[3]),
                    v_received_real_ml=float(parts[4]),
                    v_spill_real_ml=float(parts[5]),
                )
            )
        except ValueError as exc:
            raise AnalysisError(f"row {row_no}: {exc}") from None
    if not pours:
        raise AnalysisError("real-results file contains no pours")
    return pours


@dataclass(frozen=True)
class SimToRealReport:
    """Received-volume errors plus the spill comparison, simulation vs reality."""

    n_pours: int
    rmse_received_ml: float
    mape_received_pct: float | None     # None when a measured volume is zero
    max_error_received_ml: float
    n_spill_real_below_sim: int
    mean_spill_below_diff_ml: float
    max_spill_below_diff_ml: float
    n_spill_real_above_sim: int
    mean_spill_above_diff_ml: float
    max_spill_above_diff_ml: float

    def lines(self) -> list[str]:
        mape_text = "n/a" if self.mape_received_pct is None else f"{self.mape_received_pct:.1f}%"
        return [
            f"pours,{self.n_pours}",
            f"rmse_received_ml,{self.rmse_received_ml:.3f}",
            f"mape_received_pct,{mape_text}",
            f"max_error_received_ml,{self.max_error_received_ml:.3f}",
            f"spill_real_below_sim_count,{self.n_spill_real_below_sim}",
            f"spill_real_below_sim_mean_ml,{self.mean_spill_below_diff_ml:.3f}",
            f"spill_real_below_sim_max_ml,{self.max_spill_below_diff_ml:.3f}",
            f"spill_real_above_sim_count,{self.n_spill_real_above_sim}",
            f"spill_real_above_sim_mean_ml,{self.mean_spill_above_diff_ml:.3f}",
            f"spill_real_above_sim_max_ml,{self.max_spill_above_diff_ml:.3f}",
        ]


def sim_to_real_report(db: PourDatabase, real_results_path) -> SimToRealReport:
    """Compare measured pours against the simulated records they executed."""
    pours = load_real_results(real_results_path)
    sim_received = []
    sim_spill = []
    for row_no, pour in enumerate(pours, start=2):
        if not (0 <= pour.record_index < len(db.records)):
            raise AnalysisError(
                f"row {row_no}: record_index {pour.record_index} not in database "
                f"(0..{len(db.records) - 1})"
            )
        record = db.records[pour.record_index]
        if record.params.container != pour.container:
            raise AnalysisError(
                f"row {row_no}: record {pour.record_index} is for "
                f"{record.params.container!r}, not {pour.container!r}"
            )
        sim_received.append(record.outcome.v_received)
        sim_spill.append(record.outcome.v_spill)

    real_received = np.array([p.v_received_real_ml for p in pours])
    real_spill = np.array([p.v_spill_real_ml for p in pours])
    sim_received = np.array(sim_received)
    sim_spill = np.array(sim_spill)

    received = PairedSeries(predicted=sim_received, actual=real_received)
    mape_value = None if (real_received == 0).any() else mape(received)

    below = real_spill < sim_spill
    above = real_spill > sim_spill
    below_diff = (sim_spill - real_spill)[below]
    above_diff = (real_spill - sim_spill)[above]
    return SimToRealReport(
        n_pours=len(pours),
        rmse_received_ml=rmse(received),
        mape_received_pct=mape_value,
        max_error_received_ml=max_abs_error(received),
        n_spill_real_below_sim=int(below.sum()),
        mean_spill_below_diff_ml=float(below_diff.mean()) if below_diff.size else 0.0,
        max_spill_below_diff_ml=float(below_diff.max()) if below_diff.size else 0.0,
        n_spill_real_above_sim=int(above.sum()),
        mean_spill_above_diff_ml=float(above_diff.mean()) if above_diff.size else 0.0,
        max_spill_above_diff_ml=float(above_diff.max()) if above_diff.size else 0.0,
    )
