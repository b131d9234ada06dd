"""Minimum-cost pour selection over a pre-simulated database.

The cost of using a simulated record for a real query is

    cost = |v_start_sim - v_start_real| + |v_received_sim - v_goal| + v_spill_sim

in millilitres.  Selection is an exact linear scan (databases stay at ~10^4
records); ties break toward lower spill, then lower stop angle, then lower
record index.  Queries never interpolate between records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sweep import PourDatabase, PourRecord

COST_MAP_CSV_HEADER = "v_start_ml,v_goal_ml,min_cost_ml,record_index"


class SelectorError(ValueError):
    """Empty database for the query or mismatched containers."""


@dataclass(frozen=True)
class PourQuery:
    """Real-world request: pour v_goal out of a container holding v_start_real."""

    container: str
    v_start_real: float
    v_goal: float

    def __post_init__(self):
        if self.v_start_real < 0.0 or self.v_goal < 0.0:
            raise SelectorError("volumes must be >= 0")
        if self.v_goal > self.v_start_real:
            raise SelectorError(
                f"goal {self.v_goal} mL exceeds available start volume {self.v_start_real} mL"
            )


def cost(record: PourRecord, query: PourQuery) -> float:
    """Start mismatch + received mismatch + simulated spill, in mL."""
    if record.params.container != query.container:
        raise SelectorError(
            f"record is for container {record.params.container!r}, query for {query.container!r}"
        )
    o = record.outcome
    return (
        abs(o.v_start - query.v_start_real)
        + abs(o.v_received - query.v_goal)
        + o.v_spill
    )


def select_best(db: PourDatabase, query: PourQuery) -> tuple[PourRecord, float]:
    """Exact argmin of cost over the queried container's records.

    Tie-break: lower v_spill, then lower theta_stop, then lower record index.
    """
    best = None
    best_key = None
    for index, record in enumerate(db.records):
        if record.params.container != query.container:
            continue
        key = (cost(record, query), record.outcome.v_spill, record.params.theta_stop, index)
        if best_key is None or key < best_key:
            best = record
            best_key = key
    if best is None:
        raise SelectorError(f"database has no records for container {query.container!r}")
    return best, best_key[0]


@dataclass(frozen=True)
class CostMap:
    """Min-cost per (start, target) cell; unpopulated cells are NaN / -1."""

    container: str
    starts: np.ndarray        # (ns,) mL grid
    targets: np.ndarray       # (nt,) mL grid
    cells: np.ndarray         # (ns, nt) min cost, NaN where target > min(start, max received)
    argmin: np.ndarray        # (ns, nt) record index, -1 where unpopulated

    @property
    def populated(self) -> int:
        return int(np.sum(self.argmin >= 0))


def cost_map_cell_count(start_max: float, received_max: float, step: float = 1.0) -> int:
    """Closed-form count of populated (start, target) cells.

    Starts run 0..start_max and targets 0..min(start, received_max), all on a
    `step` grid.  For S = start_max/step and M = received_max/step this is the
    triangular count (M+1)(M+2)/2 plus a full column of M+1 targets for each
    of the S-M remaining starts.
    """
    s = int(np.floor(start_max / step + 1e-9))
    m = int(np.floor(received_max / step + 1e-9))
    if s <= m:
        return (s + 1) * (s + 2) // 2
    return (m + 1) * (m + 2) // 2 + (s - m) * (m + 1)


def cost_map(
    db: PourDatabase,
    container: str,
    start_max: float | None = None,
    step: float = 1.0,
) -> CostMap:
    """Minimum cost for every start volume 0..start_max and every target
    volume up to min(start, max received volume), on a `step` grid."""
    if not step > 0.0:
        raise SelectorError(f"step={step} must be positive")
    records = db.for_container(container)
    if not records:
        raise SelectorError(f"database has no records for container {container!r}")
    indices = [i for i, r in enumerate(db.records) if r.params.container == container]
    received_max = max(r.outcome.v_received for r in records)
    if start_max is None:
        start_max = received_max

    starts = np.arange(0.0, start_max + step / 2, step)
    targets = np.arange(0.0, min(start_max, received_max) + step / 2, step)
    ns, nt = len(starts), len(targets)
    cells = np.full((ns, nt), np.nan)
    argmin = np.full((ns, nt), -1, dtype=np.int64)

    starts_sim = np.array([r.outcome.v_start for r in records])
    received_sim = np.array([r.outcome.v_received for r in records])
    spill_sim = np.array([r.outcome.v_spill for r in records])
    spills = spill_sim
    thetas = np.array([r.params.theta_stop for r in records])
    order = np.arange(len(records))

    for si, s in enumerate(starts):
        start_term = np.abs(starts_sim - s)
        t_limit = min(s, received_max)
        for ti, g in enumerate(targets):
            if g > t_limit + 1e-9:
                break
            costs = start_term + np.abs(received_sim - g) + spill_sim
            # argmin with the documented tie-break (spill, theta, index)
            best = np.lexsort((order, thetas, spills, costs))[0]
            cells[si, ti] = costs[best]
            argmin[si, ti] = indices[best]

    expected = cost_map_cell_count(start_max, min(start_max, received_max), step)
    populated = int(np.sum(argmin >= 0))
    assert populated == expected, f"cell count {populated} != closed form {expected}"
    return CostMap(container=container, starts=starts, targets=targets, cells=cells, argmin=argmin)


def export_cost_map(cm: CostMap, path) -> None:
    """Plot-ready CSV of all populated cells."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(COST_MAP_CSV_HEADER + "\n")
        for si, s in enumerate(cm.starts):
            for ti, g in enumerate(cm.targets):
                if cm.argmin[si, ti] < 0:
                    continue
                fh.write(f"{s:g},{g:g},{cm.cells[si, ti]:.6f},{cm.argmin[si, ti]}\n")


def zero_spill_threshold(db: PourDatabase, container: str, step: float = 1.0) -> float:
    """Largest target volume T such that every target 0..T (step grid) has a
    zero-spill record whose received volume matches within one step."""
    records = db.for_container(container)
    if not records:
        raise SelectorError(f"database has no records for container {container!r}")
    received = np.array(
        [r.outcome.v_received for r in records if r.outcome.v_spill == 0.0]
    )
    if received.size == 0:
        return -step  # no zero-spill pours at all
    g = 0.0
    last_ok = -step
    limit = max(r.outcome.v_received for r in records)
    while g <= limit + step:
        if np.min(np.abs(received - g)) <= step + 1e-9:
            last_ok = g
        else:
            break
        g += step
    return last_ok
