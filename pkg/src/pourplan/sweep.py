"""Parameter sweeps over the 4D pour space and the resulting databases.

A sweep enumerates (container, v_start, theta_stop, t_stop) on a Cartesian
grid in that (deterministic) order, simulates one scene per grid point and
stores the outcomes.  Angular velocity and the start placement are held
constant across a database.  Scene seeds derive from the database seed and
the grid index, so a sweep is reproducible record-for-record no matter how
many workers executed it.
"""

from __future__ import annotations

import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .containers import ContainerSpec, specs_hash
from .fluidsim import PourOutcome, PourParams, SimConfig, make_scene, simulate_pour
from .kinematics import DEFAULT_OMEGA

log = logging.getLogger(__name__)

DB_FORMAT_VERSION = "1"
DB_CSV_HEADER = "container,v_start_ml,theta_stop_deg,t_stop_s,seed,v_received_ml,v_spill_ml,v_remaining_ml"


class SweepError(ValueError):
    """Bad grid configuration or database file."""


class DatabaseFormatError(SweepError):
    """A pour database file is malformed or from an incompatible version."""


def derive_seed(database_seed: int, index: int) -> int:
    """Stable 63-bit scene seed from the database seed and grid index."""
    digest = hashlib.blake2b(f"{database_seed}:{index}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little") >> 1


def inclusive_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    """start, start+step, ... up to stop (inclusive within float noise)."""
    if not step > 0.0:
        raise SweepError(f"step={step} must be positive")
    if stop < start:
        raise SweepError(f"empty range: stop={stop} < start={start}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(start + k * step) for k in range(n))


@dataclass(frozen=True)
class GridAxes:
    """Per-container sweep axes (volumes in mL, angles in degrees, times in s)."""

    v_start_ml: tuple[float, ...]
    theta_stop_deg: tuple[float, ...]
    t_stop_s: tuple[float, ...]

    def __post_init__(self):
        for name in ("v_start_ml", "theta_stop_deg", "t_stop_s"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) == 0:
                raise SweepError(f"axis {name} is empty")
            object.__setattr__(self, name, values)
        if any(v <= 0 for v in self.v_start_ml):
            raise SweepError("v_start_ml values must be positive")
        if any(not (0.0 < t <= 180.0) for t in self.theta_stop_deg):
            raise SweepError("theta_stop_deg values must lie in (0, 180]")
        if any(t < 0 for t in self.t_stop_s):
            raise SweepError("t_stop_s values must be >= 0")

    @property
    def size(self) -> int:
        return len(self.v_start_ml) * len(self.theta_stop_deg) * len(self.t_stop_s)


def desk_preset() -> dict[str, GridAxes]:
    """A few hundred scenes per container; runs on a laptop in minutes."""
    theta = inclusive_range(40.0, 160.0, 10.0)
    t_stop = (0.5, 1.0, 2.0, 4.0)
    return {
        "flask": GridAxes(inclusive_range(25.0, 150.0, 25.0), theta, t_stop),
        "media_bottle": GridAxes(inclusive_range(50.0, 500.0, 50.0), theta, t_stop),
    }


def paper_scale_preset() -> dict[str, GridAxes]:
    """Grid sized to 6,805 scenes across both containers.

    The original study's exact axis placement is unpublished; this preset
    reproduces only the scene count (3,125 flask + 3,680 bottle).
    """
    return {
        "flask": GridAxes(
            inclusive_range(10.0, 250.0, 10.0),      # 25
            inclusive_range(40.0, 160.0, 5.0),       # 25
            (0.5, 1.0, 2.0, 4.0, 8.0),               # 5
        ),
        "media_bottle": GridAxes(
            inclusive_range(50.0, 490.0, 20.0),      # 23
            inclusive_range(20.0, 115.0, 5.0),       # 20
            (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0),  # 8
        ),
    }


PRESETS = {"desk": desk_preset, "paper-scale": paper_scale_preset}


def build_grid(
    axes_by_container: dict[str, GridAxes],
    database_seed: int = 0,
    omega: float = DEFAULT_OMEGA,
) -> list[PourParams]:
    """Cartesian product in (container, v_start, theta_stop, t_stop) order."""
    if not axes_by_container:
        raise SweepError("no containers in grid configuration")
    grid: list[PourParams] = []
    for container, axes in axes_by_container.items():
        for v in axes.v_start_ml:
            for theta_deg in axes.theta_stop_deg:
                for t_stop in axes.t_stop_s:
                    grid.append(
                        PourParams(
                            container=container,
                            v_start_ml=v,
                            theta_stop=float(np.radians(theta_deg)),
                            t_stop_s=t_stop,
                            omega=omega,
                            seed=derive_seed(database_seed, len(grid)),
                        )
                    )
    return grid


@dataclass(frozen=True)
class PourRecord:
    params: PourParams
    outcome: PourOutcome

    def __post_init__(self):
        if not self.outcome.valid:
            raise SweepError("invalid (unstable) outcomes cannot enter a database")


@dataclass(frozen=True)
class DatabaseMeta:
    particle_volume_ml: float
    omega_deg_s: float
    spec_hash: str
    version: str = DB_FORMAT_VERSION


@dataclass(frozen=True)
class PourDatabase:
    meta: DatabaseMeta
    records: tuple[PourRecord, ...]
    dropped: int = field(compare=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def for_container(self, container: str) -> list[PourRecord]:
        return [r for r in self.records if r.params.container == container]


def _simulate_params(
    params: PourParams,
    specs: dict[str, ContainerSpec],
    receiving_id: str,
    config: SimConfig,
) -> PourOutcome:
    scene = make_scene(specs[params.container], specs[receiving_id], params, config)
    return simulate_pour(scene)


def run_sweep(
    grid: list[PourParams],
    specs: dict[str, ContainerSpec],
    config: SimConfig | None = None,
    receiving_id: str = "flask",
    workers: int = 1,
    progress: bool = False,
) -> PourDatabase:
    """Simulate every grid point; records come back in grid order regardless
    of worker count.  Unstable scenes are dropped (counted in `db.dropped`)."""
    if not grid:
        raise SweepError("empty grid")
    if workers < 1:
        raise SweepError("workers must be >= 1")
    config = config or SimConfig()
    for params in grid:
        if params.container not in specs:
            raise SweepError(f"grid references unknown container {params.container!r}")
        params.validate(specs[params.container].capacity_ml)
    if receiving_id not in specs:
        raise SweepError(f"unknown receiving container {receiving_id!r}")

    outcomes: list[PourOutcome] = []
    if workers == 1:
        for i, params in enumerate(grid):
            outcomes.append(_simulate_params(params, specs, receiving_id, config))
            if progress and (i + 1) % 25 == 0:
                print(f"  {i + 1}/{len(grid)} scenes", file=sys.stderr)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_simulate_params, params, specs, receiving_id, config)
                for params in grid
            ]
            for i, fut in enumerate(futures):
                outcomes.append(fut.result())
                if progress and (i + 1) % 25 == 0:
                    print(f"  {i + 1}/{len(grid)} scenes", file=sys.stderr)

    records = []
    dropped = 0
    for params, outcome in zip(grid, outcomes):
        if outcome.valid:
            records.append(PourRecord(params, outcome))
        else:
            dropped += 1
    if dropped:
        log.warning("dropped %d unstable scene(s) of %d", dropped, len(grid))
    if not records:
        raise SweepError("all scenes were unstable; database would be empty")

    omegas = {r.params.omega for r in records}
    if len(omegas) > 1:
        raise SweepError("records mix angular velocities; one omega per database")
    meta = DatabaseMeta(
        particle_volume_ml=config.particle_volume_ml,
        omega_deg_s=float(np.degrees(next(iter(omegas)))),
        spec_hash=specs_hash(specs),
    )
    return PourDatabase(meta=meta, records=tuple(records), dropped=dropped)


# -- persistence -------------------------------------------------------------


def _format_float(x: float) -> str:
    """Shortest round-trip decimal; keeps files byte-stable and lossless."""
    return repr(float(x))


def save_database(db: PourDatabase, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            f"# pourdb v{db.meta.version}; "
            f"particle_volume_ml={_format_float(db.meta.particle_volume_ml)}; "
            f"omega_deg_s={_format_float(db.meta.omega_deg_s)}; "
            f"spec_hash={db.meta.spec_hash}\n"
        )
        fh.write(DB_CSV_HEADER + "\n")
        for rec in db.records:
            p, o = rec.params, rec.outcome
            fh.write(
                f"{p.container},{_format_float(p.v_start_ml)},"
                f"{_format_float(np.degrees(p.theta_stop))},{_format_float(p.t_stop_s)},"
                f"{p.seed},{_format_float(o.v_received)},{_format_float(o.v_spill)},"
                f"{_format_float(o.v_remaining)}\n"
            )


def _counts_from_volume(volume_ml: float, particle_volume_ml: float, row: int, what: str) -> int:
    n = volume_ml / particle_volume_ml
    if abs(n - round(n)) > 1e-6:
        raise DatabaseFormatError(
            f"row {row}: {what}={volume_ml} is not a whole multiple of "
            f"particle_volume_ml={particle_volume_ml}"
        )
    return int(round(n))


def load_database(path) -> PourDatabase:
    """Inverse of save_database; validates version, schema and conservation."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# pourdb v"):
        raise DatabaseFormatError("missing '# pourdb v…' header line")
    header = lines[0][len("# pourdb v"):]
    fields = [f.strip() for f in header.split(";")]
    version = fields[0]
    if version != DB_FORMAT_VERSION:
        raise DatabaseFormatError(
            f"database version {version!r} does not match supported version {DB_FORMAT_VERSION!r}"
        )
    kv = {}
    for item in fields[1:]:
        if "=" in item:
            key, _, value = item.partition("=")
            kv[key.strip()] = value.strip()
    try:
        particle_volume = float(kv["particle_volume_ml"])
        omega_deg_s = float(kv["omega_deg_s"])
        spec_hash_value = kv["spec_hash"]
    except KeyError as exc:
        raise DatabaseFormatError(f"header is missing {exc.args[0]!r}") from None

    if len(lines) < 2 or lines[1] != DB_CSV_HEADER:
        raise DatabaseFormatError("missing or wrong CSV header line")

    omega = float(np.radians(omega_deg_s))
    records = []
    for row_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise DatabaseFormatError(f"row {row_no}: expected 8 columns, got {len(parts)}")
        try:
            container = parts[0]
            v_start = float(parts[1])
            theta_deg = float(parts[2])
            t_stop = float(parts[3])
            seed = int(parts[4])
            v_received = float(parts[5])
            v_spill = float(parts[6])
            v_remaining = float(parts[7])
        except ValueError as exc:
            raise DatabaseFormatError(f"row {row_no}: {exc}") from None
        params = PourParams(
            container=container,
            v_start_ml=v_start,
            theta_stop=float(np.radians(theta_deg)),
            t_stop_s=t_stop,
            omega=omega,
            seed=seed,
        )
        outcome = PourOutcome(
            n_remaining=_counts_from_volume(v_remaining, particle_volume, row_no, "v_remaining_ml"),
            n_received=_counts_from_volume(v_received, particle_volume, row_no, "v_received_ml"),
            n_spilled=_counts_from_volume(v_spill, particle_volume, row_no, "v_spill_ml"),
            particle_volume_ml=particle_volume,
        )
        records.append(PourRecord(params, outcome))
    meta = DatabaseMeta(
        particle_volume_ml=particle_volume,
        omega_deg_s=omega_deg_s,
        spec_hash=spec_hash_value,
    )
    return PourDatabase(meta=meta, records=tuple(records))
