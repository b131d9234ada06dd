"""pourplan: pre-simulated pouring planner for containers with small openings.

The package splits into:

* `containers`  - parametric container geometry, volumes, SDF colliders
* `kinematics`  - fixed-exit-point pour motions and trajectories
* `fluidsim`    - desk-scale particle solver and pour scenes
* `sweep`       - 4D parameter grids, sweep runner, pour databases
* `selector`    - minimum-cost pour selection and cost maps
* `analysis`    - RMSE/MAPE/R2 metrics and report tables
* `cli`         - `pourplan` command line entry point
"""

from .analysis import PairedSeries, mape, r2, rmse, sim_to_real_report, spill_report
from .containers import (
    ContainerError,
    ContainerSpec,
    SdfCollider,
    SpecFileError,
    interior_volume,
    load_container_specs,
    load_default_specs,
    sdf_eval,
)
from .fluidsim import (
    FluidSimError,
    OverfillError,
    ParticleState,
    PourOutcome,
    PourParams,
    PourScene,
    SimConfig,
    calibrate_particle_volume,
    classify_particles,
    fill_container,
    make_scene,
    simulate_pour,
    step,
)
from .kinematics import (
    KinematicsError,
    PourFrame,
    PourPlane,
    Trajectory,
    generate_trajectory,
    pour_frame,
    tcp_pose,
    tcp_position,
)
from .selector import CostMap, PourQuery, SelectorError, cost, cost_map, select_best
from .sweep import (
    GridAxes,
    PourDatabase,
    PourRecord,
    SweepError,
    build_grid,
    desk_preset,
    load_database,
    paper_scale_preset,
    run_sweep,
    save_database,
)

__version__ = "0.1.0"
