"""Desk-scale particle solver for pouring scenes.

Position-based dynamics with a density constraint: each substep integrates
gravity, projects a compression-only density constraint over poly6/spiky
kernels, projects particles out of container walls (SDF colliders) and
recovers velocities from the position delta.  The pouring container is a
kinematic collider driven along the pour trajectory; the receiving container
and the table are static.

Particles are centi-litre scale (0.5 - 1 mL each, set via
``particle_volume_ml``), which matches the tens-of-mL accuracy this planner
needs while keeping full parameter sweeps tractable on a laptop.  Everything
is deterministic for a fixed seed: fixed iteration order, no threading inside
a scene, and the only randomness is the seeded fill jitter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .containers import (
    MM,
    ML_PER_M3,
    PRIM_CYLINDER,
    ROLE_INTERIOR,
    ContainerSpec,
    SdfCollider,
)
from .geometry import RigidTransform, rotation_about_axis
from .kinematics import (
    DEFAULT_OMEGA,
    PourFrame,
    PourPlane,
    Trajectory,
    container_pose,
    container_rotation,
    generate_trajectory,
    pour_frame,
)

REST_DENSITY = 1000.0  # kg/m^3, water
SETTLE_SPEED = 0.01  # m/s
INSTABILITY_SPEED = 50.0  # m/s
SOLVER_WALL_MM = 6.0  # thicker collision walls stop tunneling; interior unchanged

CLASS_REMAINING = 0
CLASS_RECEIVED = 1
CLASS_SPILLED = 2
CLASS_NAMES = ("remaining", "received", "spilled")

PARTICLE_DUMP_HEADER = "step,particle_id,x_m,y_m,z_m,class"


class FluidSimError(ValueError):
    """Scene or solver contract violation."""


class OverfillError(FluidSimError):
    """Requested fill volume does not fit into the container."""


@dataclass(frozen=True)
class SimConfig:
    """Solver and scene-building knobs (metres/seconds unless suffixed)."""

    dt: float = 0.002
    iterations: int = 3
    particle_volume_ml: float = 1.0
    omega: float = DEFAULT_OMEGA
    clearance_mm: float = 4.0          # exit lip height above the receiving opening
    table_height: float = 0.0
    wall_thickness_mm: float = SOLVER_WALL_MM
    friction: float = 0.35          # table and static container walls
    pour_friction: float = 0.02        # the moving container stays slippery
    h_factor: float = 2.0              # kernel support = h_factor * particle spacing
    cfm_eps_rel: float = 0.1           # CFM epsilon relative to the lattice denominator
    scorr_rel: float = 0.08            # anti-clustering strength relative to unit-lambda
    settle_speed: float = SETTLE_SPEED
    settle_check_every: int = 50
    warmup_max_s: float = 3.0
    max_sim_s: float = 60.0
    fill_margin_rel: float = 0.35      # lattice stand-off from walls, in spacings
    jitter_rel: float = 0.05
    dump_path: str | None = None       # per-scene particle CSV (debug)
    dump_every: int = 25

    def __post_init__(self):
        if not (0.0 < self.dt <= 0.01):
            raise FluidSimError(f"dt={self.dt} outside (0, 10 ms]")
        if self.iterations < 1:
            raise FluidSimError("iterations must be >= 1")
        if not self.particle_volume_ml > 0.0:
            raise FluidSimError("particle_volume_ml must be positive")

    @property
    def spacing(self) -> float:
        """Rest lattice spacing in metres for the configured particle volume."""
        return float((self.particle_volume_ml / ML_PER_M3) ** (1.0 / 3.0))

    @property
    def kernel_h(self) -> float:
        return self.h_factor * self.spacing


@dataclass(frozen=True)
class ParticleState:
    """Positions/velocities of the liquid particles plus their unit volume."""

    positions: np.ndarray       # (n, 3) m
    velocities: np.ndarray      # (n, 3) m/s
    particle_volume_ml: float

    def __post_init__(self):
        p = np.ascontiguousarray(np.atleast_2d(self.positions), dtype=float)
        v = np.ascontiguousarray(np.atleast_2d(self.velocities), dtype=float)
        if p.size == 0:
            p = np.zeros((0, 3))
        if v.size == 0:
            v = np.zeros((0, 3))
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)
        if p.shape != v.shape or p.ndim != 2 or p.shape[1] != 3:
            raise FluidSimError("positions and velocities must both be (n, 3)")
        if not self.particle_volume_ml > 0.0:
            raise FluidSimError("particle_volume_ml must be positive")
        if p.size and not (np.isfinite(p).all() and np.isfinite(v).all()):
            raise FluidSimError("particle state contains NaN/inf")

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class PourParams:
    """One point of the 4D sweep space: container, start volume, stop angle, stop time."""

    container: str
    v_start_ml: float
    theta_stop: float       # rad
    t_stop_s: float
    omega: float = DEFAULT_OMEGA
    seed: int = 0

    def validate(self, capacity_ml: float | None = None) -> None:
        if not self.v_start_ml > 0.0:
            raise FluidSimError(f"v_start_ml={self.v_start_ml} must be positive")
        if capacity_ml is not None and self.v_start_ml > capacity_ml:
            raise FluidSimError(
                f"v_start_ml={self.v_start_ml} exceeds capacity {capacity_ml} of {self.container!r}"
            )
        if not (0.0 <= self.theta_stop <= np.pi):
            raise FluidSimError(f"theta_stop={self.theta_stop} outside [0, pi]")
        if self.t_stop_s < 0.0:
            raise FluidSimError(f"t_stop_s={self.t_stop_s} must be >= 0")
        if not self.omega > 0.0:
            raise FluidSimError("omega must be positive")


@dataclass(frozen=True)
class PourOutcome:
    """Particle accounting of one settled pour; volumes are exact count multiples."""

    n_remaining: int
    n_received: int
    n_spilled: int
    particle_volume_ml: float
    settled: bool = field(compare=False, default=True)
    valid: bool = field(compare=False, default=True)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.n_remaining, self.n_received, self.n_spilled)

    @property
    def n_start(self) -> int:
        return self.n_remaining + self.n_received + self.n_spilled

    @property
    def v_start(self) -> float:
        return self.n_start * self.particle_volume_ml

    @property
    def v_remaining(self) -> float:
        return self.n_remaining * self.particle_volume_ml

    @property
    def v_received(self) -> float:
        return self.n_received * self.particle_volume_ml

    @property
    def v_spill(self) -> float:
        return self.n_spilled * self.particle_volume_ml


@dataclass(frozen=True)
class PourScene:
    """A fully-placed pouring scene ready for simulation."""

    pouring_spec: ContainerSpec
    receiving_spec: ContainerSpec
    frame: PourFrame
    trajectory: Trajectory
    receiving_pose: RigidTransform
    params: PourParams
    config: SimConfig

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def table_height(self) -> float:
        return self.config.table_height

    def pouring_pose(self, theta: float = 0.0) -> RigidTransform:
        return container_pose(self.frame, self.pouring_spec, theta)

    def validate(self) -> None:
        self.params.validate(self.pouring_spec.capacity_ml)
        self.frame.validate()
        opening = self.receiving_pose.apply(self.receiving_spec.opening_centre_mm * MM)
        cor = self.frame.cor_world()
        lateral = float(np.hypot(cor[0] - opening[0], cor[2] - opening[2]))
        if lateral > self.receiving_spec.opening_radius_mm * MM + 1e-9:
            raise FluidSimError(
                f"CoR is {lateral * 1e3:.1f} mm off the receiving opening centre, beyond its radius"
            )
        if cor[1] <= opening[1]:
            raise FluidSimError("CoR must sit above the receiving opening")


def calibrate_particle_volume(spec: ContainerSpec, target_particles: int) -> float:
    """Particle volume (mL) so that a full container holds about target_particles."""
    if target_particles < 50:
        raise FluidSimError("target_particles must be >= 50 for a usable resolution")
    return spec.capacity_ml / float(target_particles)


def receiving_pose_for(
    spec: ContainerSpec, receiving_angle: float, table_height: float = 0.0
) -> RigidTransform:
    """Pose of the receiving container: standing opening-up on the table.

    Flasks are held (as in a holder) with the neck axis `receiving_angle` off
    vertical, leaning toward the pourer; bottles stand upright.  The opening
    centre is placed on the world vertical axis x = z = 0.
    """
    if spec.kind == "flask":
        neck_angle = float(np.arctan2(spec.neck_axis[1], spec.neck_axis[0]))
        tilt = (np.pi / 2 - receiving_angle) - neck_angle
    else:
        tilt = 0.0
    rot = rotation_about_axis(np.array([0.0, 0.0, 1.0]), tilt)

    # stand the (rotated) outer shape on the table
    corners = _support_points(spec)
    low = float(np.min((corners @ rot.T)[:, 1]))
    opening = rot @ (spec.opening_centre_mm * MM)
    translation = np.array([-opening[0], table_height - low, -opening[2]])
    return RigidTransform(rot, translation)


def _support_points(spec: ContainerSpec) -> np.ndarray:
    """Body-frame points bounding the outer shape from below (for standing poses)."""
    t = SOLVER_WALL_MM * MM
    pts = []
    if spec.kind == "flask":
        w, d, h = spec.body_width_mm * MM / 2, spec.body_depth_mm * MM / 2, spec.body_height_mm * MM
        for sx in (-1, 1):
            for sy in (0.0, h):
                for sz in (-1, 1):
                    pts.append([sx * (w + t), sy - t if sy == 0.0 else sy + t, sz * (d + t)])
    else:
        r = spec.body_radius_mm * MM + t
        h = spec.body_height_mm * MM
        for ang in np.linspace(0.0, 2 * np.pi, 16, endpoint=False):
            pts.append([r * np.cos(ang), -t, r * np.sin(ang)])
            pts.append([r * np.cos(ang), h + t, r * np.sin(ang)])
    tip = spec.opening_centre_mm * MM
    axis = spec.neck_axis
    bore = max(spec.neck_bore_radius_mm, spec.opening_radius_mm) * MM + t
    for ang in np.linspace(0.0, 2 * np.pi, 8, endpoint=False):
        # crude ring around the mouth; adequate for support-point search
        offset = np.array([np.cos(ang), 0.0, np.sin(ang)]) * bore
        pts.append(tip + offset + axis * t)
    return np.asarray(pts, dtype=float)


def make_scene(
    pouring_spec: ContainerSpec,
    receiving_spec: ContainerSpec,
    params: PourParams,
    config: SimConfig | None = None,
) -> PourScene:
    """Place the standard scene: receiving container opening-up under the CoR,
    pouring container pre-tilted by the receiving angle with its exit lip a
    small clearance above the receiving opening."""
    config = config or SimConfig()
    params.validate(pouring_spec.capacity_ml)
    if receiving_spec.kind == "flask":
        alpha = float(np.radians(receiving_spec.neck_tilt_deg))
    else:
        alpha = 0.0

    receiving_pose = receiving_pose_for(receiving_spec, alpha, config.table_height)
    opening_world = receiving_pose.apply(receiving_spec.opening_centre_mm * MM)
    cor_target = opening_world + np.array([0.0, config.clearance_mm * MM, 0.0])

    plane = PourPlane(origin=np.array([0.0, 0.0, 0.0]), normal=np.array([0.0, 0.0, 1.0]))
    grip_to_exit = (pouring_spec.exit_point_mm - pouring_spec.tcp_mm) * MM
    rotation = container_rotation(plane, alpha, 0.0)
    tcp_start = cor_target - rotation @ grip_to_exit
    frame = pour_frame(pouring_spec, tcp_start, plane, alpha)

    trajectory = generate_trajectory(
        frame, params.theta_stop, params.t_stop_s, omega=params.omega
    )
    scene = PourScene(
        pouring_spec=pouring_spec,
        receiving_spec=receiving_spec,
        frame=frame,
        trajectory=trajectory,
        receiving_pose=receiving_pose,
        params=params,
        config=config,
    )
    scene.validate()
    return scene


# -- packed collider sets and solver workspace ------------------------------


class _PackedColliders:
    """Flat-array view of a list of SdfColliders for the numba kernels."""

    def __init__(self, colliders: list[SdfCollider], moving: list[bool],
                 friction: list[float] | None = None):
        self.colliders = colliders
        prim_type = []
        prim_role = []
        prim_params = []
        starts = []
        ends = []
        for coll in colliders:
            starts.append(len(prim_type))
            for prim in coll._prims:
                prim_type.append(prim.kind)
                prim_role.append(prim.role)
                row = np.zeros(8)
                row[: prim.params.shape[0]] = prim.params
                prim_params.append(row)
            ends.append(len(prim_type))
        self.prim_type = np.asarray(prim_type, dtype=np.int64)
        self.prim_role = np.asarray(prim_role, dtype=np.int64)
        self.prim_params = np.ascontiguousarray(prim_params, dtype=float)
        self.pstart = np.asarray(starts, dtype=np.int64)
        self.pend = np.asarray(ends, dtype=np.int64)
        self.rot = np.ascontiguousarray([c.pose.rotation for c in colliders], dtype=float)
        self.trans = np.ascontiguousarray([c.pose.translation for c in colliders], dtype=float)
        self.prev_rot = self.rot.copy()
        self.prev_trans = self.trans.copy()
        self.moving = np.asarray([1 if m else 0 for m in moving], dtype=np.int64)
        centres = []
        radii = []
        for coll in colliders:
            lo, hi = _body_aabb(coll)
            centre = (lo + hi) / 2.0
            centres.append(centre)
            radii.append(float(np.linalg.norm(hi - centre)))
        self.bs_body = np.ascontiguousarray(centres, dtype=float) if centres else np.zeros((0, 3))
        self.bs_r = np.asarray(radii, dtype=float)
        if friction is None:
            friction = [0.35] * len(colliders)
        self.mu = np.asarray(friction, dtype=float)

    def set_pose(self, index: int, pose: RigidTransform) -> None:
        self.prev_rot[index] = self.rot[index]
        self.prev_trans[index] = self.trans[index]
        self.rot[index] = pose.rotation
        self.trans[index] = pose.translation


def _lattice_kernel_sums(h: float, spacing: float) -> tuple[float, float]:
    """Sum of poly6 values and squared spiky gradients over an ideal lattice."""
    c_poly = 315.0 / (64.0 * np.pi * h**9)
    c_spiky = -45.0 / (np.pi * h**6)
    reach = int(np.ceil(h / spacing))
    w_sum = c_poly * h**6  # self term
    g2_sum = 0.0
    for ix in range(-reach, reach + 1):
        for iy in range(-reach, reach + 1):
            for iz in range(-reach, reach + 1):
                if ix == 0 and iy == 0 and iz == 0:
                    continue
                r = spacing * np.sqrt(ix * ix + iy * iy + iz * iz)
                if r >= h:
                    continue
                w_sum += c_poly * (h * h - r * r) ** 3
                g = c_spiky * (h - r) ** 2
                g2_sum += g * g
    return float(w_sum), float(g2_sum)


class _Workspace:
    """Preallocated arrays + scalar parameters for one scene's solver runs."""

    def __init__(self, n: int, config: SimConfig):
        h = config.kernel_h
        spacing = config.spacing
        table = 64
        while table < 4 * max(n, 1):
            table *= 2
        self.table_mask = table - 1

        w_sum, g2_sum = _lattice_kernel_sums(h, spacing)
        mass = REST_DENSITY / w_sum
        m_inv_rho0 = mass / REST_DENSITY
        denom_ref = m_inv_rho0 * m_inv_rho0 * g2_sum
        c_poly = 315.0 / (64.0 * np.pi * h**9)
        dq = 0.2 * h
        w_dq = c_poly * (h * h - dq * dq) ** 3

        sp = np.zeros(K.N_SP)
        sp[K.SP_DT] = config.dt
        sp[K.SP_H] = h
        sp[K.SP_H2] = h * h
        sp[K.SP_C_POLY] = c_poly
        sp[K.SP_C_SPIKY] = -45.0 / (np.pi * h**6)
        sp[K.SP_MASS] = mass
        sp[K.SP_INV_RHO0] = 1.0 / REST_DENSITY
        sp[K.SP_EPS_CFM] = config.cfm_eps_rel * denom_ref
        sp[K.SP_SCORR_K] = config.scorr_rel / denom_ref if denom_ref > 0 else 0.0
        sp[K.SP_INV_W_DQ] = 1.0 / w_dq
        sp[K.SP_DP_CLAMP] = 0.2 * h
        sp[K.SP_FLOOR_Y] = config.table_height
        sp[K.SP_MU] = config.friction
        sp[K.SP_MAX_SPEED] = INSTABILITY_SPEED
        sp[K.SP_INV_CELL] = 1.0 / h
        sp[K.SP_WALL_BAND] = 0.8 * (config.wall_thickness_mm * MM)
        self.sp = sp

        kmax = 96
        self.pos = np.zeros((n, 3))
        self.vel = np.zeros((n, 3))
        self.npos = np.zeros((n, 3))
        self.lam = np.zeros(n)
        self.dp = np.zeros((n, 3))
        self.cell_coords = np.zeros((n, 3), dtype=np.int64)
        self.hash_of = np.zeros(n, dtype=np.int64)
        self.bucket_start = np.zeros(table + 1, dtype=np.int64)
        self.sorted_idx = np.zeros(n, dtype=np.int64)
        self.nbrs = np.zeros((n, kmax), dtype=np.int64)
        self.nbr_cnt = np.zeros(n, dtype=np.int64)

    def run(
        self,
        packed: _PackedColliders,
        iterations: int,
        pour_rot_seq: np.ndarray,
        pour_trans_seq: np.ndarray,
        n_steps: int,
        kinematic: bool,
        check_every: int,
        settle_speed: float,
    ) -> tuple[int, float, bool, bool]:
        if self.pos.shape[0] == 0:
            return n_steps, 0.0, False, True
        return K._run_steps(
            self.pos, self.vel, self.npos, self.lam, self.dp, self.sp,
            self.table_mask,
            self.cell_coords, self.hash_of, self.bucket_start, self.sorted_idx,
            self.nbrs, self.nbr_cnt,
            iterations,
            packed.prim_type, packed.prim_role, packed.prim_params,
            packed.pstart, packed.pend, packed.rot, packed.trans,
            packed.prev_rot, packed.prev_trans, packed.moving,
            packed.bs_body, packed.bs_r, packed.mu,
            pour_rot_seq, pour_trans_seq,
            n_steps, kinematic, check_every, settle_speed,
        )


_NO_POSES = (np.zeros((1, 3, 3)), np.zeros((1, 3)))


def _body_aabb(collider: SdfCollider) -> tuple[np.ndarray, np.ndarray]:
    """Conservative body-frame AABB over the collider's primitives."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for prim in collider._prims:
        if prim.kind == PRIM_CYLINDER:
            base = prim.params[0:3]
            axis = prim.params[3:6]
            length, radius = prim.params[6], prim.params[7]
            centre = base + axis * length / 2.0
            pad = np.abs(axis) * length / 2.0 + radius
        else:
            centre = prim.params[0:3]
            pad = prim.params[3:6]
        lo = np.minimum(lo, centre - pad)
        hi = np.maximum(hi, centre + pad)
    return lo, hi


def _collider_aabb(collider: SdfCollider) -> tuple[np.ndarray, np.ndarray]:
    """Conservative world AABB over the collider's primitives."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for prim in collider._prims:
        if prim.kind == PRIM_CYLINDER:
            base = prim.params[0:3]
            axis = prim.params[3:6]
            length, radius = prim.params[6], prim.params[7]
            centre = base + axis * length / 2.0
            pad = np.abs(axis) * length / 2.0 + radius
        else:
            centre = prim.params[0:3]
            pad = prim.params[3:6]
        for corner in ((-1, -1, -1), (-1, -1, 1), (-1, 1, -1), (-1, 1, 1),
                       (1, -1, -1), (1, -1, 1), (1, 1, -1), (1, 1, 1)):
            p = collider.pose.apply(centre + np.array(corner) * pad)
            lo = np.minimum(lo, p)
            hi = np.maximum(hi, p)
    return lo, hi


def _seed_lattice(
    collider: SdfCollider, n: int, config: SimConfig, rng: np.random.Generator
) -> np.ndarray:
    """Jittered lattice sites inside the container interior, bottom first."""
    spacing = config.spacing
    lo, hi = _collider_aabb(collider)
    axes = [np.arange(lo[d] + spacing / 2, hi[d], spacing) for d in range(3)]
    if min(len(a) for a in axes) == 0:
        raise OverfillError(f"{collider.spec.id}: interior too small for the particle lattice")
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    sites = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    margin = config.fill_margin_rel * spacing
    inside = collider.interior_sdf(sites) <= -margin
    sites = sites[inside]
    if sites.shape[0] < n:
        raise OverfillError(
            f"{collider.spec.id}: requested {n} particles but only {sites.shape[0]} "
            f"lattice sites fit the interior at {config.particle_volume_ml} mL/particle"
        )
    order = np.lexsort((sites[:, 2], sites[:, 0], sites[:, 1]))  # lowest layers first
    sites = sites[order[:n]]
    jitter = rng.uniform(-config.jitter_rel, config.jitter_rel, size=sites.shape) * spacing
    return sites + jitter


def fill_container(
    spec: ContainerSpec,
    volume_ml: float,
    seed: int,
    config: SimConfig | None = None,
    pose: RigidTransform | None = None,
) -> ParticleState:
    """Seed and settle `volume_ml` of liquid inside a (posed) container.

    Particle count is round(volume / particle_volume); the state is stepped
    with only this container's collider until the liquid comes to rest or the
    warm-up cap is hit.
    """
    config = config or SimConfig()
    pose = pose or RigidTransform.identity()
    if volume_ml < 0.0:
        raise FluidSimError("volume_ml must be >= 0")
    if volume_ml > spec.capacity_ml:
        raise OverfillError(
            f"{spec.id}: volume {volume_ml} mL exceeds capacity {spec.capacity_ml} mL"
        )
    n = int(round(volume_ml / config.particle_volume_ml))
    if n == 0:
        warnings.warn(
            f"{spec.id}: volume {volume_ml} mL rounds to zero particles at "
            f"{config.particle_volume_ml} mL/particle",
            RuntimeWarning,
            stacklevel=2,
        )
        return ParticleState(np.zeros((0, 3)), np.zeros((0, 3)), config.particle_volume_ml)

    collider = SdfCollider(spec, config.wall_thickness_mm, pose)
    rng = np.random.default_rng(seed)
    positions = _seed_lattice(collider, n, config, rng)

    ws = _Workspace(n, config)
    ws.pos[:] = positions
    packed = _PackedColliders([collider], [False], [config.pour_friction])
    warmup_steps = int(np.ceil(config.warmup_max_s / config.dt))
    ws.run(
        packed, config.iterations, *_NO_POSES,
        n_steps=warmup_steps, kinematic=False,
        check_every=min(25, config.settle_check_every), settle_speed=config.settle_speed,
    )
    return ParticleState(ws.pos.copy(), ws.vel.copy(), config.particle_volume_ml)


def step(
    state: ParticleState,
    colliders: list[SdfCollider] | tuple[SdfCollider, ...] = (),
    dt: float | None = None,
    config: SimConfig | None = None,
) -> ParticleState:
    """Advance one solver substep and return the new state (pure)."""
    config = config or SimConfig()
    if dt is not None:
        config = replace(config, dt=dt)
    if state.particle_volume_ml != config.particle_volume_ml:
        config = replace(config, particle_volume_ml=state.particle_volume_ml)
    colliders = list(colliders)
    if not colliders:
        # no colliders: drop the floor out of reach so the step is purely ballistic
        drop = float(state.positions[:, 1].min()) - 100.0 if state.count else -100.0
        config = replace(config, table_height=drop)

    ws = _Workspace(state.count, config)
    ws.pos[:] = state.positions
    ws.vel[:] = state.velocities
    packed = (
        _PackedColliders(colliders, [False] * len(colliders), [config.friction] * len(colliders))
        if colliders
        else _EMPTY_PACK
    )
    ws.run(packed, config.iterations, *_NO_POSES, n_steps=1, kinematic=False,
           check_every=0, settle_speed=0.0)
    return ParticleState(ws.pos.copy(), ws.vel.copy(), state.particle_volume_ml)


class _EmptyColliders:
    prim_type = np.zeros(0, dtype=np.int64)
    prim_role = np.zeros(0, dtype=np.int64)
    prim_params = np.zeros((0, 8))
    pstart = np.zeros(0, dtype=np.int64)
    pend = np.zeros(0, dtype=np.int64)
    rot = np.zeros((0, 3, 3))
    trans = np.zeros((0, 3))
    prev_rot = np.zeros((0, 3, 3))
    prev_trans = np.zeros((0, 3))
    moving = np.zeros(0, dtype=np.int64)
    bs_body = np.zeros((0, 3))
    bs_r = np.zeros(0)
    mu = np.zeros(0)


_EMPTY_PACK = _EmptyColliders()


def classify_particles(
    state: ParticleState,
    scene: PourScene,
    pouring_pose: RigidTransform | None = None,
) -> np.ndarray:
    """Class label per particle: remaining / received / spilled.

    A particle is `remaining` when inside the pouring container's interior
    region (boundary inclusive), `received` inside the receiving container,
    and `spilled` anywhere else (table, floor, mid-air)."""
    if state.count == 0:
        return np.zeros(0, dtype=np.int64)
    pose = pouring_pose or scene.pouring_pose(0.0)
    # particles rest ON walls within the projection tolerance (1e-5 m); use a
    # boundary band an order wider so wall-contact particles count as inside
    tol = 1e-4
    pouring = SdfCollider(scene.pouring_spec, scene.config.wall_thickness_mm, pose)
    receiving = SdfCollider(
        scene.receiving_spec, scene.config.wall_thickness_mm, scene.receiving_pose
    )
    labels = np.full(state.count, CLASS_SPILLED, dtype=np.int64)
    inside_pouring = pouring.interior_sdf(state.positions) <= tol
    inside_receiving = receiving.interior_sdf(state.positions) <= tol
    labels[inside_receiving] = CLASS_RECEIVED
    labels[inside_pouring] = CLASS_REMAINING  # pouring container wins overlaps
    return labels


class _ParticleDump:
    def __init__(self, path, every: int):
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.fh.write(PARTICLE_DUMP_HEADER + "\n")
        self.every = max(1, every)

    def write(self, step_index: int, positions: np.ndarray, labels: np.ndarray) -> None:
        for pid in range(positions.shape[0]):
            x, y, z = positions[pid]
            self.fh.write(
                f"{step_index},{pid},{x:.6f},{y:.6f},{z:.6f},{CLASS_NAMES[labels[pid]]}\n"
            )

    def close(self):
        self.fh.close()


def _pose_sequence(scene: PourScene, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rots = np.zeros((len(thetas), 3, 3))
    trans = np.zeros((len(thetas), 3))
    for k, theta in enumerate(thetas):
        pose = scene.pouring_pose(float(theta))
        rots[k] = pose.rotation
        trans[k] = pose.translation
    return rots, trans


def simulate_pour(scene: PourScene) -> PourOutcome:
    """Fill, pour along the trajectory, settle, classify.

    Deterministic for a fixed scene + seed.  An instability (particle speed
    beyond 50 m/s) marks the outcome invalid; sweeps drop such scenes.
    """
    scene.validate()
    config = scene.config
    params = scene.params
    dt = config.dt

    start_pose = scene.pouring_pose(0.0)
    state = fill_container(
        scene.pouring_spec, params.v_start_ml, scene.seed, config=config, pose=start_pose
    )
    n = state.count
    if n == 0:
        return PourOutcome(0, 0, 0, config.particle_volume_ml, settled=True, valid=True)

    pouring = SdfCollider(scene.pouring_spec, config.wall_thickness_mm, start_pose)
    receiving = SdfCollider(scene.receiving_spec, config.wall_thickness_mm, scene.receiving_pose)
    packed = _PackedColliders(
        [pouring, receiving], [True, False], [config.pour_friction, config.friction]
    )

    ws = _Workspace(n, config)
    ws.pos[:] = state.positions
    ws.vel[:] = state.velocities

    dump = _ParticleDump(config.dump_path, config.dump_every) if config.dump_path else None
    steps_budget = int(np.ceil(config.max_sim_s / dt))
    steps_used = 0
    unstable = False
    settled = False

    omega, theta_stop, t_stop = params.omega, params.theta_stop, params.t_stop_s

    def run_phase(thetas: np.ndarray | None, n_steps: int, check_every: int):
        nonlocal steps_used, unstable, settled
        if unstable or n_steps <= 0 or steps_used >= steps_budget:
            return 0
        n_steps = min(n_steps, steps_budget - steps_used)
        if thetas is not None:
            rot_seq, trans_seq = _pose_sequence(scene, thetas[:n_steps])
            done, _, bad, ok = ws.run(
                packed, config.iterations, rot_seq, trans_seq,
                n_steps=n_steps, kinematic=True,
                check_every=check_every, settle_speed=config.settle_speed,
            )
        else:
            done, _, bad, ok = ws.run(
                packed, config.iterations, *_NO_POSES,
                n_steps=n_steps, kinematic=False,
                check_every=check_every, settle_speed=config.settle_speed,
            )
        steps_used += done
        unstable = unstable or bad
        settled = ok
        if dump is not None and not unstable:
            labels = classify_particles(
                ParticleState(ws.pos, ws.vel, config.particle_volume_ml), scene,
                pouring_pose=RigidTransform(packed.rot[0].copy(), packed.trans[0].copy()),
            )
            dump.write(steps_used, ws.pos, labels)
        return done

    # ramp up: theta = omega * t
    k_up = int(np.ceil(theta_stop / omega / dt)) if theta_stop > 0 else 0
    thetas_up = np.minimum(omega * dt * np.arange(1, k_up + 1), theta_stop)
    run_phase(thetas_up, k_up, check_every=0)

    # hold at theta_stop; may stop early once the flow has fully settled
    k_hold = int(np.ceil(t_stop / dt))
    thetas_hold = np.full(k_hold, theta_stop)
    run_phase(thetas_hold, k_hold, check_every=config.settle_check_every)

    # return ramp: theta decreasing back to 0
    thetas_down = np.maximum(theta_stop - omega * dt * np.arange(1, k_up + 1), 0.0)
    if k_up > 0:
        thetas_down[-1] = 0.0
    run_phase(thetas_down, k_up, check_every=0)

    # free settle at the start pose
    run_phase(None, steps_budget - steps_used, check_every=config.settle_check_every)

    if dump is not None:
        dump.close()

    final_pose = RigidTransform(packed.rot[0].copy(), packed.trans[0].copy())
    labels = classify_particles(
        ParticleState(ws.pos.copy(), ws.vel.copy(), config.particle_volume_ml),
        scene,
        pouring_pose=final_pose,
    )
    return PourOutcome(
        n_remaining=int(np.sum(labels == CLASS_REMAINING)),
        n_received=int(np.sum(labels == CLASS_RECEIVED)),
        n_spilled=int(np.sum(labels == CLASS_SPILLED)),
        particle_volume_ml=config.particle_volume_ml,
        settled=settled and not unstable,
        valid=not unstable,
    )
