"""Fixed-exit-point pouring kinematics.

The pour is planar: the container rotates by an angle theta about its liquid
exit point (the centre of rotation, CoR), which stays fixed in space.  The
grip point (TCP) therefore moves on a circle of radius l around the CoR.

Plane conventions: the pour plane is vertical; in-plane +y is world up and
in-plane +x points horizontally from the exit point toward the grip side, so
the receiving container sits on the -x side and theta increases
counter-clockwise (grip swings up, mouth tips down toward the receiver).
With this convention alpha_start, the angle of the grip below the CoR at the
start pose, lies in (0, pi/2) for sensible grips, and the pre-tilt alpha
satisfies alpha_start = beta - alpha where beta is the same depression angle
before pre-tilting.

The TCP path is defined piecewise around the seam theta = alpha_start:

    theta <= alpha_start:
        x = x_start - l cos(alpha_start) + l cos(alpha_start - theta)
        y = y_start + l sin(alpha_start) - l sin(alpha_start - theta)
    theta > alpha_start:
        x = x_start - l cos(alpha_start) + l cos(theta - alpha_start)
        y = y_start + l sin(alpha_start) + l sin(theta - alpha_start)

Both branches are the same analytic function (cosine is even, sine odd), and
equal the closed form TCP(theta) = CoR + l (cos(theta - alpha_start),
sin(theta - alpha_start)); `verify_branch_agreement` checks this numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .containers import MM, ContainerSpec
from .geometry import WORLD_UP, RigidTransform, rotation_about_axis, unit

DEFAULT_OMEGA = np.radians(30.0)  # rad/s
DEFAULT_TRAJECTORY_DT = 0.01  # s

MIN_LEVER_ARM = 1e-3  # m; closer grips make the pivot degenerate

TRAJECTORY_CSV_HEADER = "t_s,x_m,y_m,z_m,theta_deg"


class KinematicsError(ValueError):
    """Degenerate pour geometry or out-of-range arguments."""


@dataclass(frozen=True)
class PourPlane:
    """Vertical plane containing the pour, with a 2D (x, y) chart on it."""

    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        normal = unit(np.asarray(self.normal, dtype=float).reshape(3))
        if abs(float(normal @ WORLD_UP)) > 1e-9:
            raise KinematicsError("pour plane must be vertical (normal perpendicular to world up)")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "_x_axis", unit(np.cross(WORLD_UP, normal)))

    @property
    def x_axis(self) -> np.ndarray:
        return self._x_axis

    def to_plane(self, p: np.ndarray) -> tuple[float, float, float]:
        """World point -> (x, y, out-of-plane) coordinates."""
        rel = np.asarray(p, dtype=float).reshape(3) - self.origin
        return float(rel @ self._x_axis), float(rel @ WORLD_UP), float(rel @ self.normal)

    def to_world(self, x: float, y: float, w: float = 0.0) -> np.ndarray:
        return self.origin + x * self._x_axis + y * WORLD_UP + w * self.normal


def placement_rotation(plane: PourPlane) -> np.ndarray:
    """Body->world rotation of an untilted container in the pour plane.

    Body +x (the neck direction) maps to the -x side of the plane so the
    mouth faces the receiver; body +y stays up.
    """
    cols = np.column_stack([-plane.x_axis, WORLD_UP, -plane.normal])
    return cols


def container_rotation(plane: PourPlane, alpha: float, theta: float) -> np.ndarray:
    """Body->world rotation at pre-tilt alpha and pour angle theta."""
    return rotation_about_axis(plane.normal, alpha + theta) @ placement_rotation(plane)


@dataclass(frozen=True)
class PourFrame:
    """Planar pour geometry: the CoR, the start TCP and the angles tying them."""

    cor: np.ndarray          # 2D plane coords (m)
    tcp_start: np.ndarray    # 2D plane coords (m)
    l: float                 # |tcp_start - cor| (m)
    alpha_start: float       # depression of the grip below the CoR at the start pose (rad)
    beta: float              # same depression angle before pre-tilting: alpha_start + alpha (rad)
    alpha: float             # pre-tilt matching the receiving container (rad)
    plane: PourPlane
    z_const: float           # out-of-plane coordinate of the TCP path (m)

    def __post_init__(self):
        object.__setattr__(self, "cor", np.asarray(self.cor, dtype=float).reshape(2))
        object.__setattr__(self, "tcp_start", np.asarray(self.tcp_start, dtype=float).reshape(2))

    def validate(self) -> None:
        """Check the physical-pour invariants (not enforced at construction)."""
        l = float(np.linalg.norm(self.tcp_start - self.cor))
        if abs(l - self.l) > 1e-9 * max(self.l, 1.0):
            raise KinematicsError(f"l={self.l} inconsistent with |tcp_start - cor|={l}")
        if not (0.0 < self.alpha_start < np.pi / 2):
            raise KinematicsError(
                f"alpha_start={np.degrees(self.alpha_start):.2f} deg outside (0, 90)"
            )
        if not (0.0 <= self.beta < np.pi / 2):
            raise KinematicsError(f"beta={np.degrees(self.beta):.2f} deg outside [0, 90)")

    def cor_world(self) -> np.ndarray:
        return self.plane.to_world(self.cor[0], self.cor[1], self.z_const)


def pour_frame(
    spec: ContainerSpec,
    tcp_start_world: np.ndarray,
    plane: PourPlane,
    alpha: float,
) -> PourFrame:
    """Build the pour frame for a container gripped at `tcp_start_world`.

    The start pose is the container pre-tilted by `alpha` about the plane
    normal; the CoR is the world position of the container's exit point in
    that pose.
    """
    if not (0.0 <= alpha < np.pi / 2):
        raise KinematicsError(f"alpha={alpha} outside [0, pi/2)")
    tcp_start_world = np.asarray(tcp_start_world, dtype=float).reshape(3)
    grip_to_exit = (spec.exit_point_mm - spec.tcp_mm) * MM
    rotation = container_rotation(plane, alpha, 0.0)
    cor_world = tcp_start_world + rotation @ grip_to_exit

    tx, ty, tw = plane.to_plane(tcp_start_world)
    cx, cy, cw = plane.to_plane(cor_world)
    if abs(cw - tw) > 1e-9:
        raise KinematicsError(
            f"{spec.id}: exit point and grip are offset out of the pour plane by {cw - tw:.3g} m; "
            "the planar pour model requires them in the same vertical plane"
        )
    dx, dy = tx - cx, ty - cy
    l = float(np.hypot(dx, dy))
    if l < MIN_LEVER_ARM:
        raise KinematicsError(
            f"{spec.id}: pour pivot coincides with the grip (l={l * 1e3:.3f} mm < 1 mm)"
        )
    alpha_start = float(np.arctan2(-dy, dx))
    return PourFrame(
        cor=np.array([cx, cy]),
        tcp_start=np.array([tx, ty]),
        l=l,
        alpha_start=alpha_start,
        beta=alpha_start + alpha,
        alpha=alpha,
        plane=plane,
        z_const=tw,
    )


def _check_theta(theta: float) -> float:
    if not (0.0 <= theta <= np.pi + 1e-12):
        raise KinematicsError(f"theta={theta} outside [0, pi]")
    return float(theta)


def tcp_position_branch1(frame: PourFrame, theta: float) -> np.ndarray:
    """First printed branch (theta <= alpha_start), valid for all theta."""
    xs, ys = frame.tcp_start
    l, a = frame.l, frame.alpha_start
    return np.array(
        [xs - l * np.cos(a) + l * np.cos(a - theta), ys + l * np.sin(a) - l * np.sin(a - theta)]
    )


def tcp_position_branch2(frame: PourFrame, theta: float) -> np.ndarray:
    """Second printed branch (theta > alpha_start), valid for all theta."""
    xs, ys = frame.tcp_start
    l, a = frame.l, frame.alpha_start
    return np.array(
        [xs - l * np.cos(a) + l * np.cos(theta - a), ys + l * np.sin(a) + l * np.sin(theta - a)]
    )


def tcp_position_closed_form(frame: PourFrame, theta: float) -> np.ndarray:
    """Single closed form: CoR + l (cos(theta - alpha_start), sin(theta - alpha_start))."""
    a = theta - frame.alpha_start
    return frame.cor + frame.l * np.array([np.cos(a), np.sin(a)])


def tcp_position(frame: PourFrame, theta: float) -> np.ndarray:
    """In-plane TCP position (m) at pour angle theta, dispatching the two branches."""
    theta = _check_theta(theta)
    if theta <= frame.alpha_start:
        return tcp_position_branch1(frame, theta)
    return tcp_position_branch2(frame, theta)


def verify_branch_agreement(frame: PourFrame, n: int = 181) -> float:
    """Max deviation between the two branches and the closed form on a theta grid."""
    worst = 0.0
    for theta in np.linspace(0.0, np.pi, n):
        b1 = tcp_position_branch1(frame, theta)
        b2 = tcp_position_branch2(frame, theta)
        cf = tcp_position_closed_form(frame, theta)
        worst = max(worst, float(np.max(np.abs(b1 - b2))), float(np.max(np.abs(b1 - cf))))
    return worst


def tcp_pose(frame: PourFrame, theta: float) -> tuple[np.ndarray, float]:
    """3D TCP position and tilt angle about the plane normal at pour angle theta.

    The returned angle is the container's total rotation from upright,
    i.e. the base (pre-tilt) orientation alpha plus theta.
    """
    xy = tcp_position(frame, theta)
    position = frame.plane.to_world(xy[0], xy[1], frame.z_const)
    return position, frame.alpha + theta


def container_pose(frame: PourFrame, spec: ContainerSpec, theta: float) -> RigidTransform:
    """Rigid body pose of the poured container at angle theta (exit pinned at the CoR)."""
    rotation = container_rotation(frame.plane, frame.alpha, theta)
    exit_body = spec.exit_point_mm * MM
    translation = frame.cor_world() - rotation @ exit_body
    return RigidTransform(rotation, translation)


@dataclass(frozen=True)
class Trajectory:
    """Timed TCP samples for one pour: ramp up at omega, hold, ramp back down."""

    times: np.ndarray       # (n,) s, strictly increasing, starts at 0
    positions: np.ndarray   # (n, 3) m
    thetas: np.ndarray      # (n,) rad
    omega: float            # rad/s
    theta_stop: float       # rad
    t_stop: float           # s

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def samples(self):
        """Iterate (t, position, theta) tuples."""
        return zip(self.times, self.positions, self.thetas)

    def theta_at(self, t: float) -> float:
        """Exact pour angle at time t (clamped to the trajectory's span)."""
        ramp = self.theta_stop / self.omega
        if t <= 0.0:
            return 0.0
        if t < ramp:
            return self.omega * t
        if t <= ramp + self.t_stop:
            return self.theta_stop
        return max(0.0, self.theta_stop - self.omega * (t - ramp - self.t_stop))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(TRAJECTORY_CSV_HEADER + "\n")
            for t, pos, theta in self.samples:
                fh.write(
                    f"{t:.6f},{pos[0]:.6f},{pos[1]:.6f},{pos[2]:.6f},{np.degrees(theta):.6f}\n"
                )


def generate_trajectory(
    frame: PourFrame,
    theta_stop: float,
    t_stop: float,
    omega: float = DEFAULT_OMEGA,
    dt: float = DEFAULT_TRAJECTORY_DT,
) -> Trajectory:
    """Sampled ramp-hold-return trajectory: up at omega to theta_stop, hold
    t_stop, back down at omega.  Total duration 2 theta_stop / omega + t_stop.

    theta_stop = 0 is the degenerate no-tilt limit (single start sample when
    t_stop is also 0).
    """
    if not (0.0 <= theta_stop <= np.pi):
        raise KinematicsError(f"theta_stop={theta_stop} outside [0, pi]")
    if not omega > 0.0:
        raise KinematicsError(f"omega={omega} must be positive")
    if not dt > 0.0:
        raise KinematicsError(f"dt={dt} must be positive")
    if t_stop < 0.0:
        raise KinematicsError(f"t_stop={t_stop} must be >= 0")

    ramp = theta_stop / omega
    total = 2.0 * ramp + t_stop
    grid = np.arange(0.0, total, dt)
    boundaries = np.array([0.0, ramp, ramp + t_stop, total])
    times = np.concatenate([grid, boundaries])
    times = np.unique(times)
    # collapse float-noise duplicates (grid points landing on phase boundaries)
    keep = np.concatenate([[True], np.diff(times) > 1e-12])
    times = times[keep]

    traj = Trajectory(
        times=times,
        positions=np.zeros((len(times), 3)),
        thetas=np.zeros(len(times)),
        omega=float(omega),
        theta_stop=float(theta_stop),
        t_stop=float(t_stop),
    )
    thetas = np.array([traj.theta_at(t) for t in times])
    positions = np.array([tcp_pose(frame, th)[0] for th in thetas])
    object.__setattr__(traj, "thetas", thetas)
    object.__setattr__(traj, "positions", positions)
    return traj
