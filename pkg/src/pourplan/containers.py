"""Parametric laboratory containers: interior volumes and wall colliders.

Two primitive container families are supported:

* ``flask``  - box body lying on the table, cylindrical neck attached to the
  centre-top of the +x end face and tilted upward by ``neck_tilt_deg``.
* ``bottle`` - vertical cylinder body with a coaxial cylindrical neck on top.

Body-frame conventions (x forward along the neck, y up, z lateral; origin at
the centre of the base):

* flask neck base centre: ``(body_width/2, body_height, 0)`` (top edge of the
  +x face, like a canted T-flask neck), axis ``(cos tilt, sin tilt, 0)``.
* bottle neck base centre: ``(0, body_height, 0)``, axis ``(0, 1, 0)``.
* the opening centre sits at ``neck_base + neck_length * axis`` and the
  opening plane normal is the neck axis.

Container spec files and ``ContainerSpec`` fields are in millimetres and
millilitres; colliders and everything downstream work in metres.  Interior
volumes are the exact analytic box/cylinder sums, so a zero-length neck
degenerates to the bare body.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import RigidTransform

MM = 1e-3
ML_PER_M3 = 1e6

KINDS = ("flask", "bottle")

# Primitive/role codes shared with the packed solver representation.
PRIM_BOX = 0
PRIM_CYLINDER = 1
ROLE_OUTER = 0
ROLE_INTERIOR = 1
ROLE_PLUG = 2

DEFAULT_WALL_THICKNESS_MM = 2.0


class ContainerError(ValueError):
    """A container spec violates one of its invariants."""


class SpecFileError(ContainerError):
    """A container spec file cannot be parsed; message carries the line number."""


def _vec3(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(3)
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class ContainerSpec:
    """Geometry, grip and opening of one pouring or receiving container.

    Dimensions in mm, capacity in mL.  Flask fields: body_width/depth/height +
    neck_length/width + neck_tilt_deg.  Bottle fields: body_radius/height +
    neck_radius/length.  Unused fields for the other kind stay at 0.
    """

    id: str
    kind: str
    opening_radius_mm: float
    exit_point_mm: np.ndarray
    tcp_mm: np.ndarray
    capacity_ml: float
    body_width_mm: float = 0.0
    body_depth_mm: float = 0.0
    body_height_mm: float = 0.0
    body_radius_mm: float = 0.0
    neck_length_mm: float = 0.0
    neck_width_mm: float = 0.0
    neck_radius_mm: float = 0.0
    neck_tilt_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "exit_point_mm", _vec3(self.exit_point_mm))
        object.__setattr__(self, "tcp_mm", _vec3(self.tcp_mm))
        self.validate()

    # -- derived geometry -------------------------------------------------

    @property
    def neck_bore_radius_mm(self) -> float:
        if self.kind == "flask":
            return self.neck_width_mm / 2.0
        return self.neck_radius_mm

    @property
    def neck_axis(self) -> np.ndarray:
        if self.kind == "flask":
            tilt = np.radians(self.neck_tilt_deg)
            return np.array([np.cos(tilt), np.sin(tilt), 0.0])
        return np.array([0.0, 1.0, 0.0])

    @property
    def neck_base_mm(self) -> np.ndarray:
        if self.kind == "flask":
            return np.array([self.body_width_mm / 2.0, self.body_height_mm, 0.0])
        return np.array([0.0, self.body_height_mm, 0.0])

    @property
    def opening_centre_mm(self) -> np.ndarray:
        return self.neck_base_mm + self.neck_length_mm * self.neck_axis

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ContainerError(f"{self.id}: unknown kind {self.kind!r}")
        if self.kind == "flask":
            dims = {
                "body_width_mm": self.body_width_mm,
                "body_depth_mm": self.body_depth_mm,
                "body_height_mm": self.body_height_mm,
            }
            half_extents = (self.body_width_mm / 2, self.body_depth_mm / 2, self.body_height_mm / 2)
        else:
            dims = {
                "body_radius_mm": self.body_radius_mm,
                "body_height_mm": self.body_height_mm,
            }
            half_extents = (self.body_radius_mm, self.body_height_mm / 2)
        for name, value in dims.items():
            if not value > 0.0:
                raise ContainerError(f"{self.id}: dimension {name}={value} must be strictly positive")
        if self.neck_length_mm < 0.0:
            raise ContainerError(f"{self.id}: neck_length_mm must be >= 0")
        if self.neck_length_mm > 0.0 and not self.neck_bore_radius_mm > 0.0:
            raise ContainerError(f"{self.id}: neck bore radius must be positive when a neck is present")
        if self.kind == "flask" and not (0.0 <= self.neck_tilt_deg < 80.0):
            raise ContainerError(f"{self.id}: neck_tilt_deg={self.neck_tilt_deg} outside [0, 80)")
        if not self.opening_radius_mm > 0.0:
            raise ContainerError(f"{self.id}: opening_radius_mm must be strictly positive")
        if self.opening_radius_mm > min(half_extents) + 1e-9:
            raise ContainerError(
                f"{self.id}: opening_radius_mm={self.opening_radius_mm} exceeds the smallest "
                f"body half-extent {min(half_extents)}"
            )
        if self.neck_length_mm > 0.0 and self.opening_radius_mm > self.neck_bore_radius_mm + 1e-9:
            raise ContainerError(f"{self.id}: opening_radius_mm exceeds the neck bore radius")
        if not self.capacity_ml > 0.0:
            raise ContainerError(f"{self.id}: capacity_ml must be strictly positive")

        lip = float(np.linalg.norm(self.exit_point_mm - self.opening_centre_mm))
        if abs(lip - self.opening_radius_mm) > 1e-6 * max(self.opening_radius_mm, 1.0):
            raise ContainerError(
                f"{self.id}: exit_point_mm is {lip:.6f} mm from the opening centre, "
                f"expected opening_radius_mm={self.opening_radius_mm}"
            )

        volume = interior_volume(self, _validate=False)
        if not (0.9 * self.capacity_ml <= volume <= 1.1 * self.capacity_ml):
            raise ContainerError(
                f"{self.id}: analytic interior volume {volume:.1f} mL disagrees with "
                f"capacity_ml={self.capacity_ml} by more than 10%"
            )


def default_exit_point_mm(spec_like: ContainerSpec) -> np.ndarray:
    """Lip point where liquid leaves when tipping forward (on the opening rim)."""
    if spec_like.kind == "flask":
        tilt = np.radians(spec_like.neck_tilt_deg)
        rim_dir = np.array([np.sin(tilt), -np.cos(tilt), 0.0])
    else:
        rim_dir = np.array([1.0, 0.0, 0.0])
    return spec_like.opening_centre_mm + spec_like.opening_radius_mm * rim_dir


def interior_volume(spec: ContainerSpec, _validate: bool = True) -> float:
    """Analytic interior volume in mL (body plus butt-joined neck cylinder)."""
    if _validate:
        spec.validate()
    if spec.kind == "flask":
        body = spec.body_width_mm * spec.body_depth_mm * spec.body_height_mm
    else:
        body = np.pi * spec.body_radius_mm**2 * spec.body_height_mm
    neck = np.pi * spec.neck_bore_radius_mm**2 * spec.neck_length_mm
    return float((body + neck) / 1e3)  # mm^3 -> mL


# -- signed distance collider ---------------------------------------------


def _box_sdf(p: np.ndarray, centre: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(p - centre) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def _cylinder_sdf(p: np.ndarray, base: np.ndarray, axis: np.ndarray, length: float, radius: float) -> np.ndarray:
    mid = base + axis * (length / 2.0)
    rel = p - mid
    y = rel @ axis
    radial = np.linalg.norm(rel - np.outer(y, axis), axis=-1)
    dx = radial - radius
    dy = np.abs(y) - length / 2.0
    outside = np.sqrt(np.maximum(dx, 0.0) ** 2 + np.maximum(dy, 0.0) ** 2)
    inside = np.minimum(np.maximum(dx, dy), 0.0)
    return outside + inside


@dataclass(frozen=True)
class _Primitive:
    kind: int          # PRIM_BOX / PRIM_CYLINDER
    role: int          # ROLE_OUTER / ROLE_INTERIOR / ROLE_PLUG
    params: np.ndarray  # box: centre(3) + half(3); cylinder: base(3) + axis(3) + length + radius

    def sdf(self, p: np.ndarray) -> np.ndarray:
        if self.kind == PRIM_BOX:
            return _box_sdf(p, self.params[0:3], self.params[3:6])
        return _cylinder_sdf(p, self.params[0:3], self.params[3:6], self.params[6], self.params[7])


def _container_primitives(spec: ContainerSpec, wall_thickness_m: float) -> list[_Primitive]:
    """CSG decomposition of the wall solid, in metres, body frame.

    wall = (outer union) minus (interior union) minus (mouth plug); evaluated
    as max(outer, -interior, -plug) over exact primitive SDFs, which keeps the
    result Lipschitz-1.
    """
    t = wall_thickness_m
    prims: list[_Primitive] = []
    if spec.kind == "flask":
        # body frame is (x, y, z) = (width, height, depth)
        half = np.array([spec.body_width_mm / 2, spec.body_height_mm / 2, spec.body_depth_mm / 2]) * MM
        centre = np.array([0.0, half[1], 0.0])
        prims.append(_Primitive(PRIM_BOX, ROLE_INTERIOR, np.concatenate([centre, half])))
        prims.append(_Primitive(PRIM_BOX, ROLE_OUTER, np.concatenate([centre, half + t])))
    else:
        r = spec.body_radius_mm * MM
        h = spec.body_height_mm * MM
        base = np.zeros(3)
        up = np.array([0.0, 1.0, 0.0])
        prims.append(_Primitive(PRIM_CYLINDER, ROLE_INTERIOR, np.concatenate([base, up, [h, r]])))
        prims.append(
            _Primitive(PRIM_CYLINDER, ROLE_OUTER, np.concatenate([base - t * up, up, [h + 2 * t, r + t]]))
        )

    axis = spec.neck_axis
    neck_base = spec.neck_base_mm * MM
    length = spec.neck_length_mm * MM
    bore = spec.neck_bore_radius_mm * MM
    if length > 0.0:
        prims.append(_Primitive(PRIM_CYLINDER, ROLE_INTERIOR, np.concatenate([neck_base, axis, [length, bore]])))
        # outer neck extends past the opening plane by t, forming the mouth lip
        prims.append(
            _Primitive(
                PRIM_CYLINDER,
                ROLE_OUTER,
                np.concatenate([neck_base - t * axis, axis, [length + 3 * t, bore + t]]),
            )
        )
    opening_centre = spec.opening_centre_mm * MM
    plug_len = 6 * t
    prims.append(
        _Primitive(
            PRIM_CYLINDER,
            ROLE_PLUG,
            np.concatenate([opening_centre - 2 * t * axis, axis, [plug_len, spec.opening_radius_mm * MM]]),
        )
    )
    return prims


@dataclass(frozen=True)
class SdfCollider:
    """Signed-distance collider for a container's walls.

    Negative strictly inside the wall material, zero on the wall surface,
    positive everywhere else (including the fluid interior).  The pose maps
    body-frame points into the world.
    """

    spec: ContainerSpec
    wall_thickness_mm: float = DEFAULT_WALL_THICKNESS_MM
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.wall_thickness_mm > 0.0:
            raise ContainerError(f"{self.spec.id}: wall thickness must be positive")
        prims = tuple(_container_primitives(self.spec, self.wall_thickness_mm * MM))
        object.__setattr__(self, "_prims", prims)

    def with_pose(self, pose: RigidTransform) -> "SdfCollider":
        return SdfCollider(self.spec, self.wall_thickness_mm, pose)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Wall SDF at one or more world points (metres)."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = self.pose.apply_inverse(np.atleast_2d(p))
        outer = np.full(p.shape[0], np.inf)
        interior = np.full(p.shape[0], np.inf)
        plug = np.full(p.shape[0], np.inf)
        for prim in self._prims:
            d = prim.sdf(p)
            if prim.role == ROLE_OUTER:
                outer = np.minimum(outer, d)
            elif prim.role == ROLE_INTERIOR:
                interior = np.minimum(interior, d)
            else:
                plug = np.minimum(plug, d)
        result = np.maximum(outer, -interior)
        result = np.maximum(result, -plug)
        return float(result[0]) if single else result

    def interior_sdf(self, points: np.ndarray) -> np.ndarray:
        """SDF of the fluid interior region (negative inside the cavity)."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = self.pose.apply_inverse(np.atleast_2d(p))
        interior = np.full(p.shape[0], np.inf)
        for prim in self._prims:
            if prim.role == ROLE_INTERIOR:
                interior = np.minimum(interior, prim.sdf(p))
        return float(interior[0]) if single else interior


def sdf_eval(collider: SdfCollider, point: np.ndarray) -> float:
    """Signed distance (m) from a world point to the container wall solid."""
    return float(collider.sdf(np.asarray(point, dtype=float).reshape(3)))


# -- spec file parsing ------------------------------------------------------

_COMMON_KEYS = {"id", "kind", "opening_radius_mm", "exit_point_mm", "tcp_mm", "capacity_ml"}
_FLASK_KEYS = _COMMON_KEYS | {
    "body_width_mm",
    "body_depth_mm",
    "body_height_mm",
    "neck_length_mm",
    "neck_width_mm",
    "neck_tilt_deg",
}
_BOTTLE_KEYS = _COMMON_KEYS | {
    "body_radius_mm",
    "body_height_mm",
    "neck_radius_mm",
    "neck_length_mm",
}
_ALL_KEYS = _FLASK_KEYS | _BOTTLE_KEYS
_VECTOR_KEYS = {"exit_point_mm", "tcp_mm"}


def _parse_value(key: str, raw: str, line_no: int):
    if key in ("id", "kind"):
        return raw
    parts = [s.strip() for s in raw.split(",")]
    try:
        numbers = [float(s) for s in parts]
    except ValueError:
        raise SpecFileError(f"line {line_no}: cannot parse number(s) in {key!r}: {raw!r}") from None
    if key in _VECTOR_KEYS:
        if len(numbers) != 3:
            raise SpecFileError(f"line {line_no}: {key!r} needs exactly 3 comma-separated values")
        return numbers
    if len(numbers) != 1:
        raise SpecFileError(f"line {line_no}: {key!r} expects a single number")
    return numbers[0]


def _build_spec(block: dict, start_line: int) -> ContainerSpec:
    if "id" not in block:
        raise SpecFileError(f"line {start_line}: [container] block is missing 'id'")
    if "kind" not in block:
        raise SpecFileError(f"line {start_line}: container {block['id']!r} is missing 'kind'")
    kind = block["kind"]
    if kind not in KINDS:
        raise SpecFileError(f"line {start_line}: container {block['id']!r} has unknown kind {kind!r}")
    allowed = _FLASK_KEYS if kind == "flask" else _BOTTLE_KEYS
    for key in block:
        if key not in allowed:
            raise SpecFileError(
                f"line {start_line}: key {key!r} is not valid for kind {kind!r} (container {block['id']!r})"
            )
    try:
        return ContainerSpec(**block)
    except ContainerError as exc:
        raise ContainerError(f"container {block['id']!r}: {exc}") from exc


def load_container_specs(path) -> dict[str, ContainerSpec]:
    """Parse a container spec file into a map id -> ContainerSpec.

    The format is line-based: one ``[container]`` header per block followed by
    ``key = value`` lines.  Unknown keys, duplicate keys, duplicate ids and
    invariant violations are rejected.
    """
    path = Path(path)
    specs: dict[str, ContainerSpec] = {}
    block: dict | None = None
    block_line = 0

    def finish():
        if block is None:
            return
        spec = _build_spec(block, block_line)
        if spec.id in specs:
            raise SpecFileError(f"line {block_line}: duplicate container id {spec.id!r}")
        specs[spec.id] = spec

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if line != "[container]":
                    raise SpecFileError(f"line {line_no}: unexpected section header {line!r}")
                finish()
                block = {}
                block_line = line_no
                continue
            if block is None:
                raise SpecFileError(f"line {line_no}: key outside a [container] block")
            if "=" not in line:
                raise SpecFileError(f"line {line_no}: expected 'key = value', got {line!r}")
            key, _, raw_value = line.partition("=")
            key, raw_value = key.strip(), raw_value.strip()
            if key not in _ALL_KEYS:
                raise SpecFileError(f"line {line_no}: unknown key {key!r}")
            if key in block:
                raise SpecFileError(f"line {line_no}: duplicate key {key!r} in container block")
            block[key] = _parse_value(key, raw_value, line_no)
    finish()
    return specs


def default_specs_path() -> Path:
    """Path of the bundled container spec file."""
    return Path(str(resources.files("pourplan").joinpath("data/containers.cfg")))


def load_default_specs() -> dict[str, ContainerSpec]:
    return load_container_specs(default_specs_path())


def specs_hash(specs: dict[str, ContainerSpec]) -> str:
    """Short stable digest of a spec map, stamped into pour databases."""
    parts = []
    for cid in sorted(specs):
        s = specs[cid]
        fields = [
            s.id, s.kind, f"{s.opening_radius_mm:.9g}", f"{s.capacity_ml:.9g}",
            ",".join(f"{v:.9g}" for v in s.exit_point_mm),
            ",".join(f"{v:.9g}" for v in s.tcp_mm),
            f"{s.body_width_mm:.9g}", f"{s.body_depth_mm:.9g}", f"{s.body_height_mm:.9g}",
            f"{s.body_radius_mm:.9g}", f"{s.neck_length_mm:.9g}", f"{s.neck_width_mm:.9g}",
            f"{s.neck_radius_mm:.9g}", f"{s.neck_tilt_deg:.9g}",
        ]
        parts.append("|".join(fields))
    digest = hashlib.blake2b("\n".join(parts).encode(), digest_size=6)
    return digest.hexdigest()
