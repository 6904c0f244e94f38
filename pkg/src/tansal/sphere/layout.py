"""Viewport layouts: sets of tangent-plane centers with a shared FOV and patch size.

A layout fixes where the tangent planes touch the sphere. Three families are
supported:

* ``icosahedral`` -- the 20 face-center directions of a regular icosahedron
  (or a deterministic subset for T < 20),
* ``ring`` -- T-2 equally spaced equatorial centers plus the two poles,
* ``explicit`` -- caller-provided centers.

Angles follow the (phi, theta) = (latitude, longitude) convention in radians,
with phi in [-pi/2, pi/2] and theta wrapped into [-pi, pi).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np


class LayoutError(ValueError):
    """Unsupported layout kind or incompatible parameters."""


def wrap_longitude(theta: float) -> float:
    """Wrap a longitude into the half-open range [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AngularCoord:
    """A direction on the sphere: latitude ``phi``, longitude ``theta`` (radians)."""

    phi: float
    theta: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.phi <= math.pi / 2:
            raise ValueError(f"latitude {self.phi} outside [-pi/2, pi/2]")
        object.__setattr__(self, "theta", wrap_longitude(self.theta))

    def as_unit_vector(self) -> np.ndarray:
        cp = math.cos(self.phi)
        return np.array(
            [cp * math.cos(self.theta), cp * math.sin(self.theta), math.sin(self.phi)]
        )


def angular_distance(a: AngularCoord, b: AngularCoord) -> float:
    """Great-circle distance between two directions, in radians.

    Uses the atan2 form, which stays accurate near 0 and pi where the plain
    arccos of the dot product loses digits.
    """
    dt = a.theta - b.theta
    cos_b = math.cos(b.phi)
    sin_b = math.sin(b.phi)
    cos_a = math.cos(a.phi)
    sin_a = math.sin(a.phi)
    y = math.hypot(
        cos_b * math.sin(dt),
        cos_a * sin_b - sin_a * cos_b * math.cos(dt),
    )
    x = sin_a * sin_b + cos_a * cos_b * math.cos(dt)
    return math.atan2(y, x)


@dataclass(frozen=True)
class TangentLayout:
    """A viewport configuration: plane centers, per-plane FOV, and patch side."""

    kind: str
    centers: tuple[AngularCoord, ...]
    fov_deg: float
    patch_px: int

    def __post_init__(self):
        if len(self.centers) < 1:
            raise LayoutError("layout needs at least one center")
        if not 0.0 < self.fov_deg < 180.0:
            raise LayoutError(f"fov {self.fov_deg} outside (0, 180)")
        if self.patch_px < 2:
            raise LayoutError(f"patch_px {self.patch_px} must be >= 2")
        for a, b in itertools.combinations(self.centers, 2):
            if angular_distance(a, b) < 1e-12:
                raise LayoutError("layout centers must be pairwise distinct")

    @property
    def num_planes(self) -> int:
        return len(self.centers)

    def center_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        phis = np.array([c.phi for c in self.centers])
        thetas = np.array([c.theta for c in self.centers])
        return phis, thetas


def _icosahedron_face_centers() -> list[AngularCoord]:
    # Vertices are the cyclic permutations of (0, +-1, +-g), g the golden ratio;
    # faces are the vertex triples at minimal pairwise (edge) distance.
    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = []
    for a, b in itertools.product((1.0, -1.0), (g, -g)):
        verts += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    v = np.array(verts)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    dist = np.linalg.norm(v[:, None] - v[None, :], axis=-1)
    edge = dist[dist > 1e-9].min()
    centers = []
    for face in itertools.combinations(range(12), 3):
        if all(abs(dist[i, j] - edge) < 1e-9 for i, j in itertools.combinations(face, 2)):
            c = v[list(face)].mean(axis=0)
            c /= np.linalg.norm(c)
            centers.append(c)
    assert len(centers) == 20
    coords = [
        AngularCoord(math.asin(c[2]), math.atan2(c[1], c[0])) for c in centers
    ]
    # deterministic order: north to south, then west to east
    coords.sort(key=lambda c: (-c.phi, c.theta))
    return coords


def _ring_centers(num_planes: int) -> list[AngularCoord]:
    n_eq = num_planes - 2
    step = 2.0 * math.pi / n_eq
    centers = [AngularCoord(0.0, wrap_longitude(k * step)) for k in range(n_eq)]
    centers.append(AngularCoord(math.pi / 2, 0.0))
    centers.append(AngularCoord(-math.pi / 2, 0.0))
    return centers


def make_layout(
    kind: str,
    num_planes: int | None = None,
    fov_deg: float = 80.0,
    patch_px: int = 224,
    centers=None,
) -> TangentLayout:
    """Build a tangent layout of the given family.

    ``centers`` is only used (and required) for the ``explicit`` kind; entries
    may be AngularCoord instances or (phi, theta) tuples in radians.
    """
    if kind == "icosahedral":
        t = 20 if num_planes is None else num_planes
        if not 1 <= t <= 20:
            raise LayoutError(f"icosahedral layout supports 1..20 planes, got {t}")
        chosen = tuple(_icosahedron_face_centers()[:t])
    elif kind == "ring":
        t = 10 if num_planes is None else num_planes
        if not 3 <= t <= 64:
            raise LayoutError(f"ring layout supports 3..64 planes, got {t}")
        chosen = tuple(_ring_centers(t))
    elif kind == "explicit":
        if centers is None:
            raise LayoutError("explicit layout requires centers")
        chosen = tuple(
            c if isinstance(c, AngularCoord) else AngularCoord(c[0], c[1])
            for c in centers
        )
        if num_planes is not None and num_planes != len(chosen):
            raise LayoutError(
                f"explicit layout: num_planes {num_planes} != len(centers) {len(chosen)}"
            )
        if not 1 <= len(chosen) <= 64:
            raise LayoutError(f"layout supports 1..64 planes, got {len(chosen)}")
    else:
        raise LayoutError(f"unsupported layout kind {kind!r}")
    return TangentLayout(kind=kind, centers=chosen, fov_deg=fov_deg, patch_px=patch_px)


@dataclass(frozen=True)
class AugmentSpec:
    """A viewport augmentation: shift centers, widen FOV, or change the count.

    kind    value
    ------  -------------------------------------
    shift   longitude rotation of all centers, degrees
    fov     FOV increase, degrees
    count   new number of planes (same layout family)
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("shift", "fov", "count"):
            raise LayoutError(f"unsupported augmentation kind {self.kind!r}")

    @staticmethod
    def shift(degrees: float) -> "AugmentSpec":
        return AugmentSpec("shift", degrees)

    @staticmethod
    def enlarge_fov(degrees: float) -> "AugmentSpec":
        return AugmentSpec("fov", degrees)

    @staticmethod
    def recount(num_planes: int) -> "AugmentSpec":
        return AugmentSpec("count", num_planes)


def augment_layout(layout: TangentLayout, spec: AugmentSpec) -> TangentLayout:
    """Derive the second tangent configuration used for consistency training."""
    if spec.kind == "shift":
        delta = math.radians(spec.value)
        centers = tuple(
            AngularCoord(c.phi, wrap_longitude(c.theta + delta)) for c in layout.centers
        )
        return replace(layout, centers=centers)
    if spec.kind == "fov":
        new_fov = layout.fov_deg + spec.value
        if not 0.0 < new_fov < 180.0:
            raise LayoutError(f"augmented fov {new_fov} outside (0, 180)")
        return replace(layout, fov_deg=new_fov)
    if spec.kind == "count":
        t = int(spec.value)
        if layout.kind == "explicit":
            raise LayoutError("cannot recount an explicit layout")
        return make_layout(layout.kind, t, layout.fov_deg, layout.patch_px)
    raise LayoutError(f"unsupported augmentation kind {spec.kind!r}")


def layout_to_json(layout: TangentLayout) -> str:
    """Serialize a layout; centers are stored in degrees for readability."""
    doc = {
        "kind": layout.kind,
        "centers_deg": [
            [math.degrees(c.phi), math.degrees(c.theta)] for c in layout.centers
        ],
        "fov_deg": layout.fov_deg,
        "patch_px": layout.patch_px,
    }
    return json.dumps(doc, indent=2)


def layout_from_json(text: str) -> TangentLayout:
    doc = json.loads(text)
    centers = tuple(
        AngularCoord(math.radians(p), math.radians(t)) for p, t in doc["centers_deg"]
    )
    return TangentLayout(
        kind=doc["kind"],
        centers=centers,
        fov_deg=float(doc["fov_deg"]),
        patch_px=int(doc["patch_px"]),
    )
