"""Spherical geometry: viewport layouts, gnomonic projection, resampling grids."""

from .layout import (
    AngularCoord,
    AugmentSpec,
    LayoutError,
    TangentLayout,
    angular_distance,
    augment_layout,
    layout_from_json,
    layout_to_json,
    make_layout,
    wrap_longitude,
)
from .gnomonic import (
    OutOfHemisphereError,
    gnomonic_forward,
    gnomonic_forward_arrays,
    gnomonic_inverse,
    gnomonic_inverse_arrays,
)
from .grids import (
    OverlapWeights,
    SamplingGrid,
    angular_coordinate_maps,
    backproject_tangent_to_erp,
    backproject_vjp,
    build_forward_grid,
    build_inverse_grid,
    erp_pixel_angles,
    project_erp_to_tangent,
)
from .cache import grids_for_layout

__all__ = [
    "AngularCoord",
    "AugmentSpec",
    "LayoutError",
    "OutOfHemisphereError",
    "OverlapWeights",
    "SamplingGrid",
    "TangentLayout",
    "angular_coordinate_maps",
    "angular_distance",
    "augment_layout",
    "backproject_tangent_to_erp",
    "backproject_vjp",
    "build_forward_grid",
    "build_inverse_grid",
    "erp_pixel_angles",
    "gnomonic_forward",
    "gnomonic_forward_arrays",
    "gnomonic_inverse",
    "gnomonic_inverse_arrays",
    "grids_for_layout",
    "layout_from_json",
    "layout_to_json",
    "make_layout",
    "project_erp_to_tangent",
    "wrap_longitude",
]
