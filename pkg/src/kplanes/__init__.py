"""Numerical toolkit for Kakeya-type maximal inequalities over families of k-planes."""
from ._kernels import backend
from .grassmann import (
    AffinePlane,
    MetricBall,
    ParameterError,
    Params,
    Subspace,
    compute_p,
    compute_p_exact,
    delta_net_affine,
    delta_net_grassmann,
    metric_d_affine,
    metric_d_linear,
    metric_rho_affine,
    metric_rho_linear,
    parse_scale,
    projection_matrix,
)
from .spacing import (
    PlaneFamily,
    PreconditionError,
    cantor_set_1d,
    frostman_partition,
    map_family_to_unit_cube,
    spacing_check,
)
from .slabs import (
    Grid,
    IncidenceField,
    Slab,
    exponent_fit,
    kakeya_ratio,
    lp_norm,
    rasterize_family,
    slab_contains,
    slab_volume,
)
from .brascamp_lieb import (
    BLInstance,
    bl_bound_check,
    bl_constant_search,
    bl_functional,
    easylem_audit,
    proj_dim,
)
from .broad_narrow import (
    RescalingMap,
    cover_directions,
    greedy_transverse_tuple,
    narrow_test,
    rescale_tau,
    significant_caps,
    unrescale_tau,
)
from .families import (
    ExampleSpec,
    box_counting_dimension,
    gen_high_beta,
    gen_low_beta,
    gen_random_frostman,
)

__all__ = [
    "AffinePlane", "backend", "bl_bound_check", "bl_constant_search", "bl_functional",
    "BLInstance", "box_counting_dimension", "cantor_set_1d", "compute_p", "compute_p_exact",
    "cover_directions", "delta_net_affine", "delta_net_grassmann", "easylem_audit",
    "ExampleSpec", "exponent_fit", "frostman_partition", "gen_high_beta", "gen_low_beta",
    "gen_random_frostman", "greedy_transverse_tuple", "Grid", "IncidenceField",
    "kakeya_ratio", "lp_norm", "map_family_to_unit_cube", "metric_d_affine",
    "metric_d_linear", "metric_rho_affine", "metric_rho_linear", "MetricBall",
    "narrow_test", "ParameterError", "Params", "parse_scale", "PlaneFamily",
    "PreconditionError", "proj_dim", "projection_matrix", "rasterize_family", "rescale_tau",
    "RescalingMap", "significant_caps", "Slab", "slab_contains", "slab_volume",
    "spacing_check", "Subspace", "unrescale_tau",
]

__version__ = "0.1.0"
