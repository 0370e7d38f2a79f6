from ._core import (
    NumericError,
    ParamError,
    ShapeError,
    farthest_point_sample,
    global_correlation,
    knn,
    local_correlation,
    relation,
    sinusoidal_encode,
    softmax,
    verify_fpconv,
    verify_fptransformer,
    verify_gradients,
    voxel_downsample,
)

__all__ = [
    "NumericError",
    "ParamError",
    "ShapeError",
    "farthest_point_sample",
    "global_correlation",
    "knn",
    "local_correlation",
    "relation",
    "sinusoidal_encode",
    "softmax",
    "verify_fpconv",
    "verify_fptransformer",
    "verify_gradients",
    "voxel_downsample",
]
