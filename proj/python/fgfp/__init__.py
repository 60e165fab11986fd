"""Fractional Gaussian filter kernels, fitting and checkpoint inspection."""

from ._fgfp import (
    DimensionError,
    FitError,
    FormatError,
    IntegrityError,
    IoError,
    NumericError,
    UsageError,
    compression_ratio,
    export_kernel,
    fit,
    frac_gauss_1d,
    gl_series_weight,
    gl_trinomial,
    layer_threshold,
    model_digest,
    param_count,
    param_grads,
    read_summary,
    synthesize,
)

__all__ = [
    "DimensionError",
    "FitError",
    "FormatError",
    "IntegrityError",
    "IoError",
    "NumericError",
    "UsageError",
    "compression_ratio",
    "export_kernel",
    "fit",
    "frac_gauss_1d",
    "gl_series_weight",
    "gl_trinomial",
    "layer_threshold",
    "model_digest",
    "param_count",
    "param_grads",
    "read_summary",
    "synthesize",
]
