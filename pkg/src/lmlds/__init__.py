"""Tensor time-series forecasting with transform-domain multilinear dynamical systems."""

from .data_io import (
    SplitSpec,
    TensorSeries,
    generate_synthetic,
    load_model,
    load_series,
    relative_error,
    save_model,
    save_series,
)
from .errors import (
    DataFormatError,
    IncompatibleLengthError,
    ModelFormatError,
    NumericalError,
    ReconstructionError,
)
from .gaussian_lds import CovarianceMode, SliceLDSParams, em_fit, forecast, smooth
from .model import (
    LMLDSModel,
    ModelFamily,
    VectorLDSModel,
    fit_baseline_lds,
    init_model,
    latent_dim_for_budget,
    param_count,
    predict,
    train,
)
from .tensor_core import DCT, DFT, DWT, IDENTITY, TransformKind

__all__ = [
    "CovarianceMode",
    "DCT",
    "DFT",
    "DWT",
    "DataFormatError",
    "IDENTITY",
    "IncompatibleLengthError",
    "LMLDSModel",
    "ModelFamily",
    "ModelFormatError",
    "NumericalError",
    "ReconstructionError",
    "SliceLDSParams",
    "SplitSpec",
    "TensorSeries",
    "TransformKind",
    "VectorLDSModel",
    "em_fit",
    "fit_baseline_lds",
    "forecast",
    "generate_synthetic",
    "init_model",
    "latent_dim_for_budget",
    "load_model",
    "load_series",
    "param_count",
    "predict",
    "relative_error",
    "save_model",
    "save_series",
    "smooth",
    "train",
]

__version__ = "0.1.0"
