"""Zero-delay distributed transmission of correlated Gaussian sources over a Gaussian MAC."""

__version__ = "0.1.0"

from .analysis import DistortionReport, HighSnrDesign, SearchConfig, distortion_m3, high_snr_design, optimize_m3
from .bounds import distortion_lower_bound, sdr_upper_bound_db
from .codec import DqlcParams, OverlapError, ParameterError
from .estimators import DQLC, UncodedTransmitter
from .gauss import SourceModel, make_rng, sample
from .uncoded import distortion_uncoded

__all__ = [
    "DQLC",
    "DistortionReport",
    "DqlcParams",
    "HighSnrDesign",
    "OverlapError",
    "ParameterError",
    "SearchConfig",
    "SourceModel",
    "UncodedTransmitter",
    "distortion_lower_bound",
    "distortion_m3",
    "distortion_uncoded",
    "high_snr_design",
    "make_rng",
    "optimize_m3",
    "sample",
    "sdr_upper_bound_db",
]
