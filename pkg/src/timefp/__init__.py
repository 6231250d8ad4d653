"""Timing-only website fingerprinting over uplink packet timestamps."""

__version__ = "0.1.0"

from .dtw import DtwConfig, WarpingPath, dtw_align, f_distance  # noqa: E402
from .trace import Dataset, Trace, normalize  # noqa: E402

__all__ = [
    "Dataset",
    "DtwConfig",
    "Trace",
    "WarpingPath",
    "dtw_align",
    "f_distance",
    "normalize",
]
