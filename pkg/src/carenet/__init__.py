"""Micro-FTIR hyperspectral tissue pipeline.

Segmentation, chemometric preprocessing, a residual 1D CNN trained with a
patient-stratified protocol, voting-based evaluation, and Grad-CAM-style
wavenumber attribution, all reproducible from a single seed.
"""

from .errors import DataError, NumericalError, PipelineError

__version__ = "0.1.0"

__all__ = ["DataError", "NumericalError", "PipelineError", "__version__"]
