"""Audio captioning conditioned on detected sound events, implemented with numpy."""

from .errors import (EvcapError, FormatError, InvalidArgument, InvalidState, NumericError,
                     ValidationError)

__version__ = "0.1.0"

__all__ = ["EvcapError", "FormatError", "InvalidArgument", "InvalidState", "NumericError",
           "ValidationError", "__version__"]
