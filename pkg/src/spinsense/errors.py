"""Exception hierarchy shared by all spinsense modules."""

from __future__ import annotations


class SpinSenseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SpinSenseError, ValueError):
    """A precondition on an argument was violated (bad value, wrong shape, ...)."""


class DomainError(SpinSenseError, ValueError):
    """Inputs are individually valid but the requested result does not exist
    in the model's domain (e.g. a temperature mapping to non-positive resistance)."""


class FitFailureError(SpinSenseError, RuntimeError):
    """A least-squares fit did not converge or the data cannot constrain it.

    ``diagnostics`` carries best-so-far parameter values and solver state.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularityError(SpinSenseError, ValueError):
    """A field was requested on or too close to a source filament.

    ``index`` identifies the offending point when evaluating a path of points.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NoPairsError(SpinSenseError, ValueError):
    """No displacement pairs exist at the requested lag time."""


class EmptyMaskError(SpinSenseError, ValueError):
    """Thresholding produced an empty foreground."""


class FileFormatError(SpinSenseError, ValueError):
    """An input file (CSV, PGM, config) could not be parsed."""
