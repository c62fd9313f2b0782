"""Exception hierarchy for modalrecon.

Numerical failures carry enough payload to write a diagnostic report; the CLI
maps ScenarioError to exit code 2 and the numerical failures to exit code 3.
"""

from __future__ import annotations


class ModalreconError(Exception):
    """Base class for all package-specific failures."""


class ScenarioError(ModalreconError):
    """Invalid scenario input. Message starts with the offending field path."""


class UnobservableError(ModalreconError):
    """Observability Gramian numerically singular on the requested subspace."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BlowupError(ModalreconError):
    """Nonlinear solve exceeded the norm ceiling."""

    def __init__(self, message, time_of_failure, norm_value):
        super().__init__(message)
        self.time_of_failure = time_of_failure
        self.norm_value = norm_value


class ReconstructionError(ModalreconError):
    """Picard iteration aborted (divergence or ball exit).

    The partially built result is attached for diagnostics.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
