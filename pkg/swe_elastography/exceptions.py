"""Custom exceptions for the shear-wave elastography toolkit."""

from typing import Optional


class SweElastographyError(Exception):
    """Base exception for the elastography toolkit."""
    pass


class ConfigurationError(SweElastographyError):
    """Raised when configuration is invalid."""
    pass


class PhantomSpecError(SweElastographyError):
    """Raised when a phantom specification cannot be parsed or validated."""

    def __init__(self, message: str, line_number: Optional[int] = None, source: str = ""):
        self.line_number = line_number
        self.source = source
        location = ""
        if source:
            location = f"{source}:"
        if line_number is not None:
            location = f"{location}{line_number}: "
        elif location:
            location = f"{location} "
        super().__init__(f"{location}{message}")


class StackFormatError(SweElastographyError):
    """Raised when a stack file is malformed or cannot be written."""
    pass


class DataValidationError(SweElastographyError):
    """Raised when a data container violates its invariants."""
    pass


class ExportError(SweElastographyError):
    """Raised when a map cannot be exported."""
    pass


class SimulationError(SweElastographyError):
    """Raised when the wave or RF simulation fails."""
    pass


class CflViolationError(SimulationError):
    """Raised when the time step breaks the CFL stability limit."""
    pass


class CalibrationError(SimulationError):
    """Raised when the push amplitude cannot be calibrated."""
    pass


class TrackingError(SweElastographyError):
    """Raised when displacement tracking fails."""

    def __init__(self, message: str, frame_index: Optional[int] = None):
        self.frame_index = frame_index
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)


class ReconstructionError(SweElastographyError):
    """Raised when shear-wave-speed reconstruction fails."""
    pass


class MetricError(SweElastographyError):
    """Raised when a metric is undefined for its inputs."""
    pass
