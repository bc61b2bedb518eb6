"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class RainSarError(Exception):
    exit_code = 1


# --- Validation (exit 2) ---
class ValidationFailure(RainSarError):
    exit_code = EXIT_VALIDATION


class ConfigError(ValidationFailure):
    pass


class InvalidGmfInput(ValidationFailure, ValueError):
    pass


class IncidenceOutOfRange(ValidationFailure, ValueError):
    def __init__(self, incidence, valid: tuple[float, float]):
        self.incidence = incidence
        self.valid = valid
        super().__init__(f"Incidence {incidence} deg outside validity range [{valid[0]}, {valid[1]}]")


class ShapeMismatch(ValidationFailure, ValueError):
    pass


# --- Data (exit 3) ---
class DataError(RainSarError):
    exit_code = EXIT_DATA


class ContainerError(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class GeometryError(DataError):
    pass


class NoScanInWindow(DataError):
    def __init__(self, sar_time, nearest_delta_s: float | None, window_s: float):
        self.sar_time = sar_time
        self.nearest_delta_s = nearest_delta_s
        self.window_s = window_s
        super().__init__(
            f"No radar scan within {window_s:.0f} s of {sar_time.isoformat()}"
            + (f" (nearest at {nearest_delta_s:.0f} s)" if nearest_delta_s is not None else "")
        )


class RasterTooSmall(DataError):
    pass


class InsufficientGroups(DataError):
    pass


class EmptyClass(DataError):
    def __init__(self, class_id: int):
        self.class_id = class_id
        super().__init__(f"Class {class_id} has no records in the sampled subset")


# --- Numeric (exit 4) ---
class NumericError(RainSarError):
    exit_code = EXIT_NUMERIC


class NonFiniteLoss(NumericError):
    def __init__(self, component: str, provenance: str | None = None):
        self.component = component
        self.provenance = provenance
        msg = f"Non-finite value in loss component {component}"
        if provenance:
            msg += f" ({provenance})"
        super().__init__(msg)


class NonFiniteGradient(NumericError):
    pass


class DegenerateInput(NumericError):
    pass
