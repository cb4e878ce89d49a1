"""Exception types shared across the package."""


class ItdError(Exception):
    """Base class for all itdopf errors."""


class CaseFormatError(ItdError):
    """Raised when case text (MATPOWER or JSON) cannot be parsed or fails schema checks."""


class CaseInvariantError(ItdError):
    """Raised when parsed case data violates a structural invariant."""


class ModelError(ItdError):
    """Raised when a region model cannot be built from a region spec."""


class RegionSolveError(ItdError):
    """Raised when a local subproblem solve fails during a distributed run."""

    def __init__(self, region: str, iteration: int, detail: str):
        self.region = region
        self.iteration = iteration
        self.detail = detail
        super().__init__(f"region {region} failed at iteration {iteration}: {detail}")


class TraceError(ItdError):
    """Raised for malformed or empty trace files."""
