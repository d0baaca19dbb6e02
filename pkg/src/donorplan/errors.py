"""Exception types shared across the package."""


class DonorPlanError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DonorPlanError, ValueError):
    """A value violates a documented precondition or field constraint."""


class MissingAnchorError(DonorPlanError, ValueError):
    """Donor has no geographic anchor, so no distance can be computed."""


class InsufficientDataError(DonorPlanError, ValueError):
    """Not enough history to compute the requested statistic."""


class DegenerateFitError(DonorPlanError, ValueError):
    """A regression design matrix is rank deficient."""


class ModelConstructionError(DonorPlanError, ValueError):
    """The optimization model cannot be built from the given inputs."""


class StructuralError(DonorPlanError, ValueError):
    """A plan references donors or sessions that do not exist."""


class IngestionError(DonorPlanError, ValueError):
    """An input file is unreadable or structurally invalid."""
