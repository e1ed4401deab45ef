"""Exception types shared across the package."""


class FormatError(ValueError):
    """Malformed contents in an input file."""


class SpecError(ValueError):
    """Invalid grid or range configuration."""


class ShapeError(ValueError):
    """Inconsistent array shapes passed to a numeric routine."""


class ConfigError(ValueError):
    """Unusable configuration file or key."""


class InsufficientData(ValueError):
    """Not enough samples for the requested operation."""


class PlacementError(RuntimeError):
    """Scene object placement ran out of attempts."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


class OutOfGrid(ValueError):
    """Candidate footprint lies fully outside the raster grid."""


class NoGroundTruth(ValueError):
    """Evaluation needs at least one ground-truth object."""


class DegenerateInput(ValueError):
    """Statistic is undefined for the given input."""


class BadEdges(ValueError):
    """Bin edges must be strictly increasing."""
