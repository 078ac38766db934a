"""Exception types shared across the package."""


class VelocastError(Exception):
    """Base class for all errors raised by velocast on bad input or state."""


class ShapeError(VelocastError):
    """Tensor or array shapes incompatible with the requested operation."""


class NonFiniteError(VelocastError):
    """A NaN or infinity showed up where only finite values are allowed."""


class GeoError(VelocastError):
    """Invalid zone geometry or an impossible partition operation."""


class GraphError(VelocastError):
    """Adjacency matrix construction failed (missing zones, degenerate data)."""


class DataError(VelocastError):
    """Raw input data violates the documented file contracts."""


class ModelError(VelocastError):
    """Inconsistent model configuration or parameter state."""


class PipelineError(VelocastError):
    """Training or evaluation cannot proceed (bad split, diverging loss...)."""


class ConfigError(VelocastError):
    """Run configuration file failed validation.

    Carries the full list of problems so a config can be fixed in one
    pass instead of one error per attempt.
    """

    def __init__(self, errors):
        self.errors = list(errors) if isinstance(errors, (list, tuple)) \
            else [str(errors)]
        super().__init__("\n".join(self.errors))


class ArtifactError(VelocastError):
    """A pipeline stage artifact is missing or stale."""
