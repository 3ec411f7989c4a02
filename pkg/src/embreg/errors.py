"""Exception types raised across the toolkit."""


class EmbregError(Exception):
    """Base class for all toolkit-specific errors."""


class VolumeIOError(EmbregError):
    """A volume container could not be read or written."""


class NoBodyFoundError(EmbregError):
    """Body-mask extraction found no voxel above the threshold."""


class NoConfidentMatchesError(EmbregError):
    """Every grid correspondence fell below the similarity threshold."""

    def __init__(self, message: str, prefilter_count: int = 0):
        super().__init__(message)
        self.prefilter_count = prefilter_count


class InsufficientCorrespondencesError(EmbregError):
    """Fewer matched pairs than the affine fit requires."""


class DegenerateConfigurationError(EmbregError):
    """Matched points are rank deficient (coplanar or collinear)."""


class PipelineError(EmbregError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
