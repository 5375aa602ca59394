"""Exception types shared across the package."""


class FewshotError(Exception):
    pass


class ShapeError(FewshotError):
    """Array shapes are inconsistent with the operation's contract."""


class StateError(FewshotError):
    """Operation applied to an object in the wrong state (e.g. a consumed tape)."""


class ConfigError(FewshotError):
    """Invalid or inconsistent configuration."""


class CapacityError(FewshotError):
    """A dataset cannot supply the requested episode (too few classes/items)."""


class DegenerateInputError(FewshotError):
    """Numerically degenerate input, e.g. a zero-norm vector fed to a cosine head."""


class IngestionError(FewshotError):
    """A dataset on disk could not be loaded."""


class DivergenceError(FewshotError):
    """Training produced a non-finite loss."""
