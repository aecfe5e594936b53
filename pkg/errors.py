"""
Error types for the glare-resilient costmap pipeline.

All errors derive from ValueError so callers can keep catching
validation failures the way the configuration layer always has.
"""


class ConfigError(ValueError):
    """
    Malformed preset, scenario or experiment configuration.

    Parameters
    ----------
    key : str
        Dotted path of the offending key (e.g. ``glare_patches[0].severity``).
    message : str
        Human-readable description of the problem.
    """

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


class DomainError(ValueError):
    """A value violates an operation's precondition."""


class ShapeError(ValueError):
    """Frames, maps or grids with mismatched shapes or specs."""


class ModelError(ValueError):
    """A DRM model whose schedule and weight array disagree."""
