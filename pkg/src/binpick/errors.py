class InvalidFrameError(ValueError):
    """Axes or rotations that do not form a proper right-handed frame."""


class SceneCapacityError(RuntimeError):
    """The bin cannot hold the requested number of objects."""


class DegenerateDataError(ValueError):
    """Training data that a discriminator cannot be fitted on (e.g. one class)."""


class ConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    """A model or database file with the wrong version or feature kind."""
