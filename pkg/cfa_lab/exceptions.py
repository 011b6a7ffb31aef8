class ConfigError(ValueError):
    """Raised when a run configuration or override is invalid"""


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed"""


class ShapeError(ValueError):
    """Raised when arrays do not match the network they are used with"""


class ProbabilityError(ValueError):
    """Raised when a probability argument falls outside [0, 1]"""
