"""Exception hierarchy. ``error_class`` is the machine-readable tag the CLI prints."""


class GpaError(Exception):
    error_class = "error"
    exit_code = 1


class ConfigError(GpaError, ValueError):
    error_class = "config_error"
    exit_code = 2


class CoincidentPointError(GpaError):
    """Two sites at distance zero. Probability zero for continuous densities,
    so it points at an RNG or input defect."""

    error_class = "coincident_point"
    exit_code = 3

    def __init__(self, message, seed=None, stream_id=None, step=None):
        super().__init__(message)
        self.seed = seed
        self.stream_id = stream_id
        self.step = step


class EmptyIndexError(GpaError, LookupError):
    error_class = "empty_index"


class FitError(GpaError, ValueError):
    error_class = "fit_error"
    exit_code = 4
