class WholeBodyError(Exception):
    """Base class for library errors."""


class DegenerateRotationError(WholeBodyError, ValueError):
    pass


class GimbalDegenerateError(WholeBodyError, ValueError):
    """Camera view axis parallel to gravity; yaw is undefined."""


class UndefinedRatioError(WholeBodyError, ValueError):
    pass


class DegenerateAlignmentError(WholeBodyError, ValueError):
    pass


class UndefinedMetricError(WholeBodyError, ValueError):
    """Too few frames for a finite-difference metric."""


class NoContactError(WholeBodyError, ValueError):
    """A contact-based quantity was requested on a clip without contact frames."""


class ConfigError(WholeBodyError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericalError(WholeBodyError, RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
