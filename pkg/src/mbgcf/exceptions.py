class MBGCFError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(MBGCFError, ValueError):
    exit_code = 1


class DataError(MBGCFError, ValueError):
    exit_code = 2


class ShapeError(MBGCFError, ValueError):
    exit_code = 2


class CheckpointError(DataError):
    pass


class NumericalError(MBGCFError, FloatingPointError):
    exit_code = 3
