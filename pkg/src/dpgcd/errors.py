"""Exception hierarchy shared by every subsystem."""


class DPGCDError(Exception):
    pass


class DimensionError(DPGCDError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(DPGCDError, ValueError):
    """An operator or module was configured with unusable settings."""


class ContractError(DPGCDError, RuntimeError):
    """A caller violated a usage contract (non-scalar loss, double backward, ...)."""


class NumericError(DPGCDError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class DataError(DPGCDError, ValueError):
    """Input data is malformed or missing."""


class GenerationError(DPGCDError, RuntimeError):
    pass


class CheckpointError(DPGCDError, ValueError):
    pass
