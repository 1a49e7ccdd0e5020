"""Exception hierarchy shared across the package."""


class GeoCGANError(Exception):
    """Base class for all package errors."""


class ShapeError(GeoCGANError, ValueError):
    pass


class ContractError(GeoCGANError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(GeoCGANError, ArithmeticError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class ConfigError(GeoCGANError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DivergenceError(NumericError):
    pass


class GeometryError(NumericError):
    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z


class BlowUpError(GeometryError):
    def __init__(self, message, last_t=None, z=None):
        super().__init__(message, z=z)
        self.last_t = last_t


class TrainingError(GeoCGANError, RuntimeError):
    def __init__(self, message, epoch=None, step=None, component=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.component = component


class CheckpointError(GeoCGANError, IOError):
    pass


class IntegrityError(CheckpointError):
    pass


class FormatVersionError(CheckpointError):
    pass
