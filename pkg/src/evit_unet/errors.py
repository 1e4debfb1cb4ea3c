"""Exception hierarchy shared by every subpackage."""


class EViTError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(EViTError, ValueError):
    pass


class DtypeMismatch(EViTError, TypeError):
    pass


class InvalidArg(EViTError, ValueError):
    pass


class NotScalar(EViTError, ValueError):
    pass


class BiasExtentMismatch(ShapeMismatch):
    """Attention bias table was built for a different token grid."""


class ConfigError(EViTError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigMismatch(EViTError, ValueError):
    pass


class CorruptFile(EViTError, ValueError):
    pass


class LabelOutOfRange(EViTError, ValueError):
    pass
