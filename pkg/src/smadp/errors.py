"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A numeric or enum parameter is outside its allowed range."""


class StructuralError(ValueError):
    """An input has the wrong shape, ordering, or internal structure."""


class FormatError(ValueError):
    """A file does not match its declared binary format."""


class LengthError(ValueError):
    """A file or buffer is shorter than its header promises."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


class StateError(RuntimeError):
    """An object was used in a way inconsistent with its accumulated state."""


class AccountingError(RuntimeError):
    """A privacy-accounting computation left the representable range."""


class ConfigError(ValueError):
    """One or more invalid configuration entries, collected before any compute."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
