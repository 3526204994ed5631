"""Exception hierarchy shared across the package."""


class FuelsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FuelsError, ValueError):
    """Operand shapes do not conform."""


class DomainError(FuelsError, ValueError):
    """An input lies outside the domain of an operation (e.g. log of a non-positive entry)."""


class ContractError(FuelsError, ValueError):
    """A caller violated a documented precondition."""


class NumericError(FuelsError, FloatingPointError):
    """A NaN or infinity appeared in a computation."""


class EmptyDatasetError(FuelsError, ValueError):
    pass


class ConstantSeriesError(FuelsError, ValueError):
    pass


class ParseError(FuelsError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(FuelsError, ValueError):
    pass


class ParameterError(FuelsError, ValueError):
    """A hyperparameter is out of range (e.g. temperature <= 0)."""


class InfeasibleParametersError(FuelsError, ValueError):
    pass


class TrainingError(FuelsError, RuntimeError):
    def __init__(self, message: str, round_: int | None = None, client: int | None = None):
        self.round = round_
        self.client = client
        prefix = []
        if round_ is not None:
            prefix.append(f"round {round_}")
        if client is not None:
            prefix.append(f"client {client}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class ConfigError(FuelsError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
