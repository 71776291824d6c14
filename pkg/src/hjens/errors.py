"""Exception hierarchy.

Configuration-type errors map to CLI exit code 2, numerical failures to 3.
"""


class HJError(Exception):
    """Base class for all errors raised by hjens."""


class ConfigurationError(HJError):
    pass


class ContractError(ConfigurationError):
    """A caller violated an operation's precondition."""


class FormatError(ConfigurationError):
    """Malformed snapshot, trajectory or config file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(FormatError):
    pass


class NumericalError(HJError):
    pass


class IntegrationError(NumericalError):
    """Non-finite state during integration; carries the last good state."""

    def __init__(self, message, last_state=None, member=None):
        self.last_state = last_state
        self.member = member
        super().__init__(message)


class StepSizeError(NumericalError):
    """CFL bound violated."""

    def __init__(self, message, node=None, courant=None):
        self.node = node
        self.courant = courant
        super().__init__(message)


class SchemeError(NumericalError):
    pass


class CausticError(NumericalError):
    """Single-valuedness broke down before the requested end time."""

    def __init__(self, message, time):
        self.time = time
        super().__init__(message)


class CoverageError(NumericalError):
    pass


class DomainExitError(NumericalError):
    def __init__(self, message, time):
        self.time = time
        super().__init__(message)


class OutOfStencilError(NumericalError):
    pass


class RootFindError(NumericalError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class DegeneracyError(NumericalError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class ExprError(ConfigurationError):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name, offset):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", offset)


class ArityError(ExprSyntaxError):
    pass


class UnboundVariableError(ExprError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"variable {name!r} is not bound")


class ExprDomainError(ExprError, NumericalError):
    def __init__(self, func, value):
        self.func = func
        self.value = value
        super().__init__(f"{func}: argument {value!r} outside the function's domain")


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of an operation."""
