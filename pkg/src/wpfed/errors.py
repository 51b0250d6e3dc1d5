"""Exception hierarchy shared by every wpfed module."""


class WPFedError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(WPFedError, ValueError):
    """Shapes, lengths or ids do not match what an operation expects."""


class ConfigError(WPFedError, ValueError):
    """A configuration is invalid or describes an infeasible plan."""


class NumericError(WPFedError, ArithmeticError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message: str, round_id: int | None = None, client_id: int | None = None):
        self.round_id = round_id
        self.client_id = client_id
        where = []
        if round_id is not None:
            where.append(f"round {round_id}")
        if client_id is not None:
            where.append(f"client {client_id}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ProtocolError(WPFedError):
    """A protocol message or intermediate value is malformed."""


class BoardRejection(WPFedError):
    """The announcement board refused a record (duplicate or out of phase)."""
