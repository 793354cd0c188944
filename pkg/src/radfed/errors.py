"""Exception types shared across the package."""

from __future__ import annotations


class RadfedError(Exception):
    """Base class for all package errors."""


class ParameterError(RadfedError, ValueError):
    """An argument is outside its documented domain."""


class ConsistencyError(RadfedError, ValueError):
    """Inputs that must agree with each other do not."""


class InfeasibleError(RadfedError, ValueError):
    """No feasible point exists for the requested constraints."""


class IngestionError(RadfedError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class ConfigError(RadfedError, ValueError):
    """An experiment configuration is invalid."""


class UndefinedMetricError(RadfedError, ValueError):
    """The requested metric is undefined on the given inputs."""


class NumericError(RadfedError, ArithmeticError):
    """A numeric computation produced non-finite or invalid values."""

    def __init__(
        self,
        message: str,
        *,
        round_index: int | None = None,
        step: int | None = None,
        client_id: int | None = None,
    ):
        ctx = []
        if round_index is not None:
            ctx.append(f"round={round_index}")
        if step is not None:
            ctx.append(f"step={step}")
        if client_id is not None:
            ctx.append(f"client={client_id}")
        if ctx:
            message = f"{message} [{', '.join(ctx)}]"
        super().__init__(message)
        self.round_index = round_index
        self.step = step
        self.client_id = client_id

    def with_context(
        self,
        round_index: int | None = None,
        step: int | None = None,
        client_id: int | None = None,
    ) -> "NumericError":
        """Re-wrap with run coordinates, keeping the original message."""
        base = str(self).split(" [")[0]
        return NumericError(
            base,
            round_index=round_index if round_index is not None else self.round_index,
            step=step if step is not None else self.step,
            client_id=client_id if client_id is not None else self.client_id,
        )
