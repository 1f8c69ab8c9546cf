"""Domain exceptions.

Every error is a ``click.ClickException`` so an uncaught one inside a command
exits with status 1 and a one-line message, while library callers can still
catch the builtin base class.
"""

from __future__ import annotations

from collections.abc import Mapping

import click


class CrossViewError(click.ClickException):
    exit_code = 1


class ShapeError(CrossViewError, ValueError):
    """Tensor shapes do not fit the operation."""


class ConfigError(CrossViewError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class LabelError(CrossViewError, ValueError):
    """A class label or class index is outside the known classes."""


class DomainError(CrossViewError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DegeneratePredictionError(DomainError):
    """A prediction map has zero variance."""


class InputError(CrossViewError, ValueError):
    """An operation received an empty or otherwise unusable input."""


class FormatError(CrossViewError, ValueError):
    """A file on disk is not in the expected container format."""


class DatasetError(CrossViewError, ValueError):
    """The dataset cannot satisfy a training or evaluation request."""


class AnnotationError(CrossViewError, ValueError):
    """A point annotation is invalid."""


class ParseError(CrossViewError, ValueError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TrainingError(CrossViewError, RuntimeError):
    def __init__(self, message: str, components: Mapping[str, float] | None = None) -> None:
        self.components = dict(components or {})
        if self.components:
            dump = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
            message = f"{message} ({dump})"
        super().__init__(message)
