"""Exception types shared across the package."""


class ProgpolError(Exception):
    """Base class for all package errors."""


class ParseError(ProgpolError):
    """Raised on malformed policy text; carries source position."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class LangTypeError(ProgpolError):
    """A structurally invalid program (bad offsets, holes at runtime, ...)."""


class ChannelResolutionError(ProgpolError):
    """A policy references a channel the history does not provide."""


class InsufficientHistoryError(ProgpolError):
    """History is shorter than the program's declared window requires."""


class InvalidDiscreteProgramError(ProgpolError):
    """Program is not a valid discrete-action policy for the given action set."""


class UnprintableProgramError(ProgpolError):
    """Program uses constructs outside the surface grammar."""


class ConfigError(ProgpolError):
    """Bad configuration value or file."""


class DomainError(ProgpolError):
    """Action outside the environment's action space."""


class UnsupportedTemplateError(ProgpolError):
    """Template outside the class a fitter supports."""


class UnsupportedProgramError(ProgpolError):
    """Program outside the guarded-affine fragment the verifier supports."""


class TrainingFailedError(ProgpolError):
    """Oracle training did not beat the baseline; carries the best return."""

    def __init__(self, message, best_return):
        self.best_return = best_return
        super().__init__(f"{message} (best return {best_return:.2f})")


class NoCandidateError(ProgpolError):
    """A sketch produced no templates to search."""
