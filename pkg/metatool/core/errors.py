"""Exception hierarchy for metatool."""

from typing import Optional


class MetatoolError(RuntimeError):
    """Base class for every error raised by metatool."""


class ValidationError(MetatoolError, ValueError):
    """Raised when a domain input violates its invariants."""


class ConfigError(ValidationError):
    """Raised when configuration values are missing or out of range."""


class EpisodeError(MetatoolError):
    """A component failure inside the closed loop, tagged with its episode."""

    def __init__(self, episode: int, cause: BaseException):
        super().__init__(f"episode {episode}: {cause}")
        self.episode = episode
        self.cause = cause


def require(condition: bool, message: str, *, error: Optional[type] = None) -> None:
    """Raise ``error`` (ValidationError by default) unless ``condition`` holds."""
    if not condition:
        raise (error or ValidationError)(message)
