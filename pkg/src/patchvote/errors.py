"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to, plus an
optional pipeline stage name and remediation hint.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GEOMETRY = 4
EXIT_DIVERGENCE = 5
EXIT_NOT_CONVERGED = 6


class PatchVoteError(Exception):
    exit_code = 1

    def __init__(self, message: str, *, stage: str | None = None, hint: str | None = None):
        super().__init__(message)
        self.stage = stage
        self.hint = hint

    def __str__(self) -> str:
        msg = super().__str__()
        if self.stage:
            msg = f"[{self.stage}] {msg}"
        if self.hint:
            msg = f"{msg} (hint: {self.hint})"
        return msg


class ConfigError(PatchVoteError, ValueError):
    exit_code = EXIT_CONFIG


class ParseError(PatchVoteError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    exit_code = EXIT_IO

    def __init__(self, message: str, *, path=None, line: int | None = None, **kw):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message, **kw)
        self.path = path
        self.line = line


class InvalidDepthError(PatchVoteError, ValueError):
    exit_code = EXIT_GEOMETRY


class EmptySceneError(PatchVoteError):
    exit_code = EXIT_GEOMETRY


class DegenerateKernelError(PatchVoteError):
    exit_code = EXIT_GEOMETRY

    def __init__(self, message: str, *, cluster: int | None = None, **kw):
        if cluster is not None:
            message = f"cluster {cluster}: {message}"
        super().__init__(message, **kw)
        self.cluster = cluster


class DegenerateGeometryError(PatchVoteError):
    exit_code = EXIT_GEOMETRY


class DivergenceError(PatchVoteError):
    """Servo loop diverged; the partial trajectory is attached."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, trajectory=None, **kw):
        super().__init__(message, **kw)
        self.trajectory = trajectory
