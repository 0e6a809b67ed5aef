"""Exception hierarchy used across the pipeline."""

from __future__ import annotations


class SatireDecoderError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(SatireDecoderError, ValueError):
    """A precondition on an argument was violated."""


class TransportError(SatireDecoderError):
    """Network failure or timeout talking to a backend."""

    def __init__(self, message: str, *, elapsed: float | None = None, attempts: int = 1):
        super().__init__(message)
        self.elapsed = elapsed
        self.attempts = attempts


class ProtocolError(SatireDecoderError):
    """The backend answered, but not in the shape the wire protocol requires."""


class BackendError(SatireDecoderError):
    """The backend returned a non-2xx status."""

    def __init__(self, message: str, *, status: int | None = None):
        super().__init__(message)
        self.status = status

    @property
    def retryable(self) -> bool:
        return self.status is None or self.status == 429 or self.status >= 500


class ZeroVectorError(SatireDecoderError):
    """An embedding was all zeros, so cosine similarity is undefined."""


class ParseError(SatireDecoderError):
    """A reasoner response did not contain the expected labeled sections."""

    def __init__(self, message: str, *, section: int | None = None, raw_outputs: list[str] | None = None):
        super().__init__(message)
        self.section = section
        self.raw_outputs = list(raw_outputs or [])


class DecodeError(SatireDecoderError):
    """Image bytes could not be decoded as a raster image."""


class AgentError(SatireDecoderError):
    """A decoupling agent failed; carries which role and which half."""

    def __init__(self, message: str, *, role: str, half: str | None = None, sample_id: str | None = None):
        super().__init__(message)
        self.role = role
        self.half = half
        self.sample_id = sample_id

    def __str__(self) -> str:
        where = f"role={self.role}"
        if self.half:
            where += f", half={self.half}"
        if self.sample_id:
            where += f", sample={self.sample_id}"
        return f"{self.args[0]} ({where})"


class SweepError(SatireDecoderError):
    """Every temperature of a sweep failed."""

    def __init__(self, message: str, *, sample_id: str | None = None, errors: list[str] | None = None):
        super().__init__(message)
        self.role = "reasoner"
        self.sample_id = sample_id
        self.errors = list(errors or [])


class SchemaError(SatireDecoderError):
    """A manifest or config document failed validation."""


class MissingFileError(SatireDecoderError, FileNotFoundError):
    pass


class DuplicateIdError(SatireDecoderError):
    pass


class ConflictError(SatireDecoderError):
    """A write-once cache entry was written again with different bytes."""


class ConfigError(SatireDecoderError):
    pass
