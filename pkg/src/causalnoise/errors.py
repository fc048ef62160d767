"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CausalNoiseError(Exception):
    """Base class for every error raised by this package."""


class InvalidSize(CausalNoiseError, ValueError):
    pass


class CycleDetected(CausalNoiseError, ValueError):
    pass


class NoValidPerturbation(CausalNoiseError):
    pass


class SamplingExhausted(CausalNoiseError):
    """Rejection sampling hit its attempt cap."""


class UnknownNode(CausalNoiseError, KeyError):
    pass


class ConfigError(CausalNoiseError, ValueError):
    pass


class IncompleteWorld(CausalNoiseError, ValueError):
    pass


class ZeroEvidence(CausalNoiseError, ZeroDivisionError):
    pass


class PreconditionError(CausalNoiseError, ValueError):
    pass


class NonBinary(PreconditionError):
    pass


class NotApplicable(CausalNoiseError):
    def __init__(self, kind: str, reason: str):
        self.kind = kind
        self.reason = reason
        super().__init__(f"{kind}: {reason}")


class VocabExhausted(CausalNoiseError):
    pass


class TemplateMissing(CausalNoiseError, KeyError):
    pass


class StageError(CausalNoiseError):
    """Wraps a failure inside one stage of instance generation."""

    def __init__(self, stage: str, index: int, cause: BaseException):
        self.stage = stage
        self.index = index
        self.cause = cause
        super().__init__(f"instance {index}: stage {stage!r} failed: {cause}")


class ParseError(CausalNoiseError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaVersionMismatch(CausalNoiseError):
    pass


class EmptyParse(CausalNoiseError, ValueError):
    pass


class MissingResponse(CausalNoiseError, KeyError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"missing responses for {len(self.ids)} instance(s): {self.ids[:10]}")


class MissingPrediction(MissingResponse):
    pass
