"""Exception hierarchy shared by every pipeline stage.

Each failure class carries the process exit code the CLI reports for it, so
the orchestrator never needs a separate lookup table.
"""
from __future__ import annotations


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class DesignLoadError(PipelineError):
    exit_code = 3


class DesignNotFound(DesignLoadError):
    pass


class DesignDecodeError(DesignLoadError):
    pass


class EmptyDesign(DesignLoadError):
    pass


class NoModuleFound(DesignLoadError):
    pass


class ResolutionError(PipelineError):
    exit_code = 4


class NoSuchCategory(ResolutionError):
    def __init__(self, name_raw: str, nearest: str | None, distance: int | None, valid: list[str]):
        self.name_raw = name_raw
        self.nearest = nearest
        self.distance = distance
        self.valid = list(valid)
        hint = f"; nearest candidate is {nearest!r} (edit distance {distance})" if nearest else ""
        super().__init__(
            f"{name_raw!r} does not resolve{hint}. Valid names: {', '.join(self.valid)}"
        )


class NoSuchThreat(NoSuchCategory):
    pass


class ClassificationUnresolvable(ResolutionError):
    def __init__(self, raw_reply: str, cause: NoSuchCategory):
        self.raw_reply = raw_reply
        super().__init__(f"classifier reply could not be resolved: {cause}")


class EmptyTarget(PipelineError):
    exit_code = 5


class MissingCredentials(PipelineError):
    exit_code = 6


class GatewayError(PipelineError):
    exit_code = 7


class FixtureMissing(GatewayError):
    pass


class TransportExhausted(GatewayError):
    pass


class StageWriteError(PipelineError):
    exit_code = 8


class KnowledgeBaseError(RuntimeError):
    """Embedded CWE data is missing or corrupt. Not recoverable."""


class LintUnparseable(ValueError):
    pass


class TableMissing(ValueError):
    pass
