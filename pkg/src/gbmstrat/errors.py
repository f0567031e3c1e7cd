"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 2


class NotFound(PipelineError):
    pass


class FormatError(PipelineError):
    pass


class ArgumentError(PipelineError, ValueError):
    pass


class BoundsError(PipelineError, IndexError):
    pass


class ConfigError(PipelineError):
    pass


class TrainingError(PipelineError):
    exit_code = 3
