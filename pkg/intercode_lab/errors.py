"""Exceptions raised by the lab. Lemma checks never raise; they return reports."""


class LabError(Exception):
    pass


class ConfigError(LabError, ValueError):
    """Invalid configuration value or argument. `field` names the offender."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ScriptError(LabError, ValueError):
    """An insertion-deletion event script does not fit the execution it drives."""


class RunawayError(LabError, RuntimeError):
    """A scheme ran past its iteration ceiling."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = dict(diagnostic or {})


class TraceParseError(LabError, ValueError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ProtocolEvaluationError(LabError, RuntimeError):
    """next_symbol failed while a scheme was driving it."""
