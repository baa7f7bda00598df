"""Shared exception types."""


class TriageForgeError(Exception):
    """Base class for all package errors."""


class PreconditionError(TriageForgeError):
    """A caller violated an operation's precondition."""


class GatewayUnavailableError(TriageForgeError):
    """All transport attempts against the chat backend failed."""

    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = attempts


class ScriptExhaustedError(TriageForgeError):
    """Scripted backend had no entry matching the request."""


class EmptyCompletionError(TriageForgeError):
    """Backend returned an empty assistant message."""


class UnboundSlotError(TriageForgeError):
    """A prompt template slot had no binding."""

    def __init__(self, slot):
        super().__init__(f"unbound template slot: {slot!r}")
        self.slot = slot


class CorruptDatasetError(TriageForgeError):
    """More than half of an input file failed to parse."""


class ClassificationFailedError(TriageForgeError):
    """Judge output could not be mapped to a required category."""


class EmptyDatasetError(TriageForgeError):
    """Balancing was asked to run over no cases at all."""


class DuplicateConditionError(TriageForgeError):
    """Guideline corpus contains two documents for the same condition."""


class SummaryInvalidError(TriageForgeError):
    """Case summary could not be parsed into its required sections."""


class AssessmentInvalidError(TriageForgeError):
    """Final assessment output missing required fields after reprompt."""


class AggregationError(TriageForgeError):
    """Review set references unknown encounters or is otherwise unusable."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)
