"""Exception hierarchy for the toolsmith package."""


class ToolsmithError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ToolsmithError):
    """Malformed tool fragment markup."""


class ValidationError(ToolsmithError):
    """Structurally parseable input that violates a design invariant."""


class InvalidPlan(ToolsmithError):
    """Action plan with non-finite or inconsistent waypoints."""


class BackendError(ToolsmithError):
    """A simulator backend failed to execute a rollout."""


class MissingTemplate(ToolsmithError):
    """A prompt template file required for the mission is absent."""


class MissingElites(ToolsmithError):
    """Evolution prompt requested without any elite designs."""


class AllAgentsFailed(ToolsmithError):
    """Every agent in a fan-out batch errored."""


class EmptyPopulation(ToolsmithError):
    """No valid design candidates could be produced."""


class TaskNotFound(ToolsmithError):
    """Unknown benchmark task name."""
