class JafError(Exception):
    """Base class for every error raised by the judge agent forest."""


class ParseError(JafError, ValueError):
    """A file could not be decoded as JSON."""


class SchemaError(JafError, ValueError):
    """A cohort violates its own schema or the cohort invariants."""


class ConfigError(JafError, ValueError):
    """A run configuration or relation specification is invalid."""


class DimensionError(JafError, ValueError):
    """Feature dimensions do not match what a scorer or forest expects."""


class DegenerateInput(JafError, ValueError):
    """All sample points are identical, so no scorer can tell them apart."""


class TooFewPoints(JafError, ValueError):
    pass


class NoInformativeSplit(JafError, ValueError):
    """No cut separates the scores by more than the configured minimum gain."""


class EmptyReference(JafError, ValueError):
    pass


class ReferenceIsWholeRegion(JafError, ValueError):
    pass


class UnknownField(JafError, ValueError):
    pass


class LengthMismatch(JafError, ValueError):
    pass


class EmptyProfile(JafError, ValueError):
    pass


class AgentError(JafError):
    """
    A judge or primary agent failed: transport error, non-2xx reply or an
    unparseable answer. Carries the engine context when it is known.
    """

    def __init__(
            self,
            message: str,
            *,
            instance_id: str | None = None,
            round: int | None = None,
            run: int | None = None,
    ):
        super().__init__(message)
        self.message = message
        self.instance_id = instance_id
        self.round = round
        self.run = run

    def with_context(
            self,
            *,
            instance_id: str | None = None,
            round: int | None = None,
            run: int | None = None,
    ) -> "AgentError":
        return type(self)(
            self.message,
            instance_id=instance_id if instance_id is not None else self.instance_id,
            round=round if round is not None else self.round,
            run=run if run is not None else self.run,
        )

    def __str__(self) -> str:
        context = []
        if self.instance_id is not None:
            context.append(f"instance={self.instance_id}")
        if self.round is not None:
            context.append(f"round={self.round}")
        if self.run is not None:
            context.append(f"run={self.run}")
        if not context:
            return self.message
        return f"{self.message} ({', '.join(context)})"


class VerdictParseError(AgentError):
    """The judge reply does not follow the VERDICT/CRITIQUE grammar."""
