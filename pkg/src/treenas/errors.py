"""Exception types shared across the package."""


class TreenasError(Exception):
    """Base class for all package errors."""


class ConfigSyntaxError(TreenasError):
    """Config text violates the grammar."""

    def __init__(self, message: str, line: int, col: int, expected: str | None = None):
        self.line = line
        self.col = col
        self.expected = expected
        suffix = f" (expected {expected})" if expected else ""
        super().__init__(f"line {line}, col {col}: {message}{suffix}")


class DuplicateKey(TreenasError):
    """The same key appears twice in one dict call."""

    def __init__(self, address: str, key: str):
        self.address = address
        self.key = key
        super().__init__(f"duplicate key {key!r} at {address}")


class BadAddress(TreenasError):
    """A node address does not resolve inside the tree."""


class NotAListPosition(BadAddress):
    """A list edit was requested at an address that is not a list index."""


class ParseError(TreenasError):
    """Mined source code failed to parse."""

    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")


class UnknownModule(TreenasError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown module {name!r}")


class UnresolvedPlaceholder(TreenasError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unresolved placeholder {{{name}}}")


class MalformedReply(TreenasError):
    """An LLM reply did not match the expected structured format."""

    def __init__(self, missing_keys: list[str] | None = None, reason: str = ""):
        self.missing_keys = missing_keys or []
        msg = reason or f"missing keys: {', '.join(self.missing_keys)}"
        super().__init__(msg)


class NoCodeBlock(TreenasError):
    """An LLM reply contained no fenced code block."""


class NoCandidates(TreenasError):
    """Placeholder sampling found nothing to sample from."""


class NoRepeatableHistory(TreenasError):
    """No improving history entry applies to the sampled base."""


class TrialInfeasible(TreenasError):
    """A trial could not produce a usable transformation."""


class EndpointTimeout(TreenasError):
    """LLM endpoint timed out; retryable."""


class TransportError(TreenasError):
    """LLM endpoint transport failure; retryable."""


class EvaluatorUnavailable(TreenasError):
    """The configured evaluator cannot be reached."""


class BudgetExhaustedByFailures(TreenasError):
    """attempt_cap was consumed before the evaluation budget was met."""


class CorruptCheckpoint(TreenasError):
    """A checkpoint file failed to load intact."""
