"""Exception taxonomy shared across the package.

The CLI maps ConfigurationError to exit code 2 and NumericError to exit
code 3; everything else is a plain bug.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, layout mismatch, or malformed inputs."""


class NumericError(RuntimeError):
    """A computation produced non-finite values.

    Carries enough context (term name, step index) to locate the failure.
    """

    def __init__(self, message: str, *, term: str | None = None, step: int | None = None):
        detail = message
        if term is not None:
            detail += f" [term={term}]"
        if step is not None:
            detail += f" [step={step}]"
        super().__init__(detail)
        self.term = term
        self.step = step


class UsageError(RuntimeError):
    """An API contract was violated by the caller (e.g. stepping a finished episode)."""
