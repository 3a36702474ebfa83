"""Exception types shared across the package.

The CLI maps these onto exit codes, so new error conditions should reuse
one of the classes below rather than raising bare ValueError/RuntimeError.
"""


class ValidationError(ValueError):
    """Bad input: shape mismatch, violated invariant, missing config key."""


class DegenerateRotationError(ValidationError):
    """A 6D rotation vector whose columns are zero or parallel."""


class GrammarError(ValueError):
    """A motion token span that does not parse.

    Carries the token offset of the first offending position.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (token offset {offset})")
        self.offset = offset


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured; carries the failing step."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ClientError(RuntimeError):
    """An external client (LLM / text-to-motion) failed after its retry budget."""


class JudgeError(RuntimeError):
    """The LLM judge returned unusable output after the single re-ask."""
