"""Exception hierarchy shared across the pipeline."""


class ScbuError(Exception):
    """Base class for all package errors."""


class DataError(ScbuError):
    """Input data could not be accepted (exit code 2 at the CLI)."""


class SchemaError(DataError):
    def __init__(self, message, frame_index=None, line=None):
        self.frame_index = frame_index
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if frame_index is not None:
            where.append(f"frame {frame_index}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ManifestError(DataError):
    pass


class NoChildError(DataError):
    pass


class TooShortError(DataError):
    pass


class TemplateError(DataError):
    pass


class InsufficientClass(DataError):
    pass


class ContextOverflow(ScbuError):
    def __init__(self, required, available):
        self.required = required
        self.available = available
        super().__init__(
            f"rendered prompt needs ~{required} tokens but only {available} are available"
        )


class UnparseableVerdict(ScbuError):
    pass


class BackendError(ScbuError):
    """Backend failed after retries, or failed in a non-retryable way."""


class TransientBackendError(BackendError):
    """Failure worth retrying (transport error, 5xx, 429)."""


class ExemplarPolicyError(BackendError):
    pass


class DescriberUnavailable(ScbuError):
    pass


class NoQuorum(ScbuError):
    pass


class TieError(ScbuError):
    pass
