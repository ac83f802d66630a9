"""Exception types shared across the package."""


class ScaleMismatch(ValueError):
    """Two low-precision tensors with different scale factors were combined."""


class CodeOverflow(OverflowError):
    """A summed code does not fit in the widened bit width."""


class DimMismatch(ValueError):
    """Worker vectors disagree on dimension."""


class ParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDataset(ValueError):
    """A dataset file contained no rows."""


class ConfigInvalid(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class WorkerPanic(RuntimeError):
    def __init__(self, worker_id, cause):
        super().__init__(f"worker {worker_id} failed: {cause!r}")
        self.worker_id = worker_id
        self.cause = cause


class ConsistencyError(RuntimeError):
    """Worker replicas diverged after a synchronous step."""


class NotReached(LookupError):
    """A loss threshold was never reached in a metrics stream."""


class IndexOutOfRange(IndexError):
    """A sample index fell outside ``[0, n)``."""


class DatasetUnavailable(RuntimeError):
    """A configured dataset could not be read or was malformed."""
