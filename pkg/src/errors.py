class MfuqError(Exception):
    """
    Base class for all errors raised by the toolkit.
    """


class StructuralError(MfuqError):
    """
    A multi-index set is malformed: mixed index lengths, or closedness is required but missing.
    """


class DomainError(MfuqError):
    """
    A point lies outside the parameter box, or the box itself is invalid.
    """


class GridTooLargeError(MfuqError):
    """
    A tensor or midpoint grid would exceed the configured point cap.
    """


class ModelEvaluationError(MfuqError):
    """
    A single model evaluation failed.

    :param message: Human readable reason.
    :type message: str
    :param alpha: Fidelity multi-index of the failed request.
    :type alpha: tuple[int, ...]
    :param y: Parameter point of the failed request.
    :type y: tuple[float, ...]
    :param diagnostics: Captured solver output (exit code, stderr, reply text).
    :type diagnostics: dict
    """

    def __init__(self, message: str, alpha=None, y=None, diagnostics: dict | None = None):
        super().__init__(message)
        self.alpha = tuple(alpha) if alpha is not None else None
        self.y = tuple(y) if y is not None else None
        self.diagnostics = diagnostics or {}

    def __str__(self):
        base = super().__str__()
        if self.alpha is None:
            return base
        return f"{base} (alpha={self.alpha}, y={self.y})"


class BatchEvaluationError(MfuqError):
    """
    Some requests of a batch failed; the others completed and are cached.

    :param failures: Failed request positions mapped to their exceptions.
    :type failures: dict[int, Exception]
    :param records: Results aligned with the requests, ``None`` where the request failed.
    :type records: list
    """

    def __init__(self, failures: dict, records: list):
        self.failures = failures
        self.records = records
        first = next(iter(failures.values()))
        super().__init__(f"{len(failures)} of {len(records)} evaluations failed; first: {first}")


class ConfigError(MfuqError):
    """
    The run configuration could not be read or validated.
    """


class SchemaMismatchError(MfuqError):
    """
    A summary file has an unexpected schema version or layout.
    """


class OptimizationError(MfuqError):
    """
    The particle swarm found no finite objective value.
    """
