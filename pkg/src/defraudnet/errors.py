"""Exception types shared across the package."""


class DeFraudNetError(Exception):
    pass


class ShapeError(DeFraudNetError, ValueError):
    pass


class StateError(DeFraudNetError, RuntimeError):
    pass


class ConfigError(DeFraudNetError, ValueError):
    pass


class IngestionError(DeFraudNetError, OSError):
    """Raised when an image file cannot be decoded."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"cannot ingest {self.path}: {reason}")


class FormatError(DeFraudNetError, ValueError):
    pass


class EvaluationError(DeFraudNetError, ValueError):
    pass


class TrainingDiverged(DeFraudNetError, RuntimeError):
    pass
