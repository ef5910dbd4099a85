class ConsistentVoteError(Exception):
    """Base class for errors raised by this package."""


class IngestionError(ConsistentVoteError, ValueError):
    pass


class ConfigurationError(ConsistentVoteError, ValueError):
    pass


class TrainingDivergedError(ConsistentVoteError, ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss

    def __reduce__(self):
        return type(self), (self.epoch, self.batch, self.loss)


class EnsembleTrainingError(ConsistentVoteError):
    """Training failed for one member of an ensemble; ``index`` names the state."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"training failed for state index {index}: {cause}")
        self.index = index
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.index, self.cause)


class PersistenceError(ConsistentVoteError):
    pass


class UndefinedCorrelationError(ConsistentVoteError, ValueError):
    pass
