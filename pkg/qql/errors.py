## Exception hierarchy shared by every toolkit module.

from typing import Optional, Sequence


## Root of all toolkit errors
class QQLError(Exception):
    pass


## Argument outside the mathematical domain of an operation
class DomainError(QQLError, ValueError):
    pass


## Array or vector dimensions do not match
class ShapeError(DomainError):
    pass


## A documented precondition was violated
class PreconditionError(DomainError):
    pass


## Sample has zero spread, so a scale cannot be estimated
class DegenerateSampleError(QQLError):
    pass


## An iterative solver ran out of iterations
class ConvergenceError(QQLError):

    def __init__(self, message: str, last_iterate: Optional[float] = None):
        super().__init__(message)
        self.last_iterate = last_iterate


## Optimizer received a gradient with NaN or infinite entries
class NonFiniteGradientError(QQLError):

    def __init__(self, name: str, bad_indices: Sequence[int]):
        shown = list(bad_indices[:10])
        super().__init__(f"Non-finite gradient for '{name}' at {len(bad_indices)} entries (first: {shown})")
        self.name = name
        self.bad_indices = list(bad_indices)


## A training loss or parameter became non-finite
class TrainingDivergenceError(QQLError):

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


## Operation is not available for this environment or configuration
class UnsupportedError(QQLError):
    pass


## A dataset file line could not be parsed
class DatasetParseError(QQLError):

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


## A stored document does not match its schema or its companion file
class SchemaError(QQLError):
    pass
