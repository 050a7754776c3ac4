"""Exception hierarchy shared by the analytical, simulation and CLI layers."""


class EnergyncError(Exception):
    """Base class for every error raised by this package."""


class AnalysisError(EnergyncError):
    """An analytical operation has no finite answer (unstable configuration)."""


class DivergentDeconvolution(AnalysisError):
    """The supremum in a (min,+) deconvolution is infinite."""


class UnboundedDistance(AnalysisError):
    """The horizontal distance between two functions is infinite."""


class NonInvertiblePower(AnalysisError):
    """A rate or power value falls outside the range of a power-rate function."""


class ClassViolation(EnergyncError, ValueError):
    """A function does not belong to the class its role requires."""


class InvalidSpec(EnergyncError):
    """A trace generator specification has invalid or missing parameters."""


class StepMismatch(EnergyncError):
    """Traces handed to a node do not share the same step and length."""


class EmptySamples(EnergyncError):
    """An empirical estimate was requested from zero samples."""


class ModelMismatch(EnergyncError):
    """A generator does not satisfy the envelope model it was declared with."""


class ScenarioError(EnergyncError):
    """Base class for scenario-file problems."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if field:
            where.append(field)
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ParseError(ScenarioError):
    """The scenario document is syntactically malformed."""


class SemanticError(ScenarioError):
    """The scenario parses but references are unresolved or classes are violated."""
