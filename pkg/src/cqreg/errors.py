"""Exception hierarchy.

``UserError`` subclasses describe problems with the input; ``SolverError``
subclasses are internal assertions that should never fire on valid data.
"""


class CqregError(Exception):
    pass


class UserError(CqregError, ValueError):
    pass


class SolverError(CqregError, RuntimeError):
    pass


class MalformedRow(UserError):
    pass


class SingularDesign(UserError):
    def __init__(self, msg, column=None):
        super().__init__(msg)
        self.column = column


class TauOutOfRange(UserError):
    pass


class IndexOutOfRange(UserError, IndexError):
    pass


class BeyondSupport(UserError):
    pass


class TooLarge(UserError):
    pass


class Infeasible(UserError):
    pass


class TooFewReplicates(UserError):
    pass


class UnboundedObjective(CqregError):
    """No event remains above any feasible hyperplane."""


class CycleDetected(SolverError):
    pass


class RankDeficientVertex(SolverError):
    pass


class NonPositiveBreakpoint(SolverError):
    pass


class WeightOutOfRange(SolverError):
    pass


class ResidualCheckFailed(SolverError):
    pass
