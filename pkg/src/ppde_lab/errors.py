"""Exception hierarchy shared by all ppde_lab modules."""


class PPDEError(Exception):
    """Base class for every error raised by ppde_lab."""


class OutOfDomain(PPDEError, ValueError):
    pass


class HorizonExceeded(PPDEError, ValueError):
    pass


class IndexMismatch(PPDEError, ValueError):
    pass


class GridMismatch(PPDEError, ValueError):
    pass


class NotInClosure(PPDEError, ValueError):
    pass


class SearchSpaceTooLarge(PPDEError, RuntimeError):
    pass


class NotSmooth(PPDEError, ValueError):
    pass


class UnknownName(PPDEError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown name"


class BadParams(PPDEError, ValueError):
    pass


class ZeroTime(PPDEError, ValueError):
    pass


class DimensionMismatch(PPDEError, ValueError):
    pass


class TimeMismatch(PPDEError, ValueError):
    pass


class CflViolation(PPDEError, ValueError):
    pass


class LiftMismatch(PPDEError, ValueError):
    pass


class StubNotInLattice(PPDEError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "stub not in lattice"


class PreconditionFailed(PPDEError):
    """A named hypothesis did not hold on the sampled lattice.

    ``hypotheses`` lists the failing check names; ``report`` carries whatever
    partial report was assembled before giving up.
    """

    def __init__(self, hypotheses, report=None):
        if isinstance(hypotheses, str):
            hypotheses = (hypotheses,)
        self.hypotheses = tuple(hypotheses)
        self.report = report
        super().__init__("precondition failed: " + ", ".join(self.hypotheses))
