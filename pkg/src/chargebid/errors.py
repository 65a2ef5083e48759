"""Exception types shared across the engine."""


class ChargebidError(Exception):
    """Base class for all engine errors."""


class ParseError(ChargebidError):
    """Instance document is not well-formed."""


class SchemaVersionError(ParseError):
    """Instance document declares an unsupported schema version."""


class ViolatedInvariant(ChargebidError):
    """A validation invariant failed.

    Carries the name of the failing check and a human-readable detail.
    """

    def __init__(self, name, detail=""):
        self.name = name
        self.detail = detail
        super().__init__(f"{name}: {detail}" if detail else name)


class DegenerateRange(ChargebidError):
    """Breakpoint range has hi <= lo."""


class PriceOutsideGrid(ChargebidError):
    """A price falls outside the bid grid span [y_1, y_J]."""


class MonotonicityViolation(ChargebidError):
    """Bid step volumes are not monotone non-increasing.

    Carries the index of the step that rose above its predecessor.
    """

    def __init__(self, index, detail=""):
        self.index = index
        msg = f"step {index} rises above step {index - 1}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class InfeasibleReplay(ChargebidError):
    """Fixed-purchase replay admits no feasible device schedule."""


class NoMatchingScenario(ChargebidError):
    """Realized prices cannot be matched to a conditioning scenario."""


class NumericalBreakdown(ChargebidError):
    """LP pivoting or factorization collapsed beyond recovery."""


class MasterInfeasible(ChargebidError):
    """The restricted master problem is infeasible (inconsistent instance)."""


class SpNumericalBreakdown(ChargebidError):
    """A recourse sub-problem failed to solve; carries the scenario id."""

    def __init__(self, scenario, detail=""):
        self.scenario = scenario
        super().__init__(f"scenario {scenario}: {detail}" if detail
                         else f"scenario {scenario}")


class GroupUnsolved(ChargebidError):
    """A cut group references a sub-problem that is not solved to optimality."""


class UnboundedProblem(ChargebidError):
    """LP/MILP is unbounded where a finite optimum was required."""
