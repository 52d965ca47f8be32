"""Exception types shared across the package."""


class OrsetError(Exception):
    """Base class for all orsetdb errors."""


class SchemaError(OrsetError):
    """Relation or sub-relation violates a structural invariant."""


class AssignmentError(OrsetError):
    """World assignment is incomplete or out of range."""


class NotInSubRelationError(OrsetError):
    """World assignment uses choices not retained by the sub-relation."""


class TupleAnnihilatedError(OrsetError):
    """A resolution step would empty every row of a tuple."""

    def __init__(self, tuple_idx: int, detail: str = ""):
        self.tuple_idx = tuple_idx
        msg = f"tuple {tuple_idx} annihilated"
        super().__init__(msg + (f": {detail}" if detail else ""))


class OracleTooLargeError(OrsetError):
    """World count exceeds the exact oracle's enumeration limit."""


class FullyInconsistentError(OrsetError):
    """No possible world satisfies the constraint set (Pc = 0)."""


class ArityBoundError(OrsetError):
    """Tuple-check cross-product exceeds the enumerability bound."""


class InfeasibleClassError(OrsetError):
    """No drop subset can make a NEED-FIX class satisfy its constraint."""


class ConfigError(OrsetError):
    """Invalid generator or sampler configuration."""
