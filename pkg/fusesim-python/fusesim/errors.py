from typing import Iterable, List


class FuseSimError(Exception):
    """Base class for fusesim errors."""


class ConfigInvalid(FuseSimError):
    """Scenario configuration rejected, one message per offending field."""

    def __init__(self, errors: Iterable[str]):
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors) or "invalid configuration")


class EmptyPadding(FuseSimError):
    pass


class SlotOutOfRange(FuseSimError):
    """A script leaf consults a witness slot that does not exist."""

    def __init__(self, slot: int, available: int):
        self.slot = slot
        self.available = available
        super().__init__(f"slot {slot} out of range for {available} witness items")


class EmptyAllocation(FuseSimError):
    pass


class SubstitutionRejected(FuseSimError):
    """The network tried to substitute a transaction with a different body."""


class ExhaustiveBoundExceeded(FuseSimError):
    def __init__(self, max_bb: int):
        self.max_bb = max_bb
        super().__init__(f"exhaustive enumeration supports max_bb <= 2, got {max_bb}")


class NotConfirmed(FuseSimError):
    pass


class NotASecret(FuseSimError):
    pass


class ProtocolError(FuseSimError):
    """A protocol operation was called outside of its precondition."""
