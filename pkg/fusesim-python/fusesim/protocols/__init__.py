from enum import Enum
from typing import Dict, Type

from fusesim.protocols.base import ConfirmedTx, Outcome, ProtocolRun
from fusesim.protocols.cs import (
    CsPhase,
    CsRun,
    CsSession,
    cs_commit,
    cs_fuse,
    cs_open,
    extract_secret,
)
from fusesim.protocols.deposit_refund import DepositRefundSession, deposit_refund
from fusesim.protocols.legacy_refund import (
    LegacyRefundReport,
    LegacyRefundSession,
    legacy_fuse_flow,
)
from fusesim.protocols.newscs import NewScsPhase, NewScsSession, newscs_run
from fusesim.protocols.scs_legacy import ScsLegacySession, scs_legacy_run


class ProtocolName(Enum):
    """Enum for the protocols a scenario can run."""

    CS = "cs"
    DEPOSIT_REFUND = "deposit_refund"
    SCS_LEGACY = "scs_legacy"
    NEWSCS = "newscs"
    LEGACY_REFUND = "legacy_refund"

    def __str__(self):
        return self.value

    @property
    def legacy(self) -> bool:
        """Constructions expected to break under malleation."""
        return self in (ProtocolName.SCS_LEGACY, ProtocolName.LEGACY_REFUND)


PROTOCOLS: Dict[ProtocolName, Type[ProtocolRun]] = {
    ProtocolName.CS: CsRun,
    ProtocolName.DEPOSIT_REFUND: DepositRefundSession,
    ProtocolName.SCS_LEGACY: ScsLegacySession,
    ProtocolName.NEWSCS: NewScsSession,
    ProtocolName.LEGACY_REFUND: LegacyRefundSession,
}


def protocol_class(name) -> Type[ProtocolRun]:
    return PROTOCOLS[ProtocolName(str(name))]


__all__ = [
    "ConfirmedTx",
    "CsPhase",
    "CsRun",
    "CsSession",
    "DepositRefundSession",
    "LegacyRefundReport",
    "LegacyRefundSession",
    "NewScsPhase",
    "NewScsSession",
    "Outcome",
    "PROTOCOLS",
    "ProtocolName",
    "ProtocolRun",
    "ScsLegacySession",
    "cs_commit",
    "cs_fuse",
    "cs_open",
    "deposit_refund",
    "extract_secret",
    "legacy_fuse_flow",
    "newscs_run",
    "protocol_class",
    "scs_legacy_run",
]
