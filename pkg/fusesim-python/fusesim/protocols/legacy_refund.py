"""
Deposit with a time-locked refund co-signed in advance.

A asks B to co-sign a Fuse that returns the Deposit to A at round t, and only
then broadcasts the Deposit. The Fuse points at the txid the Deposit was
expected to get; if the network malleates the Deposit, the Fuse is rejected
and A needs B to sign again.
"""

import logging
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from fusesim.adversary import PartyStrategy
from fusesim.chain import Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair, Signature
from fusesim.protocols.base import ProtocolRun
from fusesim.txmodel import (
    OMITTED,
    And,
    CheckSig,
    ErrorKind,
    Or,
    Outpoint,
    Script,
    Sig,
    Transaction,
    TxOutput,
    body_digest,
    leaves,
    pay_to,
    spend,
    txid,
)

logger = logging.getLogger(__name__)


def joint_script(a: str, b: str, extra_branch=None) -> Script:
    joint = And(children=(CheckSig(key_id=a, slot=0), CheckSig(key_id=b, slot=1)))
    if extra_branch is None:
        return Script(node=joint, arity=2)
    arity = max([2] + [leaf.slot + 1 for leaf in leaves(extra_branch)])
    return Script(node=Or(children=(joint, extra_branch)), arity=arity)


class LegacyRefundReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    refund_succeeded: bool
    error_kind: Optional[ErrorKind] = None
    requires_cooperation: bool = False


class LegacyRefundSession(ProtocolRun):
    NAME = "legacy_refund"
    ROLE_NAMES = {Role.A: "depositor", Role.B: "cosigner"}
    ABORT_POINTS = {Role.A: (), Role.B: ("cosign", "resign")}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        return [(keys[Role.A].key_id, d)]

    def __init__(self, ledger: Ledger, keys: Dict[Role, KeyPair], extra_branch=None, **kwargs):
        super().__init__(ledger, keys, **kwargs)
        self.extra_branch = extra_branch
        self.cosignature: Optional[Signature] = None
        self.resign_requested = False
        self.resign_asked = False
        self.resignature: Optional[Signature] = None
        self.deposit_broadcast = False
        self.fuse_tx: Optional[Transaction] = None
        self.fuse_round: Optional[int] = None
        self.first_error: Optional[ErrorKind] = None
        self.gave_up = False

    def start(self):
        script = joint_script(self.key_id(Role.A), self.key_id(Role.B), self.extra_branch)
        funding = self.ledger.funding_for(self.key_id(Role.A))[0]
        unsigned = spend([funding], [TxOutput(value=self.d, script=script)])
        self.deposit_tx = unsigned.with_witness(0, [self.sig(Role.A, unsigned)])
        self.deposit_body = body_digest(self.deposit_tx)
        self.arity = script.arity

        self.predicted_fuse = self._fuse_from(txid(self.deposit_tx))
        super().start()

    def _fuse_from(self, deposit_txid: Digest) -> Transaction:
        return spend(
            [Outpoint(txid=deposit_txid, index=0)],
            [pay_to(self.key_id(Role.A), self.d)],
            lock_time=self.t,
        )

    def _complete(self, fuse: Transaction, cosignature: Signature) -> Transaction:
        items = [self.sig(Role.A, fuse), Sig(signature=cosignature)] + [OMITTED] * (self.arity - 2)
        return fuse.with_witness(0, items)

    @property
    def deposit_outpoint(self) -> Optional[Outpoint]:
        confirmed = self.ledger.confirmed_txid(self.deposit_body)
        return Outpoint(txid=confirmed, index=0) if confirmed is not None else None

    def on_round(self, role: Role):
        if role is Role.A:
            self._depositor_turn()
        else:
            self._cosigner_turn()

    def _depositor_turn(self):
        if not self.deposit_broadcast:
            if self.cosignature is not None:
                self.broadcast(Role.A, self.deposit_tx, "deposit")
                self.deposit_broadcast = True
            return

        outpoint = self.deposit_outpoint
        if self.round < self.t or self.gave_up or not self.unspent(outpoint):
            return
        if self.fuse_tx is not None:
            fuse_body = body_digest(self.fuse_tx)
            if self.ledger.pending(fuse_body):
                return
            error = self.rejected_since(fuse_body, self.fuse_round)
            if error == ErrorKind.UNKNOWN_INPUT.value:
                self.first_error = self.first_error or ErrorKind.UNKNOWN_INPUT
                self.note("A: refund spends the predicted Deposit txid, which never confirmed")
                if self.resignature is None:
                    if self.resign_asked:
                        self.gave_up = True
                        return
                    self.resign_requested = self.resign_asked = True
                    return

        if self.resignature is not None:
            fuse = self._complete(self._fuse_from(outpoint.txid), self.resignature)
        elif self.first_error is None:
            fuse = self._complete(self.predicted_fuse, self.cosignature)
        else:
            self.gave_up = True
            return
        self.fuse_tx = fuse
        self.fuse_round = self.round
        self.broadcast(Role.A, fuse, "fuse")

    def _cosigner_turn(self):
        if self.cosignature is None and not self.skips(Role.B, "cosign"):
            digest = body_digest(self.predicted_fuse)
            self.cosignature = self.off_chain_signature(Role.B, digest)

        if self.resign_requested and self.resignature is None:
            if self.skips(Role.B, "resign"):
                self.resign_requested = False
                return
            fuse = self._fuse_from(self.deposit_outpoint.txid)
            self.resignature = self.keys[Role.B].sign(body_digest(fuse))
            self.requires_cooperation = True
            self.note("B re-signed the refund against the confirmed Deposit txid")

    @property
    def refund_succeeded(self) -> bool:
        outpoint = self.deposit_outpoint
        spender = self.ledger.spender_of(outpoint) if outpoint is not None else None
        return spender is not None and spender.tx.outputs[0].script.owner == self.key_id(Role.A)

    @property
    def terminal_phase(self) -> str:
        if not self.deposit_broadcast:
            return "NotDeposited"
        if self.refund_succeeded:
            return "Refunded"
        return "Stuck" if self.unspent(self.deposit_outpoint) else "Pending"

    def report(self) -> LegacyRefundReport:
        return LegacyRefundReport(
            refund_succeeded=self.refund_succeeded,
            error_kind=self.first_error,
            requires_cooperation=self.requires_cooperation,
        )


def legacy_fuse_flow(
    ledger: Ledger,
    a: KeyPair,
    b: KeyPair,
    d: int,
    t: int,
    extra_branch=None,
    cooperate: bool = True,
    seed: int = 0,
    max_rounds: Optional[int] = None,
) -> LegacyRefundReport:
    """Co-signs the refund against the predicted Deposit txid, then runs to completion."""
    parties = {Role.B: PartyStrategy(role=Role.B, abort_at=None if cooperate else "resign")}
    session = LegacyRefundSession(
        ledger,
        {Role.A: a, Role.B: b},
        extra_branch=extra_branch,
        parties=parties,
        seed=seed,
        d=d,
        t=t,
    )
    session.run(max_rounds)
    return session.report()
