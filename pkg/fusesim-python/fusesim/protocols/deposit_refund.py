"""
Deposit with a secret-gated Fuse.

Instead of a time-locked refund co-signed against a predicted txid, B first
commits to a random r with a timed commitment (B committer, A recipient).
A's Deposit can then be spent by A alone once r is public. A builds and signs
the Fuse only after the Deposit confirmed, so malleating the Deposit changes
nothing. If B never opens the commitment, A collects B's d through the
commitment's own Fuse instead.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from fusesim import crypto
from fusesim.adversary import PartyStrategy
from fusesim.chain import Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair
from fusesim.protocols.base import ProtocolRun
from fusesim.protocols.cs import CsPhase, CsSession, cs_commit, cs_open
from fusesim.txmodel import (
    OMITTED,
    And,
    CheckHash,
    CheckSig,
    Or,
    Outpoint,
    Script,
    Secret,
    Transaction,
    TxOutput,
    body_digest,
    leaves,
    pay_to,
    spend,
)

logger = logging.getLogger(__name__)


class DepositPhase(Enum):
    """Enum for the depositor's progress."""

    COMMIT_R = "CommitR"
    DEPOSITED = "Deposited"
    REFUNDED = "Refunded"
    ABORTED = "Aborted"

    def __str__(self):
        return self.value


def joint_branch(a: str, b: str):
    """Default stand-in for the enclosing contract's own spending path."""
    return And(children=(CheckSig(key_id=a, slot=0), CheckSig(key_id=b, slot=1)))


def deposit_script(a: str, h_r: Digest, extra_branch) -> Script:
    by_secret = And(children=(CheckSig(key_id=a, slot=0), CheckHash(expected=h_r, slot=1)))
    arity = max([2] + [leaf.slot + 1 for leaf in leaves(extra_branch)])
    return Script(node=Or(children=(by_secret, extra_branch)), arity=arity)


class DepositRefundSession(ProtocolRun):
    NAME = "deposit_refund"
    ROLE_NAMES = {Role.A: "depositor", Role.B: "committer"}
    ABORT_POINTS = {Role.A: ("deposit",), Role.B: ("cs_fuse_sig", "cs_open")}
    WITHHOLD_STEP = {Role.A: None, Role.B: "cs_open"}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        return [(keys[Role.A].key_id, d), (keys[Role.B].key_id, d)]

    def __init__(self, ledger: Ledger, keys: Dict[Role, KeyPair], extra_branch=None, **kwargs):
        super().__init__(ledger, keys, **kwargs)
        self.extra_branch = extra_branch or joint_branch(self.key_id(Role.A), self.key_id(Role.B))
        self.phase = DepositPhase.COMMIT_R
        self.cs: Optional[CsSession] = None
        self.deposit_tx: Optional[Transaction] = None
        self.deposit_body: Optional[Digest] = None
        self.fuse_tx: Optional[Transaction] = None

    def start(self):
        r = crypto.derive_secret(self.seed, "deposit_refund/r")
        self.cs = cs_commit(
            self.ledger,
            self.keys[Role.B],
            self.keys[Role.A],
            self.d,
            self.t,
            r,
            self.ledger.funding_for(self.key_id(Role.B))[0],
            label="cs",
            roles=(Role.B, Role.A),
        )

    # Deposit and Fuse

    def build_deposit(self) -> Transaction:
        script = deposit_script(self.key_id(Role.A), self.cs.h, self.extra_branch)
        funding = self.ledger.funding_for(self.key_id(Role.A))[0]
        unsigned = spend([funding], [TxOutput(value=self.d, script=script)])
        return unsigned.with_witness(0, [self.sig(Role.A, unsigned)])

    @property
    def deposit_outpoint(self) -> Optional[Outpoint]:
        if self.deposit_body is None:
            return None
        confirmed = self.ledger.confirmed_txid(self.deposit_body)
        return Outpoint(txid=confirmed, index=0) if confirmed is not None else None

    def build_fuse(self, r: bytes) -> Transaction:
        """Spends the confirmed Deposit back to A: witness (sig_A, r)."""
        outpoint = self.deposit_outpoint
        arity = self.ledger.lookup(outpoint).script.arity
        unsigned = spend([outpoint], [pay_to(self.key_id(Role.A), self.d)])
        items = [self.sig(Role.A, unsigned), Secret(value=r)] + [OMITTED] * (arity - 2)
        return unsigned.with_witness(0, items)

    # agents

    def on_round(self, role: Role):
        if self.cs is None:
            return
        if role is Role.A:
            self._depositor_turn()
        else:
            self._committer_turn()

    def _depositor_turn(self):
        cs = self.cs
        cs.recipient_turn()

        if self.phase is DepositPhase.COMMIT_R:
            if cs.phase is CsPhase.FUSE_SIGNED and not self.skips(Role.A, "deposit"):
                self.deposit_tx = self.build_deposit()
                self.deposit_body = self.broadcast(Role.A, self.deposit_tx, "deposit")
                self.phase = DepositPhase.DEPOSITED
            elif cs.phase is CsPhase.ABORTED:
                self.phase = DepositPhase.ABORTED
                self.note(f"commitment to r aborted before the deposit: {cs.abort_reason}")
            return

        if self.phase is not DepositPhase.DEPOSITED or not self.unspent(self.deposit_outpoint):
            return
        r = cs.revealed_secret()
        if r is None:
            return
        if self.fuse_tx is None or not self.ledger.pending(body_digest(self.fuse_tx)):
            self.fuse_tx = self.build_fuse(r)
            self.broadcast(Role.A, self.fuse_tx, "fuse")

    def _committer_turn(self):
        cs = self.cs
        cs.committer_turn(
            skip_signature=self.skips(Role.B, "cs_fuse_sig") if cs.commit_outpoint else False,
            signer=lambda digest: self.off_chain_signature(Role.B, digest),
        )
        if cs.can_open and self.round >= self.t - 3 * self.max_bb:
            if not self.skips(Role.B, "cs_open"):
                cs_open(self.ledger, cs)

    @property
    def terminal_phase(self) -> str:
        phase = self.phase
        if phase is DepositPhase.DEPOSITED and self.deposit_outpoint is not None:
            if self.ledger.spender_of(self.deposit_outpoint) is not None:
                phase = DepositPhase.REFUNDED
        cs_phase = self.cs.phase if self.cs is not None else CsPhase.INIT
        return f"deposit={phase},cs={cs_phase}"


def deposit_refund(
    ledger: Ledger,
    a: KeyPair,
    b: KeyPair,
    d: int,
    t: int,
    extra_branch=None,
    parties: Optional[Dict[Role, PartyStrategy]] = None,
    seed: int = 0,
    max_rounds: Optional[int] = None,
) -> DepositRefundSession:
    """Runs the commitment to r, the Deposit and the Fuse to completion."""
    session = DepositRefundSession(
        ledger,
        {Role.A: a, Role.B: b},
        extra_branch=extra_branch,
        parties=parties,
        seed=seed,
        d=d,
        t=t,
    )
    session.run(max_rounds)
    return session
