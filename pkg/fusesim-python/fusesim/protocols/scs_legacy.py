"""
Simultaneous timed commitment, original construction.

Both parties fund one two-input Commit. Its outputs are opened with s_A and
s_B; if a party does not open by t, the other broadcasts a time-locked Fuse
that both signed before Commit was broadcast. Those Fuses reference the txid
Commit was expected to have, so a malleated Commit leaves them spending an
outpoint that never exists.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from fusesim import crypto
from fusesim.adversary import PartyStrategy
from fusesim.chain import Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair, Signature
from fusesim.protocols.base import Outcome, ProtocolRun
from fusesim.txmodel import (
    OMITTED,
    And,
    CheckHash,
    CheckSig,
    ErrorKind,
    Or,
    Outpoint,
    Script,
    Secret,
    Sig,
    Transaction,
    TxOutput,
    body_digest,
    pay_to,
    spend,
    txid,
)

logger = logging.getLogger(__name__)

SLOTS = {Role.A: 0, Role.B: 1}


def min_t(max_bb: int) -> int:
    """t must exceed this so the fallback never starts before an honest Commit can confirm."""
    return 4 * max_bb


class ScsPhase(Enum):
    """Enum for one party's progress in the legacy construction."""

    SETUP = "Setup"
    OPEN = "Open"
    CLAIM = "Claim"
    DONE = "Done"
    REDEEMED = "Redeemed"
    STUCK = "Stuck"

    def __str__(self):
        return self.value


def output_script(owner: str, peer: str, owner_slot: int, peer_slot: int, h: Digest) -> Script:
    """(ver_owner and H(x) = h) or (ver_owner and ver_peer) over (sig_A, sig_B, x)."""
    owner_sig = CheckSig(key_id=owner, slot=owner_slot)
    return Script(
        node=Or(
            children=(
                And(children=(owner_sig, CheckHash(expected=h, slot=2))),
                And(children=(owner_sig, CheckSig(key_id=peer, slot=peer_slot))),
            )
        ),
        arity=3,
    )


class ScsLegacySession(ProtocolRun):
    NAME = "scs_legacy"
    ABORT_POINTS = {
        Role.A: ("fuse_sig", "commit_sig", "open"),
        Role.B: ("fuse_sig", "commit_broadcast", "open"),
    }
    WITHHOLD_STEP = {Role.A: "open", Role.B: "open"}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        return [(keys[Role.A].key_id, d), (keys[Role.B].key_id, d)]

    @classmethod
    def min_t(cls, max_bb: int) -> int:
        return min_t(max_bb)

    def start(self):
        self.secrets = {role: crypto.derive_secret(self.seed, f"scs/s_{role}") for role in Role}
        self.funding = {role: self.ledger.funding_for(self.key_id(role))[0] for role in Role}

        outputs = [
            TxOutput(
                value=self.d,
                script=output_script(
                    self.key_id(role),
                    self.key_id(role.peer),
                    SLOTS[role],
                    SLOTS[role.peer],
                    crypto.hash(self.secrets[role]),
                ),
            )
            for role in Role
        ]
        self.commit_unsigned = spend([self.funding[Role.A], self.funding[Role.B]], outputs)
        self.commit_body = body_digest(self.commit_unsigned)

        # Signatures are deterministic, so the signed Commit and its txid are
        # fixed before anyone broadcasts. This is the id the Fuses commit to.
        self.predicted_txid = txid(self._signed_commit(self.sig(Role.A, self.commit_unsigned)))

        # fuses[X] spends X's output and pays X's peer
        self.fuses = {
            role: spend(
                [Outpoint(txid=self.predicted_txid, index=SLOTS[role])],
                [pay_to(self.key_id(role.peer), self.d)],
                lock_time=self.t,
            )
            for role in Role
        }
        # fuse_signatures[X]: X's signature on Fuse^X, held by X's peer
        self.fuse_signatures: Dict[Role, Optional[Signature]] = {role: None for role in Role}
        self.commit_signature: Optional[Sig] = None
        self.commit_broadcast = False
        self.phase = {role: ScsPhase.SETUP for role in Role}
        self.open_txs: Dict[Role, Optional[Transaction]] = {role: None for role in Role}
        self.claim_round: Dict[Role, Optional[int]] = {role: None for role in Role}
        self.redeem_sent = {role: False for role in Role}
        super().start()

    def _signed_commit(self, sig_a: Sig) -> Transaction:
        tx = self.commit_unsigned.with_witness(0, [sig_a])
        return tx.with_witness(1, [self.sig(Role.B, self.commit_unsigned)])

    def _fuse_signature_valid(self, role: Role) -> bool:
        signature = self.fuse_signatures[role]
        public_part = crypto.public_part(self.key_id(role))
        return (
            signature is not None
            and public_part is not None
            and crypto.verify(public_part, body_digest(self.fuses[role]), signature)
        )

    @property
    def commit_txid(self) -> Optional[Digest]:
        return self.ledger.confirmed_txid(self.commit_body)

    def _own_output(self, role: Role) -> Optional[Outpoint]:
        confirmed = self.commit_txid
        return Outpoint(txid=confirmed, index=SLOTS[role]) if confirmed is not None else None

    def on_round(self, role: Role):
        peer = role.peer

        # setup: Fuse signatures first, then the Commit signatures
        if self.fuse_signatures[role] is None and not self.skips(role, "fuse_sig"):
            digest = body_digest(self.fuses[role])
            self.fuse_signatures[role] = self.off_chain_signature(role, digest)

        if role is Role.A and self.commit_signature is None and self._fuse_signature_valid(peer):
            if not self.skips(Role.A, "commit_sig"):
                self.commit_signature = self.sig(Role.A, self.commit_unsigned)

        if (
            role is Role.B
            and not self.commit_broadcast
            and self.commit_signature is not None
            and self._fuse_signature_valid(peer)
            and not self.skips(Role.B, "commit_broadcast")
        ):
            self.broadcast(Role.B, self._signed_commit(self.commit_signature), "commit")
            self.commit_broadcast = True

        if self.commit_txid is None:
            self._fallback(role)
        else:
            self._after_commit(role)

    def _fallback(self, role: Role):
        """Nothing confirmed by t - 3*max_bb: take the own funding back."""
        if self.round < self.t - 3 * self.max_bb or self.redeem_sent[role]:
            return
        funding = self.funding[role]
        if not self.unspent(funding):
            return
        unsigned = spend([funding], [pay_to(self.key_id(role), self.d)])
        self.broadcast(role, unsigned.with_witness(0, [self.sig(role, unsigned)]), f"redeem_{role}")
        self.redeem_sent[role] = True
        self.phase[role] = ScsPhase.REDEEMED

    def _after_commit(self, role: Role):
        peer = role.peer
        if self.phase[role] in (ScsPhase.SETUP, ScsPhase.REDEEMED):
            self.phase[role] = ScsPhase.OPEN

        own = self._own_output(role)
        if self.open_txs[role] is None and self.unspent(own) and not self.skips(role, "open"):
            unsigned = spend([own], [pay_to(self.key_id(role), self.d)])
            items = [OMITTED, OMITTED, Secret(value=self.secrets[role])]
            items[SLOTS[role]] = self.sig(role, unsigned)
            self.open_txs[role] = unsigned.with_witness(0, items)
            self.broadcast(role, self.open_txs[role], f"open_{role}")

        if self.round < self.t or self.phase[role] in (ScsPhase.DONE, ScsPhase.STUCK):
            return
        self.phase[role] = ScsPhase.CLAIM

        peer_output = self._own_output(peer)
        if not self.unspent(peer_output):
            self.phase[role] = ScsPhase.DONE
            return

        fuse = self.fuses[peer]
        fuse_body = body_digest(fuse)
        if self.claim_round[role] is not None:
            error = self.rejected_since(fuse_body, self.claim_round[role])
            if error == ErrorKind.UNKNOWN_INPUT.value:
                self.phase[role] = ScsPhase.STUCK
                self.note(f"{role.label}: Fuse_{peer} spends an outpoint that never confirmed")
                return
            if error is None or self.ledger.pending(fuse_body):
                return

        if not self._fuse_signature_valid(peer):
            return
        items = [OMITTED, OMITTED, OMITTED]
        items[SLOTS[peer]] = Sig(signature=self.fuse_signatures[peer])
        items[SLOTS[role]] = self.sig(role, fuse)
        self.broadcast(role, fuse.with_witness(0, items), f"fuse_{peer}")
        self.claim_round[role] = self.round

    @property
    def terminal_phase(self) -> str:
        return ",".join(f"{role}={self.phase[role]}" for role in Role)


def scs_legacy_run(
    ledger: Ledger,
    keys: Dict[Role, KeyPair],
    parties: Optional[Dict[Role, PartyStrategy]] = None,
    seed: int = 0,
    max_rounds: Optional[int] = None,
) -> Outcome:
    return ScsLegacySession(ledger, keys, parties=parties, seed=seed).run(max_rounds)
