"""
Simultaneous timed commitment without predicted txids.

Each party X first commits to an auxiliary secret r_X with its own timed
commitment CS^X (X committer, peer recipient). Then both co-fund one Commit
whose output X can be spent by X with s_X, or by the peer with r_X. Nothing
that spends Commit is signed before Commit confirms:

  CommitR   both CS^X commitments run until the Fuse signatures are exchanged
  CommitS   A hands B her Commit signature, B signs and broadcasts
  Open      each X reveals s_X with Open^X, then opens CS^X
  Punish    from t on, a peer that never opened loses its Commit output via
            Fuse^Y (needs r_Y) or its CS^Y deposit via CS^Y's Fuse

If Commit is not confirmed by t - 3*max_bb, a party that already released its
Commit signature first takes its Commit funding back, then opens CS^X.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from fusesim import crypto
from fusesim.adversary import PartyStrategy
from fusesim.chain import Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair
from fusesim.protocols.base import Outcome, ProtocolRun
from fusesim.protocols.cs import CsPhase, CsSession, cs_commit, cs_open, extract_secret
from fusesim.txmodel import (
    And,
    CheckHash,
    CheckSig,
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
)

logger = logging.getLogger(__name__)

OUTPUT_INDEX = {Role.A: 0, Role.B: 1}
SECRET_SLOT = 1


class NewScsPhase(Enum):
    """Enum for one party's progress."""

    COMMIT_R = "CommitR"
    COMMIT_S = "CommitS"
    OPEN = "Open"
    PUNISH = "Punish"
    DONE = "Done"
    ABORTED = "Aborted"

    def __str__(self):
        return self.value


def min_t(max_bb: int) -> int:
    """t must exceed this for an honest Commit to confirm before t - 3*max_bb."""
    return 5 * max_bb + 1


def output_script(owner: str, peer: str, h_s: Digest, h_r: Digest) -> Script:
    """(ver_owner and H(x) = h_s) or (ver_peer and H(x) = h_r) over (sig, x)."""
    by_owner = And(children=(CheckSig(key_id=owner, slot=0), CheckHash(expected=h_s, slot=1)))
    by_peer = And(children=(CheckSig(key_id=peer, slot=0), CheckHash(expected=h_r, slot=1)))
    return Script(node=Or(children=(by_owner, by_peer)), arity=2)


class NewScsSession(ProtocolRun):
    NAME = "newscs"
    ABORT_POINTS = {
        Role.A: ("cs_commit", "cs_fuse_sig", "commit_sig", "open", "cs_open"),
        Role.B: ("cs_commit", "cs_fuse_sig", "commit_broadcast", "open", "cs_open"),
    }
    WITHHOLD_STEP = {Role.A: "open", Role.B: "open"}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        # T^A_1, T^A_2, T^B_1, T^B_2
        return [(keys[role].key_id, d) for role in Role for _ in range(2)]

    @classmethod
    def min_t(cls, max_bb: int) -> int:
        return min_t(max_bb)

    def start(self):
        self.secrets = {role: crypto.derive_secret(self.seed, f"newscs/s_{role}") for role in Role}
        self.aux_secrets = {
            role: crypto.derive_secret(self.seed, f"newscs/r_{role}") for role in Role
        }
        funding = {role: self.ledger.funding_for(self.key_id(role)) for role in Role}
        self.cs_funding = {role: funding[role][0] for role in Role}
        self.commit_funding = {role: funding[role][1] for role in Role}

        outputs = [
            TxOutput(
                value=self.d,
                script=output_script(
                    self.key_id(role),
                    self.key_id(role.peer),
                    crypto.hash(self.secrets[role]),
                    crypto.hash(self.aux_secrets[role]),
                ),
            )
            for role in Role
        ]
        inputs = [self.commit_funding[Role.A], self.commit_funding[Role.B]]
        self.commit_unsigned = spend(inputs, outputs)
        self.commit_body = body_digest(self.commit_unsigned)

        self.phase = {role: NewScsPhase.COMMIT_R for role in Role}
        self.cs: Dict[Role, Optional[CsSession]] = {role: None for role in Role}
        self.commit_signature: Optional[Sig] = None
        self.released = {role: False for role in Role}
        self.open_txs: Dict[Role, Optional[Transaction]] = {role: None for role in Role}
        self.redeem_txs: Dict[Role, Optional[Transaction]] = {role: None for role in Role}
        # fuse_txs[Y]: Fuse^Y, broadcast by Y's peer
        self.fuse_txs: Dict[Role, Optional[Transaction]] = {role: None for role in Role}

        for role in Role:
            if self.skips(role, "cs_commit"):
                continue
            self.cs[role] = cs_commit(
                self.ledger,
                self.keys[role],
                self.keys[role.peer],
                self.d,
                self.t,
                self.aux_secrets[role],
                self.cs_funding[role],
                label=f"cs_{role}",
                roles=(role, role.peer),
            )

    # chain view

    @property
    def commit_txid(self) -> Optional[Digest]:
        return self.ledger.confirmed_txid(self.commit_body)

    def commit_output(self, role: Role) -> Optional[Outpoint]:
        confirmed = self.commit_txid
        return Outpoint(txid=confirmed, index=OUTPUT_INDEX[role]) if confirmed is not None else None

    def opened(self, role: Role) -> bool:
        """Open^role confirmed, i.e. role's Commit output went back to role."""
        outpoint = self.commit_output(role)
        spender = self.ledger.spender_of(outpoint) if outpoint is not None else None
        return spender is not None and spender.tx.outputs[0].script.owner == self.key_id(role)

    def open_body(self, role: Role) -> Optional[Digest]:
        tx = self.open_txs[role]
        return body_digest(tx) if tx is not None else None

    def _ready(self, role: Role) -> bool:
        """Both inner commitments are through their Commit phase, as role sees it."""
        own, peer = self.cs[role], self.cs[role.peer]
        return (
            own is not None
            and own.signature_sent
            and peer is not None
            and peer.phase is CsPhase.FUSE_SIGNED
        )

    # agent

    def on_round(self, role: Role):
        own_cs, peer_cs = self.cs[role], self.cs[role.peer]
        if own_cs is not None:
            own_cs.committer_turn(
                skip_signature=(
                    own_cs.commit_outpoint is not None and self.skips(role, "cs_fuse_sig")
                ),
                signer=lambda digest: self.off_chain_signature(role, digest),
            )
        if peer_cs is not None:
            peer_cs.recipient_turn()

        phase = self.phase[role]
        if self.commit_txid is not None and phase in (
            NewScsPhase.COMMIT_R,
            NewScsPhase.COMMIT_S,
            NewScsPhase.ABORTED,
        ):
            phase = NewScsPhase.OPEN
        if phase in (NewScsPhase.COMMIT_R, NewScsPhase.COMMIT_S):
            if self.round >= self.t - 3 * self.max_bb:
                phase = NewScsPhase.ABORTED
            elif phase is NewScsPhase.COMMIT_R and self._ready(role):
                phase = NewScsPhase.COMMIT_S
        if phase is NewScsPhase.OPEN and self.round >= self.t:
            phase = NewScsPhase.PUNISH
        if phase is not self.phase[role]:
            logger.info("%s: %s -> %s at round %d", role.label, self.phase[role], phase, self.round)
            self.phase[role] = phase

        if phase is NewScsPhase.COMMIT_S:
            self._commit_s(role)
        elif phase is NewScsPhase.ABORTED:
            self._fallback(role)
        elif phase is NewScsPhase.OPEN:
            self._open(role)
        elif phase is NewScsPhase.PUNISH:
            self._open(role)
            self._punish(role)

    def _commit_s(self, role: Role):
        if role is Role.A:
            if self.commit_signature is None and not self.skips(Role.A, "commit_sig"):
                signature = self.off_chain_signature(Role.A, self.commit_body)
                self.commit_signature = Sig(signature=signature)
                self.released[Role.A] = True
            return

        if self.released[Role.B] or self.commit_signature is None:
            return
        public_part = crypto.public_part(self.key_id(Role.A))
        if public_part is None or not crypto.verify(
            public_part, self.commit_body, self.commit_signature.signature
        ):
            self.note("B: A's Commit signature is incorrect")
            return
        if self.skips(Role.B, "commit_broadcast"):
            return
        commit = self.commit_unsigned.with_witness(0, [self.commit_signature])
        commit = commit.with_witness(1, [self.sig(Role.B, self.commit_unsigned)])
        self.broadcast(Role.B, commit, "commit")
        self.released[Role.B] = True

    def _fallback(self, role: Role):
        """No Commit by t - 3*max_bb: redeem T_2 if the signature was released, then open CS."""
        funding = self.commit_funding[role]
        if self.released[role] and self.unspent(funding):
            if self.redeem_txs[role] is None:
                unsigned = spend([funding], [pay_to(self.key_id(role), self.d)])
                self.redeem_txs[role] = unsigned.with_witness(0, [self.sig(role, unsigned)])
                self.broadcast(role, self.redeem_txs[role], f"redeem_{role}2")
            return

        own_cs = self.cs[role]
        if own_cs is not None and own_cs.can_open and not self.skips(role, "cs_open"):
            cs_open(self.ledger, own_cs)

    def _open(self, role: Role):
        own = self.commit_output(role)
        if self.open_txs[role] is None and self.unspent(own) and not self.skips(role, "open"):
            unsigned = spend([own], [pay_to(self.key_id(role), self.d)])
            self.open_txs[role] = unsigned.with_witness(
                0, [self.sig(role, unsigned), Secret(value=self.secrets[role])]
            )
            self.broadcast(role, self.open_txs[role], f"open_{role}")

        # r_X unlocks X's Commit output for the peer, so CS^X waits for Open^X
        own_cs = self.cs[role]
        both_open = self.opened(role) and self.opened(role.peer)
        due = both_open or self.round >= self.t - 2 * self.max_bb
        if own_cs is not None and own_cs.can_open and due and not self.skips(role, "cs_open"):
            cs_open(self.ledger, own_cs)

    def _punish(self, role: Role):
        peer = role.peer
        peer_output = self.commit_output(peer)
        if self.unspent(peer_output) and not self.opened(peer):
            peer_cs = self.cs[peer]
            r_peer = peer_cs.revealed_secret() if peer_cs is not None else None
            pending = self.fuse_txs[peer] is not None and self.ledger.pending(
                body_digest(self.fuse_txs[peer])
            )
            if r_peer is not None and not pending:
                unsigned = spend([peer_output], [pay_to(self.key_id(role), self.d)])
                self.fuse_txs[peer] = unsigned.with_witness(
                    0, [self.sig(role, unsigned), Secret(value=r_peer)]
                )
                self.broadcast(role, self.fuse_txs[peer], f"fuse_{peer}")

        if self._settled():
            self.phase[role] = NewScsPhase.DONE

    def _settled(self) -> bool:
        outputs_spent = all(not self.unspent(self.commit_output(role)) for role in Role)
        cs_resolved = all(cs is None or not cs.commit_unspent for cs in self.cs.values())
        return outputs_spent and cs_resolved

    @property
    def terminal_phase(self) -> str:
        return ",".join(f"{role}={self.phase[role]}" for role in Role)

    def revealed_secrets(self) -> Dict[Role, Optional[bytes]]:
        """s_A and s_B as readable from confirmed Open transactions."""
        found: Dict[Role, Optional[bytes]] = {}
        for role in Role:
            body = self.open_body(role)
            found[role] = (
                extract_secret(self.ledger, body, SECRET_SLOT)
                if body is not None and self.ledger.confirmation(body) is not None
                else None
            )
        return found


def newscs_run(
    ledger: Ledger,
    keys: Dict[Role, KeyPair],
    parties: Optional[Dict[Role, PartyStrategy]] = None,
    seed: int = 0,
    max_rounds: Optional[int] = None,
) -> Outcome:
    return NewScsSession(ledger, keys, parties=parties, seed=seed).run(max_rounds)
