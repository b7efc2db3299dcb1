"""
Timed commitment (CS).

The committer locks d coins in Commit. The out-script lets the committer take
them back by revealing the secret s, or lets committer and recipient jointly
spend them. After Commit confirms, the committer signs a Fuse paying d to the
recipient, time-locked at t. If s is not revealed by t the recipient
broadcasts the Fuse and keeps the deposit.

Every transaction spending Commit is built from the txid the ledger actually
confirmed, looked up by body digest. Nothing here predicts a txid, so a
malleated Commit does not break the Fuse.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from fusesim import crypto
from fusesim.chain import Confirmation, Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair, Signature
from fusesim.errors import NotASecret, NotConfirmed, ProtocolError
from fusesim.protocols.base import ProtocolRun
from fusesim.txmodel import (
    OMITTED,
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
    sign_body,
    spend,
    witness_items,
)

logger = logging.getLogger(__name__)

SECRET_SLOT = 2


class CsPhase(Enum):
    """Enum for the phases of a timed commitment."""

    INIT = "Init"
    COMMITTED = "Committed"
    FUSE_SIGNED = "FuseSigned"
    OPENED = "Opened"
    FUSED = "Fused"
    ABORTED = "Aborted"

    def __str__(self):
        return self.value


def commit_script(committer: str, recipient: str, h: Digest) -> Script:
    """(ver_C and H(x) = h) or (ver_C and ver_R) over slots (sig_C, sig_R, x)."""
    by_secret = And(children=(CheckSig(key_id=committer, slot=0), CheckHash(expected=h, slot=2)))
    jointly = And(children=(CheckSig(key_id=committer, slot=0), CheckSig(key_id=recipient, slot=1)))
    return Script(node=Or(children=(by_secret, jointly)), arity=3)


def extract_secret(ledger: Ledger, body: Digest, slot: int, input_index: int = 0) -> bytes:
    """Secret revealed in a witness slot of the confirmed transaction with this body."""
    found = ledger.confirmation(body)
    if found is None:
        raise NotConfirmed(f"no confirmed transaction with body {body.short()}")
    items = witness_items(found.tx, input_index)
    if slot >= len(items) or not isinstance(items[slot], Secret):
        raise NotASecret(f"witness slot {slot} of {body.short()} holds no secret")
    return items[slot].value


class CsSession:
    """Both sides of one commitment; the simulation owns committer and recipient alike."""

    def __init__(
        self,
        ledger: Ledger,
        committer: KeyPair,
        recipient: KeyPair,
        d: int,
        t: int,
        secret: bytes,
        funding: Outpoint,
        label: str = "cs",
        roles: Tuple[Role, Role] = (Role.A, Role.B),
    ):
        self.ledger = ledger
        self.committer = committer
        self.recipient = recipient
        self.d = d
        self.t = t
        self.secret = secret
        self.h = crypto.hash(secret)
        self.funding = funding
        self.label = label
        self.committer_role, self.recipient_role = roles

        script = commit_script(committer.key_id, recipient.key_id, self.h)
        unsigned = spend([funding], [TxOutput(value=d, script=script)])
        self.commit_tx = unsigned.with_witness(0, [sign_body(unsigned, committer)])
        self.commit_body = body_digest(self.commit_tx)

        self.phase = CsPhase.INIT
        self.commit_round: Optional[int] = None
        self.fuse_signature: Optional[Signature] = None
        self.signature_sent = False
        self.open_tx: Optional[Transaction] = None
        self.fuse_tx: Optional[Transaction] = None
        self.abort_reason: Optional[str] = None

    def tag(self, role: Role, step: str) -> str:
        return f"{role}:{self.label}.{step}"

    # chain view

    @property
    def commit_confirmation(self) -> Optional[Confirmation]:
        return self.ledger.confirmation(self.commit_body)

    @property
    def commit_outpoint(self) -> Optional[Outpoint]:
        confirmed = self.ledger.confirmed_txid(self.commit_body)
        return Outpoint(txid=confirmed, index=0) if confirmed is not None else None

    @property
    def commit_unspent(self) -> bool:
        outpoint = self.commit_outpoint
        return outpoint is not None and self.ledger.lookup(outpoint) is not None

    def _spend_commit(self, pay_to_key: str, lock_time: int) -> Transaction:
        outpoint = self.commit_outpoint
        if outpoint is None:
            raise ProtocolError(f"{self.label}: Commit is not confirmed")
        return spend([outpoint], [pay_to(pay_to_key, self.d)], lock_time=lock_time)

    def build_open(self) -> Transaction:
        return self._spend_commit(self.committer.key_id, 0)

    def build_fuse(self) -> Transaction:
        return self._spend_commit(self.recipient.key_id, self.t)

    def abort(self, reason: str):
        self.phase = CsPhase.ABORTED
        self.abort_reason = reason
        logger.info("%s aborted at round %d: %s", self.label, self.ledger.current_round, reason)

    def update(self) -> CsPhase:
        if self.phase is CsPhase.INIT:
            found = self.commit_confirmation
            if found is not None:
                self.phase = CsPhase.COMMITTED
                self.commit_round = found.round
                logger.debug("%s committed at round %d", self.label, found.round)
            elif self.ledger.rejection(self.commit_body) and not self.ledger.pending(
                self.commit_body
            ):
                self.abort("Commit rejected")

        outpoint = self.commit_outpoint
        if outpoint is not None and self.phase not in (CsPhase.OPENED, CsPhase.FUSED):
            spender = self.ledger.spender_of(outpoint)
            if spender is not None:
                if spender.tx.outputs[0].script.owner == self.committer.key_id:
                    self.phase = CsPhase.OPENED
                else:
                    self.phase = CsPhase.FUSED
                logger.debug("%s %s at round %d", self.label, self.phase, spender.round)
        return self.phase

    def revealed_secret(self) -> Optional[bytes]:
        """The committed secret, once an Open has confirmed."""
        outpoint = self.commit_outpoint
        spender = self.ledger.spender_of(outpoint) if outpoint is not None else None
        if spender is None:
            return None
        try:
            return extract_secret(self.ledger, spender.body, SECRET_SLOT)
        except NotASecret:
            return None

    # committer side

    def send_fuse_signature(self, signature: Optional[Signature] = None) -> Signature:
        """Signs the Fuse spending the confirmed Commit and hands it to the recipient."""
        fuse = self.build_fuse()
        self.fuse_signature = signature or self.committer.sign(body_digest(fuse))
        self.signature_sent = True
        logger.debug("%s fuse signature sent at round %d", self.label, self.ledger.current_round)
        return self.fuse_signature

    def committer_turn(self, skip_signature: bool = False, signer=None):
        """Sends the Fuse signature once Commit is seen confirmed."""
        self.update()
        if self.signature_sent or self.commit_outpoint is None or skip_signature:
            return
        fuse_body = body_digest(self.build_fuse())
        self.send_fuse_signature(signer(fuse_body) if signer is not None else None)

    @property
    def can_open(self) -> bool:
        return (
            self.open_tx is None
            and self.phase in (CsPhase.COMMITTED, CsPhase.FUSE_SIGNED, CsPhase.ABORTED)
            and self.commit_unspent
        )

    # recipient side

    def check_fuse_signature(self) -> CsPhase:
        if self.phase is not CsPhase.COMMITTED:
            return self.phase
        if self.fuse_signature is None:
            if self.ledger.current_round > self.commit_round + 1:
                self.abort("fuse signature missing")
            return self.phase

        public_part = crypto.public_part(self.committer.key_id)
        fuse_body = body_digest(self.build_fuse())
        if public_part is not None and crypto.verify(public_part, fuse_body, self.fuse_signature):
            self.phase = CsPhase.FUSE_SIGNED
            logger.debug("%s fuse signature accepted", self.label)
        else:
            self.abort("the fuse signature is incorrect")
        return self.phase

    def recipient_turn(self, claim_from: Optional[int] = None):
        """Verifies the Fuse signature, and from round t on claims an unopened deposit."""
        self.update()
        self.check_fuse_signature()
        claim_from = self.t if claim_from is None else claim_from
        if (
            self.phase is CsPhase.FUSE_SIGNED
            and self.ledger.current_round >= claim_from
            and self.commit_unspent
            and (self.fuse_tx is None or not self.ledger.pending(body_digest(self.fuse_tx)))
        ):
            cs_fuse(self.ledger, self)


def cs_commit(
    ledger: Ledger,
    committer: KeyPair,
    recipient: KeyPair,
    d: int,
    t: int,
    s: bytes,
    funding: Outpoint,
    label: str = "cs",
    roles: Tuple[Role, Role] = (Role.A, Role.B),
) -> CsSession:
    """Builds and broadcasts Commit; confirmation and the Fuse signature follow per round."""
    session = CsSession(ledger, committer, recipient, d, t, s, funding, label=label, roles=roles)
    ledger.broadcast(session.commit_tx, role=session.tag(session.committer_role, "commit"))
    logger.info("%s commit broadcast by %s", label, session.committer_role.label)
    return session


def cs_open(ledger: Ledger, session: CsSession) -> Transaction:
    """Reveals s: witness (sig_C, omitted, s)."""
    session.update()
    if not session.can_open:
        raise ProtocolError(f"{session.label}: cannot open in phase {session.phase}")
    unsigned = session.build_open()
    session.open_tx = unsigned.with_witness(
        0, [sign_body(unsigned, session.committer), OMITTED, Secret(value=session.secret)]
    )
    ledger.broadcast(session.open_tx, role=session.tag(session.committer_role, "open"))
    logger.info("%s open broadcast at round %d", session.label, ledger.current_round)
    return session.open_tx


def cs_fuse(ledger: Ledger, session: CsSession) -> Transaction:
    """Claims the deposit: witness (sig_C, sig_R, omitted); valid from round t."""
    if session.phase is not CsPhase.FUSE_SIGNED:
        raise ProtocolError(f"{session.label}: cannot fuse in phase {session.phase}")
    unsigned = session.build_fuse()
    public_part = crypto.public_part(session.committer.key_id)
    if public_part is None or not crypto.verify(
        public_part, body_digest(unsigned), session.fuse_signature
    ):
        raise ProtocolError(f"{session.label}: stored committer signature does not match Fuse")

    session.fuse_tx = unsigned.with_witness(
        0, [Sig(signature=session.fuse_signature), sign_body(unsigned, session.recipient), OMITTED]
    )
    ledger.broadcast(session.fuse_tx, role=session.tag(session.recipient_role, "fuse"))
    logger.info("%s fuse broadcast at round %d", session.label, ledger.current_round)
    return session.fuse_tx


class CsRun(ProtocolRun):
    """Standalone commitment: A commits to a secret, B is the recipient."""

    NAME = "cs"
    ROLE_NAMES = {Role.A: "committer", Role.B: "recipient"}
    ABORT_POINTS = {Role.A: ("open",), Role.B: ()}
    WITHHOLD_STEP = {Role.A: "open", Role.B: None}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        return [(keys[Role.A].key_id, d)]

    def start(self):
        secret = crypto.derive_secret(self.seed, "cs/s")
        self.session = cs_commit(
            self.ledger,
            self.keys[Role.A],
            self.keys[Role.B],
            self.d,
            self.t,
            secret,
            self.ledger.funding_for(self.key_id(Role.A))[0],
        )

    @property
    def open_round(self) -> int:
        return self.t - 3 * self.max_bb

    def on_round(self, role: Role):
        session = self.session
        if role is Role.A:
            session.committer_turn(signer=lambda digest: self.off_chain_signature(Role.A, digest))
            due = session.can_open and self.round >= self.open_round
            if due and not self.skips(Role.A, "open"):
                cs_open(self.ledger, session)
        else:
            session.recipient_turn()
            if session.phase is CsPhase.ABORTED and session.abort_reason:
                self.note(f"recipient aborted: {session.abort_reason}")

    @property
    def terminal_phase(self) -> str:
        return str(self.session.phase)
