import logging
from typing import ClassVar, Dict, List, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field

from fusesim import crypto
from fusesim.adversary import PartyStrategy
from fusesim.chain import Ledger
from fusesim.common import Role
from fusesim.crypto import Digest, KeyPair, Signature
from fusesim.txmodel import Outpoint, Sig, Transaction, body_digest, sign_body

logger = logging.getLogger(__name__)


class ConfirmedTx(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    txid: str
    round: int


class Outcome(BaseModel):
    """Per-run report: balances, confirmed protocol transactions and leftovers."""

    protocol: str
    initial: Dict[str, int]
    final: Dict[str, int]
    confirmed: List[ConfirmedTx] = Field(default_factory=list)
    locked: List[str] = Field(default_factory=list)
    terminal_phase: str = ""
    notes: List[str] = Field(default_factory=list)
    requires_cooperation: bool = False

    @property
    def deltas(self) -> Dict[str, int]:
        return {role: self.final[role] - self.initial[role] for role in self.initial}

    def labels(self) -> List[str]:
        return [item.label for item in self.confirmed]


class ProtocolRun:
    """
    Two party agents driven over one ledger. Subclasses implement on_round,
    which is called for A then B once per round after the ledger advanced.
    """

    NAME: ClassVar[str] = ""
    ROLE_NAMES: ClassVar[Dict[Role, str]] = {Role.A: "a", Role.B: "b"}
    ABORT_POINTS: ClassVar[Dict[Role, Tuple[str, ...]]] = {Role.A: (), Role.B: ()}
    # abort point that keeps a party's main secret unrevealed
    WITHHOLD_STEP: ClassVar[Dict[Role, Optional[str]]] = {Role.A: None, Role.B: None}

    @classmethod
    def allocations(cls, keys: Dict[Role, KeyPair], d: int) -> List[Tuple[str, int]]:
        raise NotImplementedError

    @classmethod
    def min_t(cls, max_bb: int) -> int:
        """Largest t the protocol cannot run with; ChainParams already demands t > 3*max_bb."""
        return 3 * max_bb

    def __init__(
        self,
        ledger: Ledger,
        keys: Dict[Role, KeyPair],
        parties: Optional[Dict[Role, PartyStrategy]] = None,
        seed: int = 0,
        d: Optional[int] = None,
        t: Optional[int] = None,
    ):
        self.ledger = ledger
        self.keys = keys
        self.parties = {role: PartyStrategy.honest(role) for role in Role}
        self.parties.update(parties or {})
        self.seed = seed
        self.d = d if d is not None else ledger.params.d
        self.t = t if t is not None else ledger.params.t
        self.max_bb = ledger.params.max_bb
        if self.t <= self.min_t(self.max_bb):
            raise ValueError(f"{self.NAME} needs t > {self.min_t(self.max_bb)}, got {self.t}")

        self.initial = {role: ledger.balance(keys[role].key_id) for role in Role}
        self.notes: List[str] = []
        self.requires_cooperation = False
        self._skipped: Set[Tuple[Role, str]] = set()
        self._corrupted: Set[Role] = set()

    # party behaviour

    def skips(self, role: Role, step: str) -> bool:
        strategy = self.parties[role]
        skipping = strategy.abort_at == step or (
            strategy.withhold_secret and step == self.WITHHOLD_STEP.get(role)
        )
        if skipping and (role, step) not in self._skipped:
            self._skipped.add((role, step))
            self.ledger.trace.emit(self.ledger.current_round, "skip", role=str(role), detail=step)
            logger.info("%s skips %s at round %d", role.label, step, self.ledger.current_round)
        return skipping

    def off_chain_signature(self, role: Role, digest: Digest) -> Signature:
        """Signature handed to the peer; the first one is garbage under send_bad_signature."""
        key = self.keys[role]
        if self.parties[role].send_bad_signature and role not in self._corrupted:
            self._corrupted.add(role)
            logger.info("%s sends a bad signature", role.label)
            return crypto.garbage_signature(key.key_id, digest)
        return key.sign(digest)

    def sig(self, role: Role, tx: Transaction) -> Sig:
        return sign_body(tx, self.keys[role])

    def key_id(self, role: Role) -> str:
        return self.keys[role].key_id

    def broadcast(self, role: Role, tx: Transaction, label: str) -> Digest:
        self.ledger.broadcast(tx, role=f"{role}:{label}")
        return body_digest(tx)

    def note(self, message: str):
        if message not in self.notes:
            self.notes.append(message)
            logger.info(message)

    # chain helpers

    @property
    def round(self) -> int:
        return self.ledger.current_round

    def unspent(self, outpoint: Optional[Outpoint]) -> bool:
        return outpoint is not None and self.ledger.lookup(outpoint) is not None

    def rejected_since(self, body: Digest, since: int) -> Optional[str]:
        """Error kind if the transaction with this body was dropped after round `since`."""
        found = self.ledger.rejection(body)
        if found is None or found[0] <= since:
            return None
        return found[1].kind.value

    # driving

    def start(self):
        for role in Role:
            self.on_round(role)

    def on_round(self, role: Role):
        raise NotImplementedError

    @property
    def terminal_phase(self) -> str:
        raise NotImplementedError

    def finished(self) -> bool:
        return self.round >= self.t + 2 * self.max_bb and not self.ledger.mempool

    def run(self, max_rounds: Optional[int] = None) -> Outcome:
        max_rounds = max_rounds if max_rounds is not None else self.t + 3 * self.max_bb + 1
        logger.info("%s run starts, t=%d max_bb=%d", self.NAME, self.t, self.max_bb)
        self.start()
        while self.round < max_rounds and not self.finished():
            self.ledger.advance_round()
            for role in Role:
                self.on_round(role)
        return self.outcome()

    def outcome(self) -> Outcome:
        confirmed = [
            ConfirmedTx(label=item.role.split(":", 1)[1], txid=item.txid.hex(), round=item.round)
            for item in self.ledger.confirmed
            if not item.role.startswith("genesis") and ":" in item.role
        ]
        return Outcome(
            protocol=self.NAME,
            initial={str(role): value for role, value in self.initial.items()},
            final={str(role): self.ledger.balance(self.key_id(role)) for role in Role},
            confirmed=confirmed,
            locked=[str(outpoint) for outpoint, _ in self.ledger.locked_outputs()],
            terminal_phase=self.terminal_phase,
            notes=list(self.notes),
            requires_cooperation=self.requires_cooperation,
        )
