"""
Network and party misbehaviour as plain strategy values.

A NetworkStrategy decides, per broadcast, whether the transaction is replaced
by a malleated twin and how many rounds it waits in the mempool. A
PartyStrategy names the single protocol step a party skips. Both are
immutable and enumerable, which is what the fairness matrix iterates over.
"""

import hashlib
import logging
from enum import Enum
from typing import Dict, FrozenSet, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fusesim.common import Role
from fusesim.crypto import Digest
from fusesim.errors import ExhaustiveBoundExceeded
from fusesim.txmodel import Transaction, body_digest, malleate, txid

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_BB = 2
PADDING_SIZE = 8


class ConflictOrder(Enum):
    """Enum for the order in which same-round mempool entries are processed."""

    FIFO = "fifo"
    LIFO = "lifo"
    TXID = "txid"

    def __str__(self):
        return self.value


class NetworkStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "honest"
    max_bb: int = Field(default=1, ge=1)
    malleate: Union[bool, FrozenSet[str]] = False
    delay: Union[int, Literal["max", "table"]] = 1
    delay_table: Dict[str, int] = Field(default_factory=dict)
    conflict_order: ConflictOrder = ConflictOrder.FIFO
    substitutions: Dict[str, Transaction] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _within_bounds(self):
        if isinstance(self.delay, int) and not 1 <= self.delay <= self.max_bb:
            raise ValueError(f"delay {self.delay} outside [1, {self.max_bb}]")
        for key, value in self.delay_table.items():
            if not 1 <= value <= self.max_bb:
                raise ValueError(f"delay for {key[:8]} outside [1, {self.max_bb}]")
        for key, substitute in self.substitutions.items():
            if body_digest(substitute).hex() != key:
                raise ValueError(f"substitution for {key[:8]} changes the body digest")
        return self

    @classmethod
    def honest(cls, max_bb: int = 1) -> "NetworkStrategy":
        return cls(name="honest", max_bb=max_bb)

    @classmethod
    def malleate_all(cls, max_bb: int = 1) -> "NetworkStrategy":
        return cls(name="malleate-all", max_bb=max_bb, malleate=True)

    @classmethod
    def max_delay(cls, max_bb: int = 1) -> "NetworkStrategy":
        return cls(name="max-delay", max_bb=max_bb, delay="max")

    def malleates(self, body: Digest) -> bool:
        if isinstance(self.malleate, bool):
            return self.malleate
        return body.hex() in self.malleate

    def delay_for(self, body: Digest) -> int:
        if self.delay == "max":
            return self.max_bb
        if self.delay == "table":
            return self.delay_table.get(body.hex(), 1)
        return self.delay

    @property
    def malleating(self) -> bool:
        return bool(self.malleate) or bool(self.substitutions)

    def __str__(self):
        return self.name


def malleation_padding(seed: int, body: Digest) -> bytes:
    seed_bytes = (seed & ((1 << 64) - 1)).to_bytes(8, "little")
    return hashlib.sha256(b"fusesim/malleate" + seed_bytes + body.value).digest()[:PADDING_SIZE]


def on_broadcast(strategy: NetworkStrategy, tx: Transaction, seed: int) -> Tuple[Transaction, int]:
    """Form of tx the network will try to include, and its delay in rounds."""
    body = body_digest(tx)
    key = body.hex()

    if key in strategy.substitutions:
        sent = strategy.substitutions[key]
    elif strategy.malleates(body):
        sent = malleate(tx, malleation_padding(seed, body))
    else:
        sent = tx

    if sent is not tx:
        logger.debug("substituting %s for %s", txid(sent).short(), txid(tx).short())
    return sent, strategy.delay_for(body)


def order_conflicts(order: ConflictOrder, entries: Sequence) -> List:
    """Processing order for mempool entries that fall due in the same round."""
    if order is ConflictOrder.LIFO:
        return sorted(entries, key=lambda entry: entry.entry_id, reverse=True)
    if order is ConflictOrder.TXID:
        return sorted(entries, key=lambda entry: txid(entry.effective).hex())
    return sorted(entries, key=lambda entry: entry.entry_id)


class PartyStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    abort_at: Optional[str] = None
    withhold_secret: bool = False
    send_bad_signature: bool = False
    fuzz: bool = False

    @model_validator(mode="after")
    def _single_deviation(self):
        if not self.fuzz and len(self.deviations) > 1:
            raise ValueError(
                f"party {self.role} has {len(self.deviations)} deviations; only fuzz mode "
                "allows more than one"
            )
        return self

    @classmethod
    def honest(cls, role: Role) -> "PartyStrategy":
        return cls(role=role)

    @property
    def deviations(self) -> List[str]:
        found = []
        if self.abort_at:
            found.append(f"abort_at={self.abort_at}")
        if self.withhold_secret:
            found.append("withhold_secret")
        if self.send_bad_signature:
            found.append("send_bad_signature")
        return found

    @property
    def is_honest(self) -> bool:
        return not self.deviations

    def __str__(self):
        return ",".join(self.deviations) or "honest"


Triple = Tuple[NetworkStrategy, PartyStrategy, PartyStrategy]


def enumerate_strategies(max_bb: int, protocol: str, exhaustive: bool = True) -> List[Triple]:
    """
    Cross product of malleation on/off, delay all-1/all-max and every single
    abort point per party (plus honest). The order is fixed and seed-free.
    """
    if exhaustive and max_bb > EXHAUSTIVE_MAX_BB:
        raise ExhaustiveBoundExceeded(max_bb)

    from fusesim.protocols import protocol_class

    run_class = protocol_class(protocol)
    points_a = [None, *run_class.ABORT_POINTS[Role.A]]
    points_b = [None, *run_class.ABORT_POINTS[Role.B]]

    triples: List[Triple] = []
    for malleating in (False, True):
        for delay in (1, "max"):
            network = NetworkStrategy(
                name=f"{'malleate' if malleating else 'honest'}/delay-{delay}",
                max_bb=max_bb,
                malleate=malleating,
                delay=delay,
            )
            for abort_a in points_a:
                for abort_b in points_b:
                    triples.append(
                        (
                            network,
                            PartyStrategy(role=Role.A, abort_at=abort_a),
                            PartyStrategy(role=Role.B, abort_at=abort_b),
                        )
                    )
    return triples
