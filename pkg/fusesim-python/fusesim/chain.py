"""
Round-based ledger.

Every broadcast goes through the network strategy, which may swap in a
malleated twin and picks the inclusion round within max_bb. On each
advance_round the due entries are validated one by one in the adversary's
order; the first valid spend of an outpoint wins and rejected entries are
dropped. Retrying is the caller's job.
"""

import logging
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fusesim.adversary import NetworkStrategy, on_broadcast, order_conflicts
from fusesim.crypto import Digest
from fusesim.errors import EmptyAllocation, SubstitutionRejected
from fusesim.txmodel import (
    Outpoint,
    Transaction,
    TxInput,
    TxOutput,
    ValidationError,
    body_digest,
    pay_to,
    txid,
    validate,
)

logger = logging.getLogger(__name__)

EMPTY = "-"


class ChainParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_bb: int = Field(default=1, ge=1)
    d: int = Field(default=10, gt=0)
    t: int = 12

    @model_validator(mode="after")
    def _deadline_margin(self):
        if self.t <= 3 * self.max_bb:
            raise ValueError(f"t must exceed 3*max_bb ({3 * self.max_bb}), got {self.t}")
        return self

    @property
    def settle_round(self) -> int:
        """Round after which no honest protocol action can still be pending."""
        return self.t + 2 * self.max_bb


class UtxoEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    output: TxOutput
    round: int

    @property
    def owner(self) -> Optional[str]:
        return self.output.script.owner


class MempoolEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    entry_id: int
    tx: Transaction
    body: Digest
    broadcast_round: int
    scheduled_round: int
    substituted: Optional[Transaction] = None
    role: str = EMPTY

    @property
    def effective(self) -> Transaction:
        return self.substituted if self.substituted is not None else self.tx


class Confirmation(BaseModel):
    model_config = ConfigDict(frozen=True)

    round: int
    tx: Transaction
    txid: Digest
    body: Digest
    role: str = EMPTY


class TraceRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    round: int
    event: str
    role: str = EMPTY
    txid: str = EMPTY
    body: str = EMPTY
    detail: str = EMPTY

    FIELDS: ClassVar[Tuple[str, ...]] = ("round", "event", "role", "txid", "body", "detail")

    def to_line(self) -> str:
        return "\t".join(str(getattr(self, name)) for name in self.FIELDS)

    @classmethod
    def from_line(cls, line: str) -> "TraceRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(cls.FIELDS):
            raise ValueError(f"trace record needs {len(cls.FIELDS)} fields, got {len(parts)}")
        return cls(**dict(zip(cls.FIELDS, parts)))


class Trace(BaseModel):
    records: List[TraceRecord] = Field(default_factory=list)

    def emit(self, round: int, event: str, **fields) -> TraceRecord:
        record = TraceRecord(
            round=round, event=event, **{k: v for k, v in fields.items() if v not in (None, "")}
        )
        self.records.append(record)
        return record

    def events(self, event: str) -> List[TraceRecord]:
        return [record for record in self.records if record.event == event]

    def dumps(self, format: str = "records") -> str:
        if format == "records":
            return "".join(record.to_line() + "\n" for record in self.records)
        if format == "text":
            return self._table()
        raise ValueError(f"unknown trace format: {format}")

    def _table(self) -> str:
        rows = [list(TraceRecord.FIELDS)] + [
            [
                str(record.round),
                record.event,
                record.role,
                record.txid[:16],
                record.body[:16],
                record.detail,
            ]
            for record in self.records
        ]
        widths = [max(len(row[i]) for row in rows) for i in range(len(TraceRecord.FIELDS) - 1)]
        lines = [
            "  ".join(cell.ljust(width) for cell, width in zip(row, widths)) + "  " + row[-1]
            for row in rows
        ]
        return "\n".join(line.rstrip() for line in lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Trace":
        return cls(records=[TraceRecord.from_line(line) for line in text.splitlines() if line])


class Ledger:
    """Chain state: confirmed history, UTXO set and the adversary-scheduled mempool."""

    def __init__(
        self,
        params: ChainParams,
        network: Optional[NetworkStrategy] = None,
        seed: int = 0,
        trace: Optional[Trace] = None,
    ):
        self.params = params
        self.network = network or NetworkStrategy.honest(params.max_bb)
        if self.network.max_bb != params.max_bb:
            raise ValueError(
                f"network max_bb {self.network.max_bb} differs from chain max_bb {params.max_bb}"
            )
        self.seed = seed
        self.trace = trace if trace is not None else Trace()

        self.current_round = 0
        self.confirmed: List[Confirmation] = []
        self.utxo: Dict[Outpoint, UtxoEntry] = {}
        self.spent: Dict[Outpoint, Confirmation] = {}
        self.mempool: List[MempoolEntry] = []
        self.genesis_outpoints: List[Outpoint] = []
        self.genesis_total = 0

        self._by_body: Dict[Digest, Confirmation] = {}
        self._rejections: Dict[Digest, Tuple[int, ValidationError]] = {}
        self._next_entry = 0

    # UtxoView

    def lookup(self, outpoint: Outpoint) -> Optional[TxOutput]:
        entry = self.utxo.get(outpoint)
        return entry.output if entry is not None else None

    def is_spent(self, outpoint: Outpoint) -> bool:
        return outpoint in self.spent

    # mempool

    def broadcast(self, tx: Transaction, role: str = EMPTY) -> int:
        """Queues tx; the network strategy picks the form that is included and when."""
        sent, delay = on_broadcast(self.network, tx, self.seed)
        body = body_digest(tx)
        if body_digest(sent) != body:
            raise SubstitutionRejected(f"network substitution changed the body of {body.short()}")
        if not 1 <= delay <= self.params.max_bb:
            raise ValueError(f"delay {delay} outside [1, {self.params.max_bb}]")

        entry = MempoolEntry(
            entry_id=self._next_entry,
            tx=tx,
            body=body,
            broadcast_round=self.current_round,
            scheduled_round=self.current_round + delay,
            substituted=sent if sent != tx else None,
            role=role,
        )
        self._next_entry += 1
        self.mempool.append(entry)

        detail = f"delay={delay}" + (",substituted" if entry.substituted is not None else "")
        self.trace.emit(
            self.current_round,
            "broadcast",
            role=role,
            txid=txid(tx).hex(),
            body=body.hex(),
            detail=detail,
        )
        logger.debug("broadcast %s by %s (%s)", body.short(), role, detail)
        return entry.entry_id

    def advance_round(
        self, adversary: Optional[NetworkStrategy] = None
    ) -> List[Tuple[Transaction, Optional[ValidationError]]]:
        strategy = adversary or self.network
        self.current_round += 1

        due = [entry for entry in self.mempool if entry.scheduled_round == self.current_round]
        self.mempool = [entry for entry in self.mempool if entry not in due]

        results = []
        for entry in order_conflicts(strategy.conflict_order, due):
            tx = entry.effective
            error = validate(tx, self, self.current_round)
            if error is None:
                self._include(tx, entry.role)
            else:
                self._rejections[entry.body] = (self.current_round, error)
                self.trace.emit(
                    self.current_round,
                    "reject",
                    role=entry.role,
                    txid=txid(tx).hex(),
                    body=entry.body.hex(),
                    detail=str(error),
                )
                logger.debug("reject %s by %s: %s", entry.body.short(), entry.role, error)
            results.append((tx, error))
        return results

    def _include(self, tx: Transaction, role: str, coinbase: bool = False) -> Confirmation:
        tx_hash = txid(tx)
        body = body_digest(tx)
        confirmation = Confirmation(
            round=self.current_round, tx=tx, txid=tx_hash, body=body, role=role
        )
        if not coinbase:
            for inp in tx.inputs:
                self.utxo.pop(inp.outpoint)
                self.spent[inp.outpoint] = confirmation
        for index, output in enumerate(tx.outputs):
            self.utxo[Outpoint(txid=tx_hash, index=index)] = UtxoEntry(
                output=output, round=self.current_round
            )

        self.confirmed.append(confirmation)
        self._by_body[body] = confirmation
        self.trace.emit(
            self.current_round, "confirm", role=role, txid=tx_hash.hex(), body=body.hex()
        )
        logger.debug("confirm %s by %s at round %d", tx_hash.short(), role, self.current_round)
        return confirmation

    # queries

    def confirmation(self, body: Digest) -> Optional[Confirmation]:
        return self._by_body.get(body)

    def confirmed_by_body(self, body: Digest) -> Optional[Tuple[int, Transaction]]:
        found = self._by_body.get(body)
        return (found.round, found.tx) if found is not None else None

    def confirmed_txid(self, body: Digest) -> Optional[Digest]:
        """Id under which the transaction with this body actually confirmed."""
        found = self._by_body.get(body)
        return found.txid if found is not None else None

    def pending(self, body: Digest) -> bool:
        return any(entry.body == body for entry in self.mempool)

    def rejection(self, body: Digest) -> Optional[Tuple[int, ValidationError]]:
        """Latest (round, error) for a dropped transaction with this body."""
        return self._rejections.get(body)

    def spender_of(self, outpoint: Outpoint) -> Optional[Confirmation]:
        return self.spent.get(outpoint)

    def balance(self, key_id: str) -> int:
        return sum(entry.output.value for entry in self.utxo.values() if entry.owner == key_id)

    def total_value(self) -> int:
        return sum(entry.output.value for entry in self.utxo.values())

    def funding_for(self, key_id: str) -> List[Outpoint]:
        """Unspent genesis outputs of key_id, in allocation order."""
        return [
            outpoint
            for outpoint in self.genesis_outpoints
            if outpoint in self.utxo and self.utxo[outpoint].owner == key_id
        ]

    def locked_outputs(self) -> List[Tuple[Outpoint, UtxoEntry]]:
        """Unspent outputs guarded by a protocol script rather than a single key."""
        return [(outpoint, entry) for outpoint, entry in self.utxo.items() if entry.owner is None]


def genesis(
    allocations: Sequence[Tuple[str, int]],
    params: Optional[ChainParams] = None,
    network: Optional[NetworkStrategy] = None,
    seed: int = 0,
    trace: Optional[Trace] = None,
) -> Ledger:
    """Ledger at round 0 with one confirmed funding transaction per allocation."""
    if not allocations:
        raise EmptyAllocation("genesis needs at least one allocation")

    ledger = Ledger(params or ChainParams(), network=network, seed=seed, trace=trace)
    for index, (key_id, value) in enumerate(allocations):
        if value <= 0:
            raise ValueError(f"allocation for {key_id} must be positive, got {value}")
        coinbase = Transaction(
            inputs=(TxInput(outpoint=Outpoint(txid=Digest.zero(), index=index)),),
            outputs=(pay_to(key_id, value),),
        )
        confirmation = ledger._include(coinbase, role=f"genesis:{key_id}", coinbase=True)
        ledger.genesis_outpoints.append(Outpoint(txid=confirmation.txid, index=0))
        ledger.genesis_total += value

    logger.debug("genesis with %d allocations, total %d", len(allocations), ledger.genesis_total)
    return ledger
