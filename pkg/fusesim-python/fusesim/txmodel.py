"""
Transactions, their canonical encoding and the two digests that identify them.

`txid` hashes the whole encoding, witnesses included; `body_digest` hashes the
encoding with every witness list emptied, and is what signatures cover. The
gap between the two is the malleation channel: `malleate` pads a witness,
which moves the txid but leaves the body digest and every script verdict alone.
"""

import logging
import struct
from enum import Enum
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Annotated, Literal

from fusesim import crypto
from fusesim.common import TRACE
from fusesim.crypto import Digest, KeyPair, Signature
from fusesim.errors import EmptyPadding, SlotOutOfRange

logger = logging.getLogger(__name__)

U32_MAX = (1 << 32) - 1
U64_MAX = (1 << 64) - 1


class Outpoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    txid: Digest
    index: int = Field(ge=0, le=U32_MAX)

    def __str__(self):
        return f"{self.txid.short()}:{self.index}"


# Witness items ----------------------------------------------------------------


class Sig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["sig"] = "sig"
    signature: Signature


class Secret(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["secret"] = "secret"
    value: bytes


class Omitted(BaseModel):
    """An argument the spending script does not need."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["omitted"] = "omitted"


class Pad(BaseModel):
    """A push/pop no-op: ignored by scripts, still part of the full encoding."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["pad"] = "pad"
    value: bytes


WitnessItem = Annotated[Union[Sig, Secret, Omitted, Pad], Field(discriminator="kind")]

OMITTED = Omitted()


# Scripts ----------------------------------------------------------------------


class CheckSig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["checksig"] = "checksig"
    key_id: str
    slot: int = Field(ge=0)


class CheckHash(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["checkhash"] = "checkhash"
    expected: Digest
    slot: int = Field(ge=0)


class And(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["and"] = "and"
    children: Tuple["ScriptNode", ...]

    @field_validator("children")
    @classmethod
    def _at_least_two(cls, children):
        if len(children) < 2:
            raise ValueError("And needs at least two children")
        return children


class Or(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["or"] = "or"
    children: Tuple["ScriptNode", ...]

    @field_validator("children")
    @classmethod
    def _at_least_two(cls, children):
        if len(children) < 2:
            raise ValueError("Or needs at least two children")
        return children


ScriptNode = Annotated[Union[CheckSig, CheckHash, And, Or], Field(discriminator="kind")]

And.model_rebuild()
Or.model_rebuild()


def leaves(node) -> Iterable[Union[CheckSig, CheckHash]]:
    if isinstance(node, (And, Or)):
        for child in node.children:
            yield from leaves(child)
    else:
        yield node


class Script(BaseModel):
    """Boolean spending condition over `arity` witness slots."""

    model_config = ConfigDict(frozen=True)

    node: ScriptNode
    arity: int = Field(ge=1)

    @model_validator(mode="after")
    def _slots_declared(self):
        for leaf in leaves(self.node):
            if leaf.slot >= self.arity:
                raise ValueError(f"slot {leaf.slot} not below declared arity {self.arity}")
        return self

    @classmethod
    def pay_to(cls, key_id: str) -> "Script":
        return cls(node=CheckSig(key_id=key_id, slot=0), arity=1)

    @property
    def owner(self) -> Optional[str]:
        """Key id for a plain single-signature script, None for protocol scripts."""
        if self.arity == 1 and isinstance(self.node, CheckSig):
            return self.node.key_id
        return None


# Transactions -----------------------------------------------------------------


class TxInput(BaseModel):
    model_config = ConfigDict(frozen=True)

    outpoint: Outpoint
    witness: Tuple[WitnessItem, ...] = ()


class TxOutput(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: int = Field(ge=0, le=U64_MAX)
    script: Script


class Transaction(BaseModel):
    model_config = ConfigDict(frozen=True)

    inputs: Tuple[TxInput, ...] = Field(min_length=1)
    outputs: Tuple[TxOutput, ...] = Field(min_length=1)
    lock_time: int = Field(default=0, ge=0, le=U32_MAX)

    def with_witness(self, index: int, witness: Sequence) -> "Transaction":
        inputs = list(self.inputs)
        inputs[index] = inputs[index].model_copy(update={"witness": tuple(witness)})
        return self.model_copy(update={"inputs": tuple(inputs)})

    @property
    def output_value(self) -> int:
        return sum(output.value for output in self.outputs)


def pay_to(key_id: str, value: int) -> TxOutput:
    return TxOutput(value=value, script=Script.pay_to(key_id))


def spend(
    outpoints: Sequence[Outpoint], outputs: Sequence[TxOutput], lock_time: int = 0
) -> Transaction:
    """Unsigned transaction: every witness list is empty until filled in."""
    return Transaction(
        inputs=tuple(TxInput(outpoint=outpoint) for outpoint in outpoints),
        outputs=tuple(outputs),
        lock_time=lock_time,
    )


def witness_items(tx: Transaction, input_index: int = 0) -> List:
    """Witness of one input with Pad items dropped."""
    return [item for item in tx.inputs[input_index].witness if not isinstance(item, Pad)]


# Canonical encoding -----------------------------------------------------------

_WITNESS_TAGS = {"sig": 0, "secret": 1, "omitted": 2, "pad": 3}
_NODE_TAGS = {"checksig": 0, "checkhash": 1, "and": 2, "or": 3}


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def _var(data: bytes) -> bytes:
    return _u32(len(data)) + data


def _list(parts: Sequence[bytes]) -> bytes:
    return _u32(len(parts)) + b"".join(parts)


def _encode_witness_item(item) -> bytes:
    tag = bytes([_WITNESS_TAGS[item.kind]])
    if isinstance(item, Sig):
        return tag + _var(item.signature.signer.encode()) + _var(item.signature.value)
    if isinstance(item, (Secret, Pad)):
        return tag + _var(item.value)
    return tag


def _encode_node(node) -> bytes:
    tag = bytes([_NODE_TAGS[node.kind]])
    if isinstance(node, CheckSig):
        return tag + _var(node.key_id.encode()) + _u32(node.slot)
    if isinstance(node, CheckHash):
        return tag + node.expected.value + _u32(node.slot)
    return tag + _list([_encode_node(child) for child in node.children])


def _encode_script(script: Script) -> bytes:
    return _encode_node(script.node) + _u32(script.arity)


def encode(tx: Transaction, include_witnesses: bool) -> bytes:
    """
    Field order: inputs, outputs, lock_time. Lists and variable-length fields
    carry 32-bit little-endian length prefixes. Without witnesses every input
    is encoded with an empty witness list.
    """
    inputs = [
        inp.outpoint.txid.value
        + _u32(inp.outpoint.index)
        + _list([_encode_witness_item(w) for w in inp.witness] if include_witnesses else [])
        for inp in tx.inputs
    ]
    outputs = [_u64(out.value) + _encode_script(out.script) for out in tx.outputs]
    return _list(inputs) + _list(outputs) + _u32(tx.lock_time)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ValueError("truncated transaction encoding")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def var(self) -> bytes:
        return self.take(self.u32())

    def tag(self) -> int:
        return self.take(1)[0]


def _decode_witness_item(reader: _Reader):
    tag = reader.tag()
    if tag == 0:
        signer = reader.var().decode()
        return Sig(signature=Signature(value=reader.var(), signer=signer))
    if tag == 1:
        return Secret(value=reader.var())
    if tag == 2:
        return OMITTED
    if tag == 3:
        return Pad(value=reader.var())
    raise ValueError(f"unknown witness tag {tag}")


def _decode_node(reader: _Reader):
    tag = reader.tag()
    if tag == 0:
        key_id = reader.var().decode()
        return CheckSig(key_id=key_id, slot=reader.u32())
    if tag == 1:
        expected = Digest(value=reader.take(32))
        return CheckHash(expected=expected, slot=reader.u32())
    if tag in (2, 3):
        children = tuple(_decode_node(reader) for _ in range(reader.u32()))
        return And(children=children) if tag == 2 else Or(children=children)
    raise ValueError(f"unknown script tag {tag}")


def decode(data: bytes) -> Transaction:
    """Inverse of encode(tx, include_witnesses=True)."""
    reader = _Reader(data)
    inputs = []
    for _ in range(reader.u32()):
        txid_value = Digest(value=reader.take(32))
        index = reader.u32()
        witness = tuple(_decode_witness_item(reader) for _ in range(reader.u32()))
        inputs.append(TxInput(outpoint=Outpoint(txid=txid_value, index=index), witness=witness))
    outputs = []
    for _ in range(reader.u32()):
        value = reader.u64()
        node = _decode_node(reader)
        outputs.append(TxOutput(value=value, script=Script(node=node, arity=reader.u32())))
    lock_time = reader.u32()
    if reader.pos != len(data):
        raise ValueError("trailing bytes after transaction encoding")
    return Transaction(inputs=tuple(inputs), outputs=tuple(outputs), lock_time=lock_time)


def txid(tx: Transaction) -> Digest:
    return crypto.hash(encode(tx, True))


def body_digest(tx: Transaction) -> Digest:
    return crypto.hash(encode(tx, False))


def sign_body(tx: Transaction, key: KeyPair) -> Sig:
    """Witness item carrying key's signature over the body of tx."""
    return Sig(signature=key.sign(body_digest(tx)))


def malleate(tx: Transaction, padding: bytes) -> Transaction:
    """Appends Pad(padding) to the witness of input 0."""
    if not padding:
        raise EmptyPadding("malleation padding must be non-empty")
    first = tx.inputs[0]
    padded = first.model_copy(update={"witness": first.witness + (Pad(value=padding),)})
    return tx.model_copy(update={"inputs": (padded,) + tx.inputs[1:]})


# Script evaluation ------------------------------------------------------------


def _eval_node(node, items: List, body: Digest) -> bool:
    if isinstance(node, (And, Or)):
        results = [_eval_node(child, items, body) for child in node.children]
        return all(results) if isinstance(node, And) else any(results)

    if node.slot >= len(items):
        raise SlotOutOfRange(node.slot, len(items))
    item = items[node.slot]

    if isinstance(node, CheckSig):
        if not isinstance(item, Sig):
            return False
        public_part = crypto.public_part(node.key_id)
        return public_part is not None and crypto.verify(public_part, body, item.signature)

    return isinstance(item, Secret) and crypto.hash(item.value) == node.expected


def eval_script(script: Script, witness: Sequence, body: Digest) -> bool:
    """Evaluates script against the Pad-stripped witness; both combinators are strict."""
    items = [item for item in witness if not isinstance(item, Pad)]
    return _eval_node(script.node, items, body)


# Validation -------------------------------------------------------------------


class ErrorKind(Enum):
    """Enum for transaction validation failures, in checking order."""

    UNKNOWN_INPUT = "UnknownInput"
    ALREADY_SPENT = "AlreadySpent"
    MALFORMED_WITNESS = "MalformedWitness"
    SCRIPT_FAILED = "ScriptFailed"
    VALUE_MISMATCH = "ValueMismatch"
    LOCK_TIME_NOT_REACHED = "LockTimeNotReached"

    def __str__(self):
        return self.value


class ValidationError(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ErrorKind
    input_index: Optional[int] = None

    def __str__(self):
        if self.input_index is None:
            return str(self.kind)
        return f"{self.kind}({self.input_index})"


class UtxoView(Protocol):
    def lookup(self, outpoint: Outpoint) -> Optional[TxOutput]: ...

    def is_spent(self, outpoint: Outpoint) -> bool: ...


class UtxoSet:
    """Minimal in-memory UtxoView, enough to validate transactions outside a ledger."""

    def __init__(self):
        self.unspent: Dict[Outpoint, TxOutput] = {}
        self.spent: Set[Outpoint] = set()

    def lookup(self, outpoint: Outpoint) -> Optional[TxOutput]:
        return self.unspent.get(outpoint)

    def is_spent(self, outpoint: Outpoint) -> bool:
        return outpoint in self.spent

    def add(self, tx: Transaction) -> Digest:
        """Registers the outputs of tx without checking it."""
        tx_hash = txid(tx)
        for index, output in enumerate(tx.outputs):
            self.unspent[Outpoint(txid=tx_hash, index=index)] = output
        return tx_hash

    def apply(self, tx: Transaction) -> Digest:
        for inp in tx.inputs:
            self.unspent.pop(inp.outpoint, None)
            self.spent.add(inp.outpoint)
        return self.add(tx)


def validate(tx: Transaction, utxo: UtxoView, current_round: int) -> Optional[ValidationError]:
    """None when tx may be included at current_round, else the first failing check."""
    for index, inp in enumerate(tx.inputs):
        if utxo.lookup(inp.outpoint) is None and not utxo.is_spent(inp.outpoint):
            return ValidationError(kind=ErrorKind.UNKNOWN_INPUT, input_index=index)

    seen: Set[Outpoint] = set()
    for index, inp in enumerate(tx.inputs):
        if utxo.is_spent(inp.outpoint) or inp.outpoint in seen:
            return ValidationError(kind=ErrorKind.ALREADY_SPENT, input_index=index)
        seen.add(inp.outpoint)

    spent_outputs = [utxo.lookup(inp.outpoint) for inp in tx.inputs]

    for index, (inp, output) in enumerate(zip(tx.inputs, spent_outputs)):
        stripped = [item for item in inp.witness if not isinstance(item, Pad)]
        if len(stripped) != output.script.arity:
            return ValidationError(kind=ErrorKind.MALFORMED_WITNESS, input_index=index)

    body = body_digest(tx)
    for index, (inp, output) in enumerate(zip(tx.inputs, spent_outputs)):
        if not eval_script(output.script, inp.witness, body):
            logger.log(TRACE, "script failed on input %d of %s", index, body.short())
            return ValidationError(kind=ErrorKind.SCRIPT_FAILED, input_index=index)

    if sum(output.value for output in spent_outputs) != tx.output_value:
        return ValidationError(kind=ErrorKind.VALUE_MISMATCH)

    if tx.lock_time > current_round:
        return ValidationError(kind=ErrorKind.LOCK_TIME_NOT_REACHED)

    return None
