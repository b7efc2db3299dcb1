import pytest

from fusesim import crypto
from fusesim.adversary import ConflictOrder, NetworkStrategy, enumerate_strategies
from fusesim.chain import ChainParams, Trace, TraceRecord, genesis
from fusesim.common import Role
from fusesim.errors import EmptyAllocation, SubstitutionRejected
from fusesim.protocols import ProtocolName, protocol_class
from fusesim.txmodel import (
    And,
    CheckSig,
    ErrorKind,
    Script,
    TxOutput,
    body_digest,
    pay_to,
    sign_body,
    spend,
    txid,
)


def signed(ledger, key, outputs, lock_time=0):
    outpoint = ledger.funding_for(key.key_id)[0]
    unsigned = spend([outpoint], outputs, lock_time=lock_time)
    return unsigned.with_witness(0, [sign_body(unsigned, key)])


def test_genesis(keys, params):
    """Genesis confirms one funding output per allocation at round 0."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10), (b.key_id, 7)], params)

    assert ledger.current_round == 0
    assert ledger.balance(a.key_id) == 10
    assert ledger.balance(b.key_id) == 7
    assert ledger.genesis_total == ledger.total_value() == 17
    assert len(ledger.funding_for(a.key_id)) == 1
    assert [r.event for r in ledger.trace.records] == ["confirm", "confirm"]


def test_genesis_errors(keys, params):
    """Empty or non-positive allocations are rejected."""
    with pytest.raises(EmptyAllocation):
        genesis([], params)
    with pytest.raises(ValueError):
        genesis([(keys[Role.A].key_id, 0)], params)


def test_chain_params_margin():
    """t must exceed 3*max_bb."""
    with pytest.raises(ValueError):
        ChainParams(t=6, max_bb=2)
    assert ChainParams(t=7, max_bb=2).settle_round == 11


def test_broadcast_confirms_next_round(keys, params):
    """An honest network includes a valid transaction one round later."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params)
    tx = signed(ledger, a, [pay_to(b.key_id, 10)])

    ledger.broadcast(tx, role="a:pay")
    assert ledger.pending(body_digest(tx))
    results = ledger.advance_round()

    assert results == [(tx, None)]
    assert ledger.confirmed_txid(body_digest(tx)) == txid(tx)
    assert ledger.balance(b.key_id) == 10
    assert ledger.confirmation(body_digest(tx)).role == "a:pay"
    assert not ledger.mempool


def test_malleating_network(keys, params):
    """A malleating network confirms a twin: same body, other txid."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params, network=NetworkStrategy.malleate_all())
    tx = signed(ledger, a, [pay_to(b.key_id, 10)])

    ledger.broadcast(tx)
    ledger.advance_round()

    confirmed = ledger.confirmed_txid(body_digest(tx))
    assert confirmed is not None
    assert confirmed != txid(tx)
    assert ledger.trace.events("broadcast")[0].detail == "delay=1,substituted"

    round_, twin = ledger.confirmed_by_body(body_digest(tx))
    assert round_ == 1
    assert body_digest(twin) == body_digest(tx)
    assert txid(twin) == confirmed
    assert ledger.confirmed_by_body(crypto.hash(b"never broadcast")) is None


def test_max_delay(keys):
    """Under max delay a transaction waits exactly max_bb rounds."""
    params = ChainParams(t=14, max_bb=2)
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params, network=NetworkStrategy.max_delay(2))
    tx = signed(ledger, a, [pay_to(b.key_id, 10)])

    ledger.broadcast(tx)
    ledger.advance_round()
    assert ledger.confirmed_txid(body_digest(tx)) is None
    ledger.advance_round()
    assert ledger.confirmation(body_digest(tx)).round == 2


def test_network_must_match_chain(keys, params):
    """The network's max_bb must equal the chain's."""
    with pytest.raises(ValueError):
        genesis([(keys[Role.A].key_id, 10)], params, network=NetworkStrategy.honest(2))


@pytest.mark.parametrize("order,winner", [("fifo", 0), ("lifo", 1)])
def test_double_spend_first_wins(keys, params, order, winner):
    """Of two conflicting spends, the first processed wins; the other is AlreadySpent."""
    a, b = keys[Role.A], keys[Role.B]
    network = NetworkStrategy(conflict_order=ConflictOrder(order))
    ledger = genesis([(a.key_id, 10)], params, network=network)
    spends = [
        signed(ledger, a, [pay_to(b.key_id, 10)]),
        signed(ledger, a, [pay_to(a.key_id, 10)]),
    ]
    for tx in spends:
        ledger.broadcast(tx)
    ledger.advance_round()

    loser = spends[1 - winner]
    assert ledger.confirmed_txid(body_digest(spends[winner])) is not None
    assert ledger.confirmed_txid(body_digest(loser)) is None
    round_, error = ledger.rejection(body_digest(loser))
    assert round_ == 1
    assert error.kind is ErrorKind.ALREADY_SPENT


def test_lock_time_rejection(keys, params):
    """Early time-locked transactions are dropped, not kept."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params)
    tx = signed(ledger, a, [pay_to(b.key_id, 10)], lock_time=5)

    ledger.broadcast(tx)
    ((_, error),) = ledger.advance_round()

    assert error.kind is ErrorKind.LOCK_TIME_NOT_REACHED
    assert not ledger.pending(body_digest(tx))
    assert ledger.trace.events("reject")[0].detail == "LockTimeNotReached"


def test_substitution_with_new_body_rejected(keys, params):
    """A substitution that changes the body never reaches the mempool."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params)
    tx = signed(ledger, a, [pay_to(b.key_id, 10)])
    other = signed(ledger, a, [pay_to(a.key_id, 10)])

    with pytest.raises(ValueError):
        NetworkStrategy(substitutions={body_digest(tx).hex(): other})

    ledger.network = NetworkStrategy.model_construct(
        name="forged", max_bb=1, substitutions={body_digest(tx).hex(): other}
    )
    with pytest.raises(SubstitutionRejected):
        ledger.broadcast(tx)
    assert not ledger.mempool


def test_locked_outputs(keys, params):
    """Outputs with protocol scripts count as locked, not as anyone's balance."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params)
    joint = Script(
        node=And(children=(CheckSig(key_id=a.key_id, slot=0), CheckSig(key_id=b.key_id, slot=1))),
        arity=2,
    )
    ledger.broadcast(signed(ledger, a, [TxOutput(value=10, script=joint)]))
    ledger.advance_round()

    assert ledger.balance(a.key_id) == 0
    assert len(ledger.locked_outputs()) == 1
    assert ledger.total_value() == ledger.genesis_total


def test_trace_round_trip(request, output_dir, keys, params):
    """Trace records survive a write and a read."""
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, 10)], params)
    ledger.broadcast(signed(ledger, a, [pay_to(b.key_id, 10)]), role="a:pay")
    ledger.advance_round()

    output_file = f"{output_dir}/{request.node.name}.trace"
    with open(output_file, "w") as f:
        f.write(ledger.trace.dumps("records"))

    loaded = Trace.loads(open(output_file).read())
    assert loaded == ledger.trace
    assert loaded.records[-1].event == "confirm"
    assert "broadcast" in ledger.trace.dumps("text")


def test_trace_record_format():
    """Records are six tab-separated fields with - for empty ones."""
    record = TraceRecord(round=3, event="skip", role="a", detail="open")
    assert record.to_line() == "3\tskip\ta\t-\t-\topen"
    assert TraceRecord.from_line(record.to_line()) == record
    with pytest.raises(ValueError):
        TraceRecord.from_line("3\tskip")


@pytest.mark.parametrize("protocol", list(ProtocolName))
def test_confirmed_history_has_no_double_spend(keys, params, protocol):
    """Across every enumerated run no outpoint is spent twice and no body confirms twice."""
    run_class = protocol_class(protocol)
    for network, party_a, party_b in enumerate_strategies(params.max_bb, str(protocol)):
        ledger = genesis(run_class.allocations(keys, params.d), params, network=network, seed=5)
        run_class(ledger, keys, parties={Role.A: party_a, Role.B: party_b}, seed=5).run()

        spent = [item.outpoint for c in ledger.confirmed for item in c.tx.inputs]
        bodies = [c.body for c in ledger.confirmed]
        assert len(spent) == len(set(spent)), (network, party_a, party_b)
        assert len(bodies) == len(set(bodies)), (network, party_a, party_b)
        assert ledger.total_value() == ledger.genesis_total
