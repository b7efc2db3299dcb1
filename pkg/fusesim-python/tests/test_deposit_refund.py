import pytest

from fusesim.adversary import NetworkStrategy, PartyStrategy
from fusesim.chain import ChainParams, genesis
from fusesim.common import Role
from fusesim.protocols.cs import CsPhase
from fusesim.protocols.deposit_refund import (
    DepositPhase,
    DepositRefundSession,
    deposit_refund,
    joint_branch,
)
from fusesim.txmodel import And, CheckSig, txid, witness_items


def ledger_for(keys, params, malleate=True, delay=1):
    network = NetworkStrategy(max_bb=params.max_bb, malleate=malleate, delay=delay)
    allocations = DepositRefundSession.allocations(keys, params.d)
    return genesis(allocations, params, network=network)


def balances(ledger, keys):
    return {role: ledger.balance(keys[role].key_id) for role in Role}


@pytest.mark.parametrize("malleate", [False, True])
def test_refund_after_open(keys, params, malleate):
    """B opens the commitment to r, so A spends her Deposit back alone."""
    ledger = ledger_for(keys, params, malleate)
    session = deposit_refund(ledger, keys[Role.A], keys[Role.B], params.d, params.t)

    assert session.terminal_phase == "deposit=Refunded,cs=Opened"
    assert balances(ledger, keys) == {Role.A: params.d, Role.B: params.d}
    assert ledger.total_value() == ledger.genesis_total

    fuse = ledger.spender_of(session.deposit_outpoint)
    assert fuse.role == "a:fuse"
    assert witness_items(fuse.tx)[1].value == session.cs.secret
    if malleate:
        assert session.deposit_outpoint.txid != txid(session.deposit_tx)


@pytest.mark.parametrize("max_bb", [1, 2])
def test_committer_never_opens(keys, max_bb):
    """If B keeps r back, A collects B's d through the commitment's own Fuse."""
    params = ChainParams(d=10, t=12, max_bb=max_bb)
    ledger = ledger_for(keys, params, malleate=True, delay="max")
    parties = {Role.B: PartyStrategy(role=Role.B, abort_at="cs_open")}
    session = deposit_refund(
        ledger, keys[Role.A], keys[Role.B], params.d, params.t, parties=parties
    )

    assert session.cs.phase is CsPhase.FUSED
    assert balances(ledger, keys) == {Role.A: params.d, Role.B: 0}
    assert len(ledger.locked_outputs()) == 1
    assert ledger.total_value() == ledger.genesis_total


def test_bad_signature_stops_deposit(keys, params):
    """A garbage Fuse signature from B aborts before A deposits anything."""
    ledger = ledger_for(keys, params)
    parties = {Role.B: PartyStrategy(role=Role.B, send_bad_signature=True)}
    session = deposit_refund(
        ledger, keys[Role.A], keys[Role.B], params.d, params.t, parties=parties
    )

    assert session.phase is DepositPhase.ABORTED
    assert session.deposit_tx is None
    assert session.cs.phase is CsPhase.OPENED
    assert balances(ledger, keys) == {Role.A: params.d, Role.B: params.d}


def test_missing_signature_stops_deposit(keys, params):
    """Without B's Fuse signature A never deposits."""
    ledger = ledger_for(keys, params, malleate=False)
    parties = {Role.B: PartyStrategy(role=Role.B, abort_at="cs_fuse_sig")}
    session = deposit_refund(
        ledger, keys[Role.A], keys[Role.B], params.d, params.t, parties=parties
    )

    assert session.terminal_phase == "deposit=Aborted,cs=Opened"
    assert balances(ledger, keys) == {Role.A: params.d, Role.B: params.d}


def test_custom_extra_branch(keys, params):
    """The enclosing contract's branch may use more slots; the Fuse pads them."""
    a, b = keys[Role.A].key_id, keys[Role.B].key_id
    extra = And(children=(CheckSig(key_id=a, slot=1), CheckSig(key_id=b, slot=2)))
    ledger = ledger_for(keys, params)
    session = deposit_refund(
        ledger, keys[Role.A], keys[Role.B], params.d, params.t, extra_branch=extra
    )

    assert session.terminal_phase == "deposit=Refunded,cs=Opened"
    assert len(witness_items(ledger.spender_of(session.deposit_outpoint).tx)) == 3


def test_default_branch_is_joint(keys):
    """Without an explicit branch the Deposit keeps a 2-of-2 path."""
    branch = joint_branch(keys[Role.A].key_id, keys[Role.B].key_id)
    assert [leaf.slot for leaf in branch.children] == [0, 1]
