import pytest

from fusesim.adversary import NetworkStrategy, PartyStrategy
from fusesim.chain import genesis
from fusesim.common import Role
from fusesim.protocols.legacy_refund import LegacyRefundSession, legacy_fuse_flow
from fusesim.txmodel import ErrorKind


def ledger_for(keys, params, malleate):
    allocations = LegacyRefundSession.allocations(keys, params.d)
    return genesis(allocations, params, network=NetworkStrategy(malleate=malleate))


def test_refund_without_malleation(keys, params):
    """The pre-signed refund works when the Deposit keeps its predicted txid."""
    ledger = ledger_for(keys, params, malleate=False)
    report = legacy_fuse_flow(ledger, keys[Role.A], keys[Role.B], params.d, params.t)

    assert report.refund_succeeded
    assert report.error_kind is None
    assert not report.requires_cooperation
    assert ledger.balance(keys[Role.A].key_id) == params.d


def test_malleated_deposit_needs_cooperation(keys, params):
    """After malleation the refund is UnknownInput until B signs again."""
    ledger = ledger_for(keys, params, malleate=True)
    report = legacy_fuse_flow(ledger, keys[Role.A], keys[Role.B], params.d, params.t)

    assert report.refund_succeeded
    assert report.error_kind is ErrorKind.UNKNOWN_INPUT
    assert report.requires_cooperation
    assert ledger.trace.events("reject")[0].detail == "UnknownInput(0)"


def test_malleated_deposit_stuck_without_cooperation(keys, params):
    """If B refuses to sign again A's deposit stays locked."""
    ledger = ledger_for(keys, params, malleate=True)
    report = legacy_fuse_flow(
        ledger, keys[Role.A], keys[Role.B], params.d, params.t, cooperate=False
    )

    assert not report.refund_succeeded
    assert report.error_kind is ErrorKind.UNKNOWN_INPUT
    assert not report.requires_cooperation
    assert ledger.balance(keys[Role.A].key_id) == 0
    assert len(ledger.locked_outputs()) == 1


@pytest.mark.parametrize("malleate", [False, True])
def test_no_cosignature_no_deposit(keys, params, malleate):
    """A never deposits before holding B's signature on the refund."""
    ledger = ledger_for(keys, params, malleate)
    session = LegacyRefundSession(
        ledger, keys, parties={Role.B: PartyStrategy(role=Role.B, abort_at="cosign")}
    )
    outcome = session.run()

    assert outcome.terminal_phase == "NotDeposited"
    assert outcome.deltas == {"a": 0, "b": 0}
