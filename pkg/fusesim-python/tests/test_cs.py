import pytest

from fusesim import crypto
from fusesim.adversary import NetworkStrategy, PartyStrategy
from fusesim.chain import ChainParams, genesis
from fusesim.common import Role
from fusesim.errors import NotASecret, NotConfirmed, ProtocolError
from fusesim.protocols.cs import (
    CsPhase,
    CsRun,
    cs_commit,
    cs_fuse,
    cs_open,
    extract_secret,
)
from fusesim.txmodel import ErrorKind, body_digest, txid

SECRET = crypto.derive_secret(0, "test/s")


def start(keys, params, network=None):
    a, b = keys[Role.A], keys[Role.B]
    ledger = genesis([(a.key_id, params.d)], params, network=network or NetworkStrategy.honest())
    session = cs_commit(ledger, a, b, params.d, params.t, SECRET, ledger.funding_for(a.key_id)[0])
    return ledger, session


def advance_to(ledger, session, round_):
    while ledger.current_round < round_:
        ledger.advance_round()
        session.committer_turn()
        session.recipient_turn(claim_from=10**9)


@pytest.mark.parametrize("malleate", [False, True])
def test_open_reveals_secret(keys, params, malleate):
    """Commit, Fuse signature and Open work whether or not Commit was malleated."""
    network = NetworkStrategy(malleate=malleate)
    ledger, session = start(keys, params, network)
    advance_to(ledger, session, 2)

    assert session.phase is CsPhase.FUSE_SIGNED
    assert (ledger.confirmed_txid(session.commit_body) != txid(session.commit_tx)) == malleate

    open_tx = cs_open(ledger, session)
    advance_to(ledger, session, 3)

    assert session.phase is CsPhase.OPENED
    assert extract_secret(ledger, body_digest(open_tx), 2) == SECRET
    assert session.revealed_secret() == SECRET
    assert ledger.balance(keys[Role.A].key_id) == params.d


def test_fuse_under_malleation(keys, params):
    """Under MalleateAll the recipient still collects d via the Fuse at round t."""
    ledger, session = start(keys, params, NetworkStrategy.malleate_all())
    advance_to(ledger, session, params.t)

    fuse = cs_fuse(ledger, session)
    assert fuse.lock_time == params.t
    ledger.advance_round()
    session.update()

    assert session.phase is CsPhase.FUSED
    assert ledger.balance(keys[Role.B].key_id) == params.d
    assert session.revealed_secret() is None


def test_early_fuse_rejected(keys, params):
    """A Fuse broadcast before t is dropped with LockTimeNotReached."""
    ledger, session = start(keys, params)
    advance_to(ledger, session, 2)

    fuse = cs_fuse(ledger, session)
    ledger.advance_round()
    _, error = ledger.rejection(body_digest(fuse))
    assert str(error) == "LockTimeNotReached"
    assert session.commit_unspent


@pytest.mark.parametrize("order, winner", [("fifo", "open"), ("lifo", "fuse"), ("txid", None)])
def test_open_races_fuse_after_t(keys, params, order, winner):
    """Open and Fuse both pending after t: exactly one spends Commit, the other is AlreadySpent."""
    ledger, session = start(keys, params, NetworkStrategy(conflict_order=order))
    advance_to(ledger, session, params.t)

    bodies = {
        "open": body_digest(cs_open(ledger, session)),
        "fuse": body_digest(cs_fuse(ledger, session)),
    }
    ledger.advance_round()
    session.update()

    confirmed = [name for name, body in bodies.items() if ledger.confirmed_by_body(body)]
    assert len(confirmed) == 1
    assert winner is None or confirmed == [winner]
    (loser,) = set(bodies) - set(confirmed)
    _, error = ledger.rejection(bodies[loser])
    assert error.kind is ErrorKind.ALREADY_SPENT
    assert session.phase is (CsPhase.OPENED if confirmed == ["open"] else CsPhase.FUSED)
    a, b = keys[Role.A].key_id, keys[Role.B].key_id
    assert ledger.balance(a) + ledger.balance(b) == params.d
    assert ledger.total_value() == ledger.genesis_total


def test_open_and_fuse_preconditions(keys, params):
    """Open needs a confirmed Commit; Fuse needs a verified signature."""
    ledger, session = start(keys, params)
    with pytest.raises(ProtocolError):
        cs_open(ledger, session)
    with pytest.raises(ProtocolError):
        cs_fuse(ledger, session)


def test_bad_fuse_signature_aborts(keys, params):
    """The recipient aborts on an incorrect Fuse signature; the committer can still open."""
    ledger, session = start(keys, params)
    ledger.advance_round()
    session.update()
    digest = body_digest(session.build_fuse())
    session.send_fuse_signature(crypto.garbage_signature(keys[Role.A].key_id, digest))
    session.recipient_turn()

    assert session.phase is CsPhase.ABORTED
    assert session.abort_reason == "the fuse signature is incorrect"
    assert session.can_open
    cs_open(ledger, session)


def test_missing_fuse_signature_aborts(keys, params):
    """No Fuse signature one round after Commit confirmed means abort."""
    ledger, session = start(keys, params)
    for _ in range(3):
        ledger.advance_round()
        session.recipient_turn()

    assert session.phase is CsPhase.ABORTED
    assert session.abort_reason == "fuse signature missing"


def test_extract_secret_errors(keys, params):
    """Unconfirmed bodies and secret-free slots raise."""
    ledger, session = start(keys, params)
    with pytest.raises(NotConfirmed):
        extract_secret(ledger, session.commit_body, 2)
    ledger.advance_round()
    with pytest.raises(NotASecret):
        extract_secret(ledger, session.commit_body, 0)


@pytest.mark.parametrize("max_bb", [1, 2])
@pytest.mark.parametrize("malleate", [False, True])
def test_honest_run(keys, max_bb, malleate):
    """Honest committer opens before t and keeps its deposit."""
    params = ChainParams(d=10, t=12, max_bb=max_bb)
    network = NetworkStrategy(max_bb=max_bb, malleate=malleate, delay="max")
    ledger = genesis(CsRun.allocations(keys, params.d), params, network=network)
    outcome = CsRun(ledger, keys).run()

    assert outcome.terminal_phase == "Opened"
    assert outcome.deltas == {"a": 0, "b": 0}
    assert "cs.open" in outcome.labels()
    assert ledger.total_value() == ledger.genesis_total


@pytest.mark.parametrize("max_bb", [1, 2])
@pytest.mark.parametrize("malleate", [False, True])
def test_committer_abort_pays_recipient(keys, max_bb, malleate):
    """A committer that never opens loses exactly d to the recipient by t + 2*max_bb."""
    params = ChainParams(d=10, t=12, max_bb=max_bb)
    network = NetworkStrategy(max_bb=max_bb, malleate=malleate, delay="max")
    ledger = genesis(CsRun.allocations(keys, params.d), params, network=network)
    parties = {Role.A: PartyStrategy(role=Role.A, abort_at="open")}
    outcome = CsRun(ledger, keys, parties=parties).run()

    assert outcome.terminal_phase == "Fused"
    assert outcome.deltas == {"a": -10, "b": 10}
    fuse = next(item for item in outcome.confirmed if item.label == "cs.fuse")
    assert fuse.round <= params.t + 2 * max_bb
    assert ledger.trace.events("skip")[0].detail == "open"
