import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusesim import crypto
from fusesim.crypto import Digest, IdealizedScheme


def test_hash_is_sha256():
    """hash of the empty string is the SHA-256 test vector."""
    assert (
        crypto.hash(b"").hex()
        == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_digest_requires_32_bytes():
    """Digest rejects values of the wrong size."""
    with pytest.raises(ValueError):
        Digest(value=b"\x00" * 31)
    assert Digest.from_hex("00" * 32) == Digest.zero()


def test_keygen_deterministic():
    """Same seed and label give the same key pair."""
    first = crypto.keygen(7, "A")
    second = crypto.keygen(7, "A")
    other = crypto.keygen(8, "A")

    assert first == second
    assert first.key_id != other.key_id
    assert first.key_id.startswith("A:")


def test_sign_verify():
    """A signature verifies for its own key and digest only."""
    alice = crypto.keygen(1, "A")
    bob = crypto.keygen(1, "B")
    digest = crypto.hash(b"body")
    signature = alice.sign(digest)

    assert crypto.verify(alice.public_part, digest, signature)
    assert not crypto.verify(bob.public_part, digest, signature)
    assert not crypto.verify(alice.public_part, crypto.hash(b"other"), signature)


def test_garbage_signature_never_verifies():
    """A garbage signature is well formed but fails verification."""
    alice = crypto.keygen(2, "A")
    digest = crypto.hash(b"body")
    garbage = crypto.garbage_signature(alice.key_id, digest)

    assert len(garbage.value) == 32
    assert not crypto.verify(alice.public_part, digest, garbage)


def test_unregistered_key_cannot_sign():
    """Only keys produced by keygen can sign with the idealized scheme."""
    with pytest.raises(KeyError):
        crypto.sign(b"\x01" * 32, crypto.hash(b"x"))


def test_use_scheme_swaps_registry():
    """Keys registered before a scheme switch are unknown to the new scheme."""
    alice = crypto.keygen(3, "A")
    previous = crypto.use_scheme(IdealizedScheme())
    try:
        assert crypto.public_part(alice.key_id) is None
        assert crypto.current_scheme() is not previous
    finally:
        crypto.use_scheme(previous)
    assert crypto.public_part(alice.key_id) == alice.public_part


def test_derive_secret():
    """Secrets depend on both seed and label."""
    assert crypto.derive_secret(0, "s") == crypto.derive_secret(0, "s")
    assert crypto.derive_secret(0, "s") != crypto.derive_secret(1, "s")
    assert crypto.derive_secret(0, "s") != crypto.derive_secret(0, "r")


@settings(max_examples=200, deadline=None)
@given(data=st.binary(max_size=64), seed=st.integers(min_value=0, max_value=2**64 - 1))
def test_signature_binds_digest(data, seed):
    """Signatures over distinct digests differ."""
    key = crypto.keygen(seed, "P")
    digest = crypto.hash(data)
    other = crypto.hash(data + b"\x00")

    assert key.sign(digest) != key.sign(other)
    assert crypto.verify(key.public_part, digest, key.sign(digest))
