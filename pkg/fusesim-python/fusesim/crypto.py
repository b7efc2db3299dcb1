"""
Hashing and an idealized, deterministic signature scheme.

Signatures are computed over a body digest only. Nothing here ever sees the
witness part of a transaction, which is what leaves room for malleation.
"""

import hashlib
import logging
from typing import Dict, Optional, Protocol, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from fusesim.common import TRACE, short_hex

logger = logging.getLogger(__name__)

DIGEST_SIZE = 32
SEED_MASK = (1 << 64) - 1


class Digest(BaseModel):
    """32-byte output of the hash function; renders as lowercase hex."""

    model_config = ConfigDict(frozen=True)

    value: bytes

    @field_validator("value")
    @classmethod
    def _exact_size(cls, value: bytes) -> bytes:
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return value

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        return cls(value=bytes.fromhex(text))

    @classmethod
    def zero(cls) -> "Digest":
        return cls(value=bytes(DIGEST_SIZE))

    def hex(self) -> str:
        return self.value.hex()

    def short(self) -> str:
        return short_hex(self.value)

    def __str__(self):
        return self.hex()


class KeyPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    key_id: str
    public_part: bytes
    private_part: bytes

    def __repr__(self):
        return f"KeyPair(key_id={self.key_id!r})"

    def sign(self, digest: Digest) -> "Signature":
        return sign(self.private_part, digest)


class Signature(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: bytes
    signer: str


class SignatureScheme(Protocol):
    """What the rest of the package needs from a signature scheme."""

    name: str

    def register(self, pair: KeyPair) -> None: ...

    def public_part(self, key_id: str) -> Optional[bytes]: ...

    def sign(self, private_part: bytes, digest: Digest) -> Signature: ...

    def verify(self, public_part: bytes, digest: Digest, sig: Signature) -> bool: ...


class IdealizedScheme:
    """
    signature = H(private_part || digest). Verification looks the private part
    up in a registry filled by keygen, so only registered keys ever verify.
    """

    name = "idealized"

    def __init__(self):
        self._by_public: Dict[bytes, Tuple[str, bytes]] = {}
        self._by_private: Dict[bytes, str] = {}
        self._by_id: Dict[str, bytes] = {}

    def register(self, pair: KeyPair) -> None:
        self._by_public[pair.public_part] = (pair.key_id, pair.private_part)
        self._by_private[pair.private_part] = pair.key_id
        self._by_id[pair.key_id] = pair.public_part

    def public_part(self, key_id: str) -> Optional[bytes]:
        return self._by_id.get(key_id)

    def _raw(self, private_part: bytes, digest: Digest) -> bytes:
        return hashlib.sha256(b"fusesim/sig" + private_part + digest.value).digest()

    def sign(self, private_part: bytes, digest: Digest) -> Signature:
        signer = self._by_private.get(private_part)
        if signer is None:
            raise KeyError("private part was not produced by keygen")
        return Signature(value=self._raw(private_part, digest), signer=signer)

    def verify(self, public_part: bytes, digest: Digest, sig: Signature) -> bool:
        entry = self._by_public.get(public_part)
        if entry is None or len(sig.value) != DIGEST_SIZE:
            return False
        key_id, private_part = entry
        if sig.signer != key_id:
            return False
        return sig.value == self._raw(private_part, digest)


_scheme: SignatureScheme = IdealizedScheme()


def use_scheme(scheme: SignatureScheme) -> SignatureScheme:
    """Installs another signature scheme and returns the previous one."""
    global _scheme
    previous, _scheme = _scheme, scheme
    logger.debug("signature scheme switched to %s", scheme.name)
    return previous


def current_scheme() -> SignatureScheme:
    return _scheme


def hash(data: bytes) -> Digest:
    return Digest(value=hashlib.sha256(data).digest())


def _seed_bytes(seed: int) -> bytes:
    return (seed & SEED_MASK).to_bytes(8, "little")


def keygen(seed: int, label: str) -> KeyPair:
    """Deterministic key pair for (seed, label); registered with the active scheme."""
    material = _seed_bytes(seed) + label.encode()
    private_part = hashlib.sha256(b"fusesim/key" + material).digest()
    public_part = hashlib.sha256(b"fusesim/pub" + private_part).digest()
    key_id = f"{label}:{hashlib.sha256(material).hexdigest()[:12]}"

    pair = KeyPair(key_id=key_id, public_part=public_part, private_part=private_part)
    _scheme.register(pair)
    logger.log(TRACE, "keygen %s", key_id)
    return pair


def public_part(key_id: str) -> Optional[bytes]:
    return _scheme.public_part(key_id)


def sign(private_part: bytes, digest: Digest) -> Signature:
    return _scheme.sign(private_part, digest)


def verify(public_part: bytes, digest: Digest, sig: Signature) -> bool:
    return _scheme.verify(public_part, digest, sig)


def garbage_signature(signer: str, digest: Digest) -> Signature:
    """A well-formed signature that never verifies; used by misbehaving parties."""
    value = hashlib.sha256(b"fusesim/garbage" + digest.value).digest()
    return Signature(value=value, signer=signer)


def derive_secret(seed: int, label: str) -> bytes:
    """Deterministic stand-in for a party drawing a random string."""
    return hashlib.sha256(b"fusesim/secret" + _seed_bytes(seed) + label.encode()).digest()
