"""Pluggable signature schemes.

The default scheme derives everything from sha256 and is deterministic and
fast, which keeps large simulator runs reproducible.  It binds signatures to
the signer's public key but is NOT unforgeable against an adversary who
constructs signatures directly; none of the simulated adversaries do.  Swap in
:class:`Ed25519Scheme` when real unforgeability matters.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: bytes


class SignatureScheme(ABC):
    name: str

    @abstractmethod
    def keypair(self, seed: bytes) -> KeyPair: ...

    @abstractmethod
    def sign(self, secret: bytes, msg: bytes) -> bytes: ...

    @abstractmethod
    def verify(self, pubkey: bytes, msg: bytes, sig: bytes) -> bool: ...


class HashTagScheme(SignatureScheme):
    """Simulation-grade scheme: sig = sha256("sig" | pubkey | msg)."""

    name = "hashtag"

    def keypair(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"sk" + seed).digest()
        return KeyPair(secret=secret, public=self._public(secret))

    @staticmethod
    def _public(secret: bytes) -> bytes:
        return hashlib.sha256(b"pk" + secret).digest()

    def sign(self, secret: bytes, msg: bytes) -> bytes:
        pub = self._public(secret)
        return hashlib.sha256(b"sig" + pub + msg).digest()

    def verify(self, pubkey: bytes, msg: bytes, sig: bytes) -> bool:
        return sig == hashlib.sha256(b"sig" + pubkey + msg).digest()


class Ed25519Scheme(SignatureScheme):
    """Real asymmetric signatures; deterministic per RFC 8032."""

    name = "ed25519"

    def keypair(self, seed: bytes) -> KeyPair:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        raw = hashlib.sha256(b"ed" + seed).digest()
        priv = Ed25519PrivateKey.from_private_bytes(raw)
        pub = priv.public_key().public_bytes_raw()
        return KeyPair(secret=raw, public=pub)

    def sign(self, secret: bytes, msg: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(secret).sign(msg)

    def verify(self, pubkey: bytes, msg: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(pubkey).verify(sig, msg)
            return True
        except (InvalidSignature, ValueError):
            return False


_active: SignatureScheme = HashTagScheme()


def active_scheme() -> SignatureScheme:
    return _active


def set_scheme(scheme: SignatureScheme) -> SignatureScheme:
    """Install a scheme process-wide; returns the previous one."""
    global _active
    previous = _active
    _active = scheme
    return previous


def keypair(seed: bytes) -> KeyPair:
    return _active.keypair(seed)


def sign(secret: bytes, msg: bytes) -> bytes:
    return _active.sign(secret, msg)


def verify_sig(msg: bytes, sig: bytes, pubkey: bytes) -> bool:
    """True iff ``sig`` was produced over ``msg`` by the key behind ``pubkey``."""
    return _active.verify(pubkey, msg, sig)
