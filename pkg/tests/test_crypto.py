"""Signature scheme contract, for the fast default and the real one."""

import random

import pytest

from chainweave import crypto


@pytest.fixture(params=["hashtag", "ed25519"])
def scheme(request):
    return {"hashtag": crypto.HashTagScheme(), "ed25519": crypto.Ed25519Scheme()}[request.param]


def test_sign_then_verify(scheme):
    kp = scheme.keypair(b"seed")
    sig = scheme.sign(kp.secret, b"message")
    assert scheme.verify(kp.public, b"message", sig)


def test_wrong_key_rejected(scheme):
    kp = scheme.keypair(b"seed")
    other = scheme.keypair(b"other")
    sig = scheme.sign(kp.secret, b"message")
    assert not scheme.verify(other.public, b"message", sig)


def test_mutated_messages_rejected(scheme):
    rng = random.Random(99)
    kp = scheme.keypair(b"seed")
    msg = bytes(rng.getrandbits(8) for _ in range(64))
    sig = scheme.sign(kp.secret, msg)
    for _ in range(100):
        pos = rng.randrange(len(msg))
        mutated = msg[:pos] + bytes([msg[pos] ^ (1 + rng.getrandbits(7))]) + msg[pos + 1 :]
        assert not scheme.verify(kp.public, mutated, sig)


def test_deterministic_keys_and_signatures(scheme):
    a = scheme.keypair(b"seed")
    b = scheme.keypair(b"seed")
    assert a == b
    assert scheme.sign(a.secret, b"m") == scheme.sign(b.secret, b"m")


def test_module_level_helpers_use_active_scheme():
    previous = crypto.set_scheme(crypto.Ed25519Scheme())
    try:
        kp = crypto.keypair(b"x")
        sig = crypto.sign(kp.secret, b"payload")
        assert crypto.verify_sig(b"payload", sig, kp.public)
        assert len(sig) == 64  # ed25519 signature size
    finally:
        crypto.set_scheme(previous)
    kp = crypto.keypair(b"x")
    assert crypto.verify_sig(b"m", crypto.sign(kp.secret, b"m"), kp.public)
