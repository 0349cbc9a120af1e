"""Binary merkle tree with domain-separated leaf and node hashes.

Trees split at the largest power of two strictly below the leaf count, so a
single leaf's root is just its leaf hash and proofs never duplicate entries.
"""

from __future__ import annotations

import hashlib

EMPTY_ROOT = hashlib.sha256(b"").digest()


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def _split(n: int) -> int:
    # largest power of two strictly less than n (n >= 2)
    k = 1
    while k * 2 < n:
        k *= 2
    return k


def merkle_root(leaves: list[bytes]) -> bytes:
    """Root over raw leaf byte strings; an empty list hashes to EMPTY_ROOT."""
    if not leaves:
        return EMPTY_ROOT
    hashes = [leaf_hash(x) for x in leaves]
    return _root(hashes)


def _root(hashes: list[bytes]) -> bytes:
    if len(hashes) == 1:
        return hashes[0]
    k = _split(len(hashes))
    return node_hash(_root(hashes[:k]), _root(hashes[k:]))


def merkle_proof(leaves: list[bytes], index: int) -> list[tuple[bytes, bool]]:
    """Path from leaf ``index`` to the root as (sibling, sibling_is_right)."""
    if not 0 <= index < len(leaves):
        raise IndexError("leaf index out of range")
    hashes = [leaf_hash(x) for x in leaves]
    path: list[tuple[bytes, bool]] = []
    _prove(hashes, index, path)
    return path


def _prove(hashes: list[bytes], index: int, path: list[tuple[bytes, bool]]) -> None:
    if len(hashes) == 1:
        return
    k = _split(len(hashes))
    if index < k:
        _prove(hashes[:k], index, path)
        path.append((_root(hashes[k:]), True))
    else:
        _prove(hashes[k:], index - k, path)
        path.append((_root(hashes[:k]), False))


def verify_proof(leaf: bytes, path: list[tuple[bytes, bool]] | tuple, root: bytes) -> bool:
    acc = leaf_hash(leaf)
    for sibling, sibling_is_right in path:
        acc = node_hash(acc, sibling) if sibling_is_right else node_hash(sibling, acc)
    return acc == root
