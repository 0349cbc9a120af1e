"""Offline verification of stored chains.

Replays a node's block store from genesis through the full rule set and
reports the first offending block on failure.  A store together with its
params file is sufficient input; nothing else is consulted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .blockstore import StoreReader
from .chainstate import ChainProcessor
from .codec import block_hash
from .consensus import ChainView, expected_work_nonce, WORK_PER_BLOCK
from .errors import BadChain, CodecError, Violation
from .params import REGISTRATION_CHANNEL
from .types import InflowProof, KeyBlock, MicroBlock


@dataclass
class VerifyResult:
    ok: bool
    height: int
    tip: bytes | None
    channels: list[int]
    error: str | None = None
    offending_block: bytes | None = None


def verify_store(directory: str | Path, channels: list[int] | None = None) -> VerifyResult:
    """Replay a block store; restricting ``channels`` verifies that subset
    (plus the key block spine) only."""
    try:
        reader = StoreReader(Path(directory))
        params = reader.params()
        key_blocks = reader.key_blocks()
        available = reader.channels()
        proofs = reader.inflow_proofs()
        mb_index: dict[bytes, MicroBlock] = {}
        for ch in available:
            for mb in reader.microblocks(ch):
                mb_index[block_hash(mb)] = mb
    except (OSError, CodecError, KeyError, ValueError) as e:
        return VerifyResult(ok=False, height=0, tip=None, channels=[], error=str(e))

    wanted = sorted(set(channels) if channels is not None else set(available))
    subscribed = frozenset(wanted) | {REGISTRATION_CHANNEL}

    proc = ChainProcessor(params, subscribed)
    view = ChainView(proc.genesis)
    try:
        for kb in key_blocks:
            h = block_hash(kb)
            if h in view:
                continue
            if kb.prev not in view:
                raise BadChain("stored key block has no parent in the store").at_block(h)
            parent = view.blocks[kb.prev]
            if kb.height != parent.height + 1:
                raise BadChain("stored key block height does not follow parent").at_block(h)
            if kb.work != WORK_PER_BLOCK or kb.work_nonce != expected_work_nonce(
                kb.prev, kb.height, kb.miner
            ):
                raise BadChain("stored key block work witness does not verify").at_block(h)
            view.add_block(kb)
    except Violation as v:
        return VerifyResult(
            ok=False, height=0, tip=None, channels=wanted, error=str(v), offending_block=v.block
        )

    leaves = view.leaves()
    best = max(view.cumulative_work[h] for h in leaves)
    tip = min(h for h in leaves if view.cumulative_work[h] == best)

    proofs_by_kb: dict[bytes, list[InflowProof]] = {}
    for p in proofs:
        proofs_by_kb.setdefault(p.key_block, []).append(p)

    try:
        for h in view.chain_to(tip)[1:]:
            kb = view.blocks[h]
            chains: dict[int, list[MicroBlock]] = {}
            for ch, tail in kb.channel_refs.items():
                if ch not in subscribed:
                    continue
                chain: list[MicroBlock] = []
                cursor = tail
                while cursor != kb.prev:
                    mb = mb_index.get(cursor)
                    if mb is None:
                        raise BadChain(
                            f"store is missing a microblock of channel {ch}"
                        ).at_block(h)
                    chain.append(mb)
                    cursor = mb.prev
                chain.reverse()
                chains[ch] = chain
            proc.apply_key_block(kb, chains, proofs_by_kb.get(h, []))
    except Violation as v:
        return VerifyResult(
            ok=False,
            height=proc.height,
            tip=None,
            channels=wanted,
            error=str(v),
            offending_block=v.block,
        )

    return VerifyResult(ok=True, height=proc.height, tip=proc.tip_hash, channels=wanted)


def find_stores(path: Path) -> list[Path]:
    """A path is either one store or a run directory with a stores/ tree."""
    path = Path(path)
    if (path / "keyblocks.log").exists():
        return [path]
    stores_dir = path / "stores"
    if stores_dir.is_dir():
        return sorted(p for p in stores_dir.iterdir() if (p / "keyblocks.log").exists())
    return []
