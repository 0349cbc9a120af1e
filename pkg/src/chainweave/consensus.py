"""Key block chain management.

Work is simulated: every key block carries one work unit and a nonce that is
a pure function of (parent, height, miner), so "most work" reduces to the
longest chain with seeded random tie-breaking.  Microblock forks are
prosecuted with fraud reports carried in key blocks; a convicted leader loses
its still-immature epoch reward and the reporter collects a fixed share.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import crypto
from .codec import block_hash, canonical_encode, header_sighash
from .errors import (
    BadBallot,
    BadChain,
    BadChannelRef,
    BadEvidence,
    BadHeight,
    BadInflowCommitment,
    BadWork,
    InertChannelListed,
    StaleEvidence,
    TooManyRefs,
)
from .ledger import ChannelState
from .params import FRAUD_REWARD_DEN, FRAUD_REWARD_NUM, PAYMENT_CHANNEL, ChainParams
from .rewards import verify_coinbase
from .types import (
    Coinbase,
    FraudEvidence,
    FraudProof,
    KeyBlock,
    MicroBlockHeader,
    OutPoint,
    Output,
    ZERO32,
)

WORK_PER_BLOCK = 1


def expected_work_nonce(prev: bytes, height: int, miner: bytes) -> bytes:
    """Stand-in witness for the mining lottery; checkable by anyone."""
    return hashlib.sha256(b"work" + prev + height.to_bytes(8, "big") + miner).digest()


def genesis_block(params: ChainParams) -> KeyBlock:
    """Shared root of every channel; identical params give identical bytes.

    The genesis coinbase carries the initial allocation on channel 0 and its
    nonce commits to the full parameter set.
    """
    params.validate()
    outputs = tuple(
        Output(value=value, owner=owner, spend_channel=PAYMENT_CHANNEL)
        for owner, value in params.genesis_allocation
    )
    return KeyBlock(
        prev=ZERO32,
        height=0,
        channel_refs={},
        inflow_commitments={},
        ballot=None,
        coinbase=Coinbase(height=0, outputs=outputs),
        fraud_reports=(),
        miner=ZERO32,
        work_nonce=hashlib.sha256(b"genesis" + canonical_encode(params)).digest(),
        work=WORK_PER_BLOCK,
    )


class ChainView:
    """All known key blocks reachable from genesis plus cumulative work.

    Orphans (blocks whose parent has not arrived) are never admitted; callers
    buffer them and retry once the parent shows up.
    """

    def __init__(self, genesis: KeyBlock) -> None:
        g = block_hash(genesis)
        self.genesis_hash = g
        self.blocks: dict[bytes, KeyBlock] = {g: genesis}
        self.children: dict[bytes, set[bytes]] = {g: set()}
        self.cumulative_work: dict[bytes, int] = {g: genesis.work}

    def __contains__(self, h: bytes) -> bool:
        return h in self.blocks

    def add_block(self, kb: KeyBlock) -> bytes:
        if kb.prev not in self.blocks:
            raise BadChain("parent not in view")
        h = block_hash(kb)
        if h in self.blocks:
            return h
        self.blocks[h] = kb
        self.children[h] = set()
        self.children[kb.prev].add(h)
        self.cumulative_work[h] = self.cumulative_work[kb.prev] + kb.work
        return h

    def leaves(self) -> list[bytes]:
        return [h for h, kids in self.children.items() if not kids]

    def chain_to(self, tip: bytes) -> list[bytes]:
        """Hashes from genesis to ``tip`` inclusive."""
        out = []
        h = tip
        while True:
            out.append(h)
            kb = self.blocks[h]
            if kb.height == 0:
                break
            h = kb.prev
        out.reverse()
        return out

    def height_of(self, h: bytes) -> int:
        return self.blocks[h].height


def fork_choice(view: ChainView, rng_seed: int | random.Random) -> bytes:
    """Leaf with maximum cumulative work; ties break uniformly at random from
    the seeded generator, so the result is a pure function of (view, seed)."""
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    leaves = view.leaves()
    best = max(view.cumulative_work[h] for h in leaves)
    candidates = sorted(h for h in leaves if view.cumulative_work[h] == best)
    if len(candidates) == 1:
        return candidates[0]
    return rng.choice(candidates)


def choose_tip(view: ChainView, current: bytes, rng: random.Random) -> bytes:
    """Node-side tip policy: never leave a tip that still has maximal work;
    otherwise defer to :func:`fork_choice`."""
    leaves = view.leaves()
    best = max(view.cumulative_work[h] for h in leaves)
    if view.cumulative_work.get(current, -1) == best:
        return current
    return fork_choice(view, rng)


def mine_next(
    miners: list[tuple[bytes, float]],
    rng: random.Random,
    params: ChainParams,
) -> tuple[bytes, float]:
    """One lottery draw: winner proportional to hash power, interval
    exponential with the target mean.  Deterministic under a seeded rng."""
    total = sum(power for _, power in miners)
    if total <= 0:
        raise ValueError("total hash power must be positive")
    pick = rng.random() * total
    acc = 0.0
    winner = miners[-1][0]
    for pub, power in miners:
        acc += power
        if pick < acc:
            winner = pub
            break
    interval = rng.expovariate(1.0 / params.target_keyblock_interval)
    return winner, interval


def miner_delay(power: float, total_power: float, target: float, rng: random.Random) -> float:
    """Per-miner arm delay; the superposition of all miners reproduces the
    global lottery of :func:`mine_next`."""
    if power <= 0:
        raise ValueError("miner power must be positive")
    return rng.expovariate(power / (total_power * target))


# -- microblock fork detection -------------------------------------------------------


def _fork_key(h: MicroBlockHeader) -> tuple:
    return (h.channel, h.epoch, h.prev, h.leader)


def fork_offense_key(ev: FraudEvidence) -> bytes:
    """One key per offense position, independent of header order, so the same
    fork can never be prosecuted twice under reshuffled evidence."""
    h = ev.first
    return hashlib.sha256(
        b"offense" + h.channel.to_bytes(8, "big") + h.epoch + h.prev + h.leader
    ).digest()


def normalize_evidence(a: MicroBlockHeader, b: MicroBlockHeader) -> FraudEvidence:
    """Canonical header order (by hash) so equal offenses encode equally."""
    if block_hash(a) <= block_hash(b):
        return FraudEvidence(first=a, second=b)
    return FraudEvidence(first=b, second=a)


def verify_fraud_evidence(ev: FraudEvidence) -> None:
    a, b = ev.first, ev.second
    if _fork_key(a) != _fork_key(b):
        raise BadEvidence("headers extend different positions or leaders")
    if block_hash(a) == block_hash(b):
        raise BadEvidence("headers are identical")
    for h in (a, b):
        if not crypto.verify_sig(header_sighash(h), h.sig, h.leader):
            raise BadEvidence("header signature does not verify")


def detect_microblock_fork(headers: Iterable[MicroBlockHeader]) -> FraudEvidence | None:
    """First same-leader fork in a header stream, or None.

    Two headers conflict when they share (channel, epoch, prev, leader) but
    hash differently and both carry valid leader signatures.
    """
    seen: dict[tuple, MicroBlockHeader] = {}
    for h in headers:
        if not crypto.verify_sig(header_sighash(h), h.sig, h.leader):
            continue
        key = _fork_key(h)
        prior = seen.get(key)
        if prior is not None and block_hash(prior) != block_hash(h):
            return normalize_evidence(prior, h)
        seen.setdefault(key, h)
    return None


class HeaderIndex:
    """Streaming variant of :func:`detect_microblock_fork` for live nodes."""

    def __init__(self) -> None:
        self._seen: dict[tuple, MicroBlockHeader] = {}

    def observe(self, h: MicroBlockHeader) -> FraudEvidence | None:
        if not crypto.verify_sig(header_sighash(h), h.sig, h.leader):
            return None
        key = _fork_key(h)
        prior = self._seen.get(key)
        if prior is None:
            self._seen[key] = h
            return None
        if block_hash(prior) == block_hash(h):
            return None
        return normalize_evidence(prior, h)


def fraud_reward(revoked: int) -> int:
    return revoked * FRAUD_REWARD_NUM // FRAUD_REWARD_DEN


def apply_fraud_report(
    report: FraudProof,
    states: dict[int, ChannelState],
    epoch_kb: KeyBlock,
    coinbases: list[Coinbase],
    params: ChainParams,
    report_height: int,
    already_revoked: set[OutPoint] | None = None,
) -> tuple[int, int]:
    """Revoke the accused leader's still-immature reward outputs.

    ``coinbases`` are the coinbases that paid the accused epoch (the epoch's
    own key block and, when it exists, the next one that paid the serializer
    share).  The revoked amount is computed from the coinbases themselves,
    which every node sees in full, so nodes tracking different channel subsets
    agree on the reporter's credit.  ``already_revoked`` outpoints (earlier
    reports against the same epoch) are skipped and extended in place.
    Mutates ``states``: accused outputs leave whichever channels this node
    tracks; the reporter's share is minted on channel 0 when tracked.
    Returns (revoked_total, reporter_credit).
    """
    verify_fraud_evidence(report.evidence)
    leader = report.evidence.first.leader
    if leader != epoch_kb.miner:
        raise BadEvidence("accused key does not match the epoch leader")
    if report_height > epoch_kb.height + params.coinbase_maturity:
        raise StaleEvidence("accused epoch reward already matured")

    revoked = 0
    hit = already_revoked if already_revoked is not None else set()
    for cb in coinbases:
        cb_hash = block_hash(cb)
        for idx, out in enumerate(cb.outputs):
            if out.owner != leader:
                continue
            op = OutPoint(tx_hash=cb_hash, index=idx)
            if op in hit:
                continue
            hit.add(op)
            revoked += out.value
            state = states.get(out.spend_channel)
            if state is not None and op in state.utxo:
                del state.utxo[op]
                state.coinbase_heights.pop(op, None)
                state.spent.add(op)
    credit = fraud_reward(revoked)
    if credit > 0 and PAYMENT_CHANNEL in states:
        payout = Output(value=credit, owner=report.reporter, spend_channel=PAYMENT_CHANNEL)
        op = OutPoint(tx_hash=block_hash(report), index=0)
        state = states[PAYMENT_CHANNEL]
        state.utxo[op] = payout
        state.coinbase_heights[op] = report_height
    return revoked, credit


# -- key block validation --------------------------------------------------------------


@dataclass
class EpochSummary:
    """Everything a full validator derives from the epoch a key block closes."""

    tails: dict[int, bytes]  # non-idle channels -> tail microblock hash
    inflow_leaves: dict[int, list[bytes]]  # destination channel -> leaf encodings
    fees: dict[int, int]  # channel -> total fees this epoch
    previous_miner: bytes | None
    known_proposals: set[bytes] = field(default_factory=set)
    applied_fraud: set[bytes] = field(default_factory=set)
    active_channels: frozenset[int] = frozenset()


def validate_key_block(
    kb: KeyBlock,
    view: ChainView,
    params: ChainParams,
    summary: EpochSummary,
    epoch_lookup: Callable[[bytes], KeyBlock | None] | None = None,
) -> None:
    """Full-node validation of a key block against its parent epoch.

    Raises the specific violation; callers that track only some channels run
    the per-channel subset of these checks instead.
    """
    if kb.prev not in view:
        raise BadChain("unknown parent")
    parent = view.blocks[kb.prev]
    if kb.height != parent.height + 1:
        raise BadHeight(f"height {kb.height} after parent {parent.height}")
    if kb.work != WORK_PER_BLOCK:
        raise BadWork("key blocks carry exactly one work unit")
    if kb.work_nonce != expected_work_nonce(kb.prev, kb.height, kb.miner):
        raise BadWork("work witness does not verify")

    if len(kb.channel_refs) > params.max_channel_refs:
        raise TooManyRefs(f"{len(kb.channel_refs)} refs exceed {params.max_channel_refs}")
    expected_refs = _expected_refs(summary.tails, params.max_channel_refs)
    for channel, tail in kb.channel_refs.items():
        if channel not in summary.tails:
            raise InertChannelListed(f"channel {channel} had no transactions this epoch")
        if expected_refs.get(channel) != tail:
            raise BadChannelRef(f"ref for channel {channel} does not match the epoch tail")
    for channel in expected_refs:
        if channel not in kb.channel_refs:
            raise BadChannelRef(f"active channel {channel} missing from refs")

    from .merkle import merkle_root

    expected_commitments = {ch: merkle_root(ls) for ch, ls in summary.inflow_leaves.items()}
    if kb.inflow_commitments != expected_commitments:
        raise BadInflowCommitment("inflow commitments do not recompute")

    verify_coinbase(kb, params, summary.previous_miner, summary.fees)

    if kb.ballot is not None and kb.ballot not in summary.known_proposals:
        raise BadBallot("ballot references an unconfirmed proposal")

    seen_reports: set[bytes] = set()
    for report in kb.fraud_reports:
        verify_fraud_evidence(report.evidence)
        ev_hash = block_hash(report.evidence)
        if ev_hash in summary.applied_fraud or ev_hash in seen_reports:
            raise BadEvidence("fraud report already applied on this chain")
        seen_reports.add(ev_hash)
        if not crypto.verify_sig(
            _report_sighash(report), report.sig, report.reporter
        ):
            raise BadEvidence("reporter signature invalid")
        if epoch_lookup is None:
            continue
        epoch_kb = epoch_lookup(report.evidence.first.epoch)
        if epoch_kb is None:
            raise BadEvidence("accused epoch is not on this chain")
        if report.evidence.first.leader != epoch_kb.miner:
            raise BadEvidence("accused key does not match the epoch leader")
        if kb.height > epoch_kb.height + params.coinbase_maturity:
            raise StaleEvidence("fraud report arrived after the reward matured")


def _report_sighash(report: FraudProof) -> bytes:
    from .codec import tx_sighash

    return tx_sighash(report)


def _expected_refs(tails: dict[int, bytes], cap: int) -> dict[int, bytes]:
    if len(tails) <= cap:
        return dict(tails)
    kept = sorted(tails)[:cap]  # lowest service numbers win when capped
    return {ch: tails[ch] for ch in kept}
