"""Per-participant state machine.

A node is either a miner (tracks every active channel, may produce blocks) or
a service user (tracks channel 1 plus its services).  Nodes process one
message at a time, never relay data for channels they do not subscribe to,
and store accepted blocks in acceptance order so the whole chain can be
replayed bit-exactly from their own store.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import consensus, crypto, ledger
from .chainstate import ApplyResult, ChainProcessor
from .codec import (
    block_hash,
    canonical_encode,
    encoded_size,
    microblock_header,
    microblock_sighash,
    tx_sighash,
)
from .consensus import ChainView, HeaderIndex, choose_tip
from .errors import BadChain, NotLeader, Violation, AuditMismatch
from .params import PAYMENT_CHANNEL, REGISTRATION_CHANNEL, ChainParams
from .types import (
    FraudProof,
    InflowProof,
    KeyBlock,
    MicroBlock,
    Registration,
    Transaction,
)

log = logging.getLogger(__name__)

MEMPOOL_BYTES_PER_CHANNEL = 1 << 20


# -- wire messages ---------------------------------------------------------------


@dataclass(frozen=True)
class MsgKeyBlock:
    kb: KeyBlock


@dataclass(frozen=True)
class MsgMicroBlock:
    mb: MicroBlock


@dataclass(frozen=True)
class MsgTx:
    channel: int
    tx: Transaction


@dataclass(frozen=True)
class MsgInflow:
    proof: InflowProof


@dataclass(frozen=True)
class MsgSyncRequest:
    channels: tuple[int, ...]
    tip: bytes


@dataclass(frozen=True)
class SyncPayload:
    key_blocks: tuple[KeyBlock, ...]
    microblocks: tuple[tuple[int, tuple[MicroBlock, ...]], ...]
    proofs: tuple[InflowProof, ...]


@dataclass(frozen=True)
class MsgSyncResponse:
    payload: SyncPayload


Outbound = tuple  # ("broadcast", msg) | ("send", peer_name, msg)


@dataclass(frozen=True)
class NodeConfig:
    name: str
    role: str  # "miner" | "user"
    hash_power: float = 0.0
    channels: tuple[int, ...] = ()
    censor_channels: tuple[int, ...] = ()
    fork_microblocks: bool = False
    suppress_ballots: bool = False
    vote: str = "all"  # "all" votes for the best open proposal, "none" abstains

    def subscription(self) -> frozenset[int] | None:
        """None means every active channel (miners); users always track 1."""
        if self.role == "miner":
            return None
        return frozenset(self.channels) | {REGISTRATION_CHANNEL}


@dataclass
class _Mempool:
    txs: dict[bytes, Transaction] = field(default_factory=dict)
    sizes: dict[bytes, int] = field(default_factory=dict)
    total: int = 0

    def add(self, tx_hash: bytes, tx: Transaction, size: int) -> None:
        if tx_hash in self.txs:
            return
        self.txs[tx_hash] = tx
        self.sizes[tx_hash] = size
        self.total += size
        while self.total > MEMPOOL_BYTES_PER_CHANNEL and self.txs:
            evict = min(self.txs, key=self._priority)
            self.remove(evict)

    def _priority(self, tx_hash: bytes):
        tx = self.txs[tx_hash]
        return (getattr(tx, "fee", 0) / self.sizes[tx_hash], tx_hash)

    def remove(self, tx_hash: bytes) -> None:
        if tx_hash in self.txs:
            self.total -= self.sizes.pop(tx_hash)
            del self.txs[tx_hash]

    def ordered(self) -> list[tuple[bytes, Transaction]]:
        """Highest fee-per-byte first; fee then hash break ties."""
        def key(item):
            tx_hash, tx = item
            fee = getattr(tx, "fee", 0)
            return (-fee / self.sizes[tx_hash], -fee, tx_hash)

        return sorted(self.txs.items(), key=key)


class Node:
    """One participant: chain view, channel states, mempools, and gossip."""

    def __init__(
        self,
        config: NodeConfig,
        params: ChainParams,
        keypair: crypto.KeyPair,
        tiebreak_seed: int,
        neighbors: list[str] | None = None,
    ) -> None:
        import random

        self.config = config
        self.params = params
        self.keypair = keypair
        self.name = config.name
        self.rng = random.Random(tiebreak_seed)
        self.neighbors = list(neighbors or [])

        self.proc = ChainProcessor(params, config.subscription())
        self.view = ChainView(self.proc.genesis)
        self.tip = self.proc.genesis_hash
        self.invalid: set[bytes] = set()

        # retained data, in acceptance order (this is the block store)
        self.kb_store: list[KeyBlock] = []
        self.mb_store: dict[int, list[MicroBlock]] = {}
        self.proof_store: list[InflowProof] = []
        self.stored_proof_keys: set[bytes] = set()
        self.storage_bytes = 0

        self.mb_index: dict[bytes, MicroBlock] = {}
        self.adopted_tails: dict[tuple[bytes, int], bytes] = {}
        self.mempool: dict[int, _Mempool] = {}
        self.seen_txs: set[bytes] = set()
        self.seen_proofs: set[bytes] = set()

        self.kb_orphans: dict[bytes, list[KeyBlock]] = {}
        self.mb_waiting: dict[bytes, list[MicroBlock]] = {}
        self.proof_waiting: dict[bytes, list[InflowProof]] = {}

        self.header_index = HeaderIndex()
        self.reported_fraud: set[bytes] = set()
        self.fraud_outbox: list[FraudProof] = []
        self.forked_epochs: set[bytes] = set()

        self.online = True
        self.tip_changed = False
        self.last_apply: ApplyResult | None = None
        self.apply_log: list[ApplyResult] = []

        # leader-side scratch states for serializing the current epoch
        self.leader_epoch: bytes | None = None
        self.scratch: dict[int, ledger.ChannelState] = {}

    # -- subscriptions ---------------------------------------------------------------

    def subscribes(self, channel: int) -> bool:
        sub = self.config.subscription()
        return sub is None or channel in sub

    def tracked_channels(self) -> list[int]:
        return sorted(self.proc.states)

    @property
    def is_leader(self) -> bool:
        return self.leader_epoch is not None and self.leader_epoch == self.tip

    # -- storage ----------------------------------------------------------------------

    def _store_kb(self, kb: KeyBlock) -> None:
        self.kb_store.append(kb)
        self.storage_bytes += encoded_size(kb)

    def _store_mb(self, mb: MicroBlock) -> None:
        self.mb_store.setdefault(mb.channel, []).append(mb)
        self.storage_bytes += encoded_size(mb)

    def _store_proof(self, proof: InflowProof) -> None:
        key = block_hash(proof)
        if key in self.stored_proof_keys:
            return
        self.stored_proof_keys.add(key)
        self.proof_store.append(proof)
        self.storage_bytes += encoded_size(proof)

    # -- message entry point ------------------------------------------------------------

    def handle(self, msg, now: float, sender: str | None = None) -> list[Outbound]:
        if not self.online:
            return []
        if isinstance(msg, MsgKeyBlock):
            return self.receive_key_block(msg.kb, now, sender)
        if isinstance(msg, MsgMicroBlock):
            return self.receive_microblock(msg.mb, now)
        if isinstance(msg, MsgTx):
            return self.receive_tx(msg.channel, msg.tx, now)
        if isinstance(msg, MsgInflow):
            return self.receive_inflow(msg.proof, now)
        if isinstance(msg, MsgSyncRequest):
            return self.serve_sync(msg, sender)
        if isinstance(msg, MsgSyncResponse):
            return self.receive_sync(msg.payload, now)
        log.warning("%s: unknown message %r", self.name, type(msg).__name__)
        return []

    # -- key blocks ----------------------------------------------------------------------

    def receive_key_block(self, kb: KeyBlock, now: float, sender: str | None = None) -> list[Outbound]:
        h = block_hash(kb)
        if h in self.view or h in self.invalid:
            return []
        if kb.prev in self.invalid:
            self._mark_invalid(h)
            return []
        if kb.prev not in self.view:
            self.kb_orphans.setdefault(kb.prev, []).append(kb)
            if sender is not None:
                return [("send", sender, MsgSyncRequest(channels=self._sync_channels(), tip=self.tip))]
            return []
        try:
            drained = self._admit_key_block(kb)
        except Violation as v:
            log.info("%s: rejected key block %s: %s", self.name, h.hex()[:12], v)
            self._mark_invalid(h)
            return []
        out: list[Outbound] = [("broadcast", MsgKeyBlock(kb))]
        # microblocks that were waiting for this epoch become relayable now
        out.extend(("broadcast", MsgMicroBlock(mb)) for mb in drained)
        # orphans waiting on this block may now be admissible
        for waiting in self.kb_orphans.pop(h, []):
            out.extend(self.receive_key_block(waiting, now, sender))
        out.extend(self._advance(now, sender))
        return out

    def _admit_key_block(self, kb: KeyBlock) -> list[MicroBlock]:
        """Structural checks only; full validation happens on application.
        Returns microblocks that were waiting for this epoch and are now
        accepted (the caller relays them)."""
        parent = self.view.blocks[kb.prev]
        if kb.height != parent.height + 1:
            raise BadChain("height does not follow parent")
        if kb.work != consensus.WORK_PER_BLOCK:
            raise BadChain("wrong work amount")
        if kb.work_nonce != consensus.expected_work_nonce(kb.prev, kb.height, kb.miner):
            raise BadChain("work witness does not verify")
        self.view.add_block(kb)
        self._store_kb(kb)
        # microblocks that arrived before their epoch key block
        return self._drain_waiting_mbs(block_hash(kb))

    def _drain_waiting_mbs(self, epoch_hash: bytes) -> list[MicroBlock]:
        accepted = []
        for mb in self.mb_waiting.pop(epoch_hash, []):
            if self._accept_microblock(mb):
                accepted.append(mb)
        return accepted

    def _sync_channels(self) -> tuple[int, ...]:
        sub = self.config.subscription()
        if sub is None:
            return tuple(sorted(self.proc.gov.active))
        return tuple(sorted(sub))

    def _mark_invalid(self, h: bytes) -> None:
        """An invalid block poisons every descendant in the view."""
        stack = [h]
        while stack:
            x = stack.pop()
            if x in self.invalid:
                continue
            self.invalid.add(x)
            stack.extend(self.view.children.get(x, ()))

    # -- advancing the confirmed tip ---------------------------------------------------------

    def _advance(self, now: float, sender: str | None = None) -> list[Outbound]:
        """Move the confirmed state to the best admissible leaf, applying or
        replaying as needed.  Emits sync requests when epoch data is missing."""
        out: list[Outbound] = []
        for _ in range(len(self.view.blocks) + 1):
            best = self._best_tip()
            if best == self.tip:
                break
            path = self.view.chain_to(best)
            if self.tip in path:
                ok = self._apply_forward(path[path.index(self.tip) + 1 :], now, out, sender)
            else:
                ok = self._reorg_to(best, out, sender)
            if not ok:
                break
        return out

    def _best_tip(self) -> bytes:
        leaves = [h for h in self.view.leaves() if h not in self.invalid]
        if not leaves:
            return self.tip
        best = max(self.view.cumulative_work[h] for h in leaves)
        if self.view.cumulative_work.get(self.tip, -1) == best:
            return self.tip
        candidates = sorted(h for h in leaves if self.view.cumulative_work[h] == best)
        if len(candidates) == 1:
            return candidates[0]
        return self.rng.choice(candidates)

    def _take_proofs(self, kb_hash: bytes) -> list[InflowProof]:
        """Stored plus buffered proofs for one key block, deduplicated."""
        seen: set[bytes] = set()
        out: list[InflowProof] = []
        for p in self.proof_store:
            if p.key_block == kb_hash:
                key = block_hash(p)
                if key not in seen:
                    seen.add(key)
                    out.append(p)
        for p in self.proof_waiting.get(kb_hash, []):
            key = block_hash(p)
            if key not in seen:
                seen.add(key)
                out.append(p)
        return out

    def _commit_proofs(self, kb_hash: bytes, proofs: list[InflowProof]) -> None:
        self.proof_waiting.pop(kb_hash, None)
        for p in proofs:
            self._store_proof(p)

    def _apply_forward(
        self, hashes: list[bytes], now: float, out: list[Outbound], sender: str | None
    ) -> bool:
        for h in hashes:
            kb = self.view.blocks[h]
            chains = self._resolve_epoch(kb)
            if chains is None:
                if sender is not None:
                    out.append(
                        ("send", sender, MsgSyncRequest(channels=self._sync_channels(), tip=self.tip))
                    )
                elif self.neighbors:
                    out.append(
                        ("send", sorted(self.neighbors)[0], MsgSyncRequest(channels=self._sync_channels(), tip=self.tip))
                    )
                return False
            proofs = self._take_proofs(h)
            try:
                result = self.proc.apply_key_block(kb, chains, proofs)
            except Violation as v:
                log.info("%s: key block %s failed validation: %s", self.name, h.hex()[:12], v)
                self._mark_invalid(h)
                return False
            self._commit_proofs(h, proofs)
            self._after_apply(kb, result, out)
        return True

    def _reorg_to(self, best: bytes, out: list[Outbound], sender: str | None) -> bool:
        """Rebuild the confirmed state from genesis along another branch."""
        path = self.view.chain_to(best)
        fresh = ChainProcessor(self.params, self.config.subscription())
        results: list[tuple[KeyBlock, ApplyResult]] = []
        used_proofs: list[tuple[bytes, list[InflowProof]]] = []
        for h in path[1:]:
            kb = self.view.blocks[h]
            chains = self._resolve_epoch(kb)
            if chains is None:
                if sender is not None:
                    out.append(
                        ("send", sender, MsgSyncRequest(channels=self._sync_channels(), tip=self.tip))
                    )
                return False
            proofs = self._take_proofs(h)
            try:
                result = fresh.apply_key_block(kb, chains, proofs)
            except Violation as v:
                log.info("%s: branch block %s invalid during reorg: %s", self.name, h.hex()[:12], v)
                self._mark_invalid(h)
                return False
            used_proofs.append((h, proofs))
            results.append((kb, result))
        old_confirmed = self.proc.confirmed_txs
        self.proc = fresh
        self.tip = self.proc.tip_hash
        self.tip_changed = True
        # transactions confirmed only on the abandoned branch go back to mempools
        self._refill_mempool_after_reorg(old_confirmed)
        for h, proofs in used_proofs:
            self._commit_proofs(h, proofs)
        for kb, result in results:
            self._post_apply_bookkeeping(kb, result, out, replayed=True)
        self._maybe_become_leader()
        return True

    def _refill_mempool_after_reorg(self, old_confirmed: set[bytes]) -> None:
        returned = old_confirmed - self.proc.confirmed_txs
        if not returned:
            return
        for channel, mbs in self.mb_store.items():
            pool = self.mempool.setdefault(channel, _Mempool())
            for mb in mbs:
                for tx in mb.txs:
                    tx_hash = block_hash(tx)
                    if tx_hash in returned:
                        pool.add(tx_hash, tx, encoded_size(tx))

    def _resolve_epoch(self, kb: KeyBlock) -> dict[int, list[MicroBlock]] | None:
        """Walk each tracked referenced channel back to the epoch key block.

        Returns None when a microblock is missing locally.
        """
        chains: dict[int, list[MicroBlock]] = {}
        for channel, tail in kb.channel_refs.items():
            if not self.subscribes(channel):
                continue
            chain: list[MicroBlock] = []
            h = tail
            for _ in range(100_000):
                if h == kb.prev:
                    break
                mb = self.mb_index.get(h)
                if mb is None:
                    return None
                if mb.epoch != kb.prev or mb.channel != channel:
                    return None
                chain.append(mb)
                h = mb.prev
            chain.reverse()
            chains[channel] = chain
        return chains

    def _after_apply(self, kb: KeyBlock, result: ApplyResult, out: list[Outbound]) -> None:
        self.tip = self.proc.tip_hash
        self.tip_changed = True
        self._post_apply_bookkeeping(kb, result, out, replayed=False)
        self._maybe_become_leader()

    def _post_apply_bookkeeping(
        self, kb: KeyBlock, result: ApplyResult, out: list[Outbound], replayed: bool
    ) -> None:
        self.last_apply = result
        self.apply_log.append(result)
        for channel, tx_hashes in result.confirmed.items():
            pool = self.mempool.get(channel)
            if pool is None:
                continue
            for tx_hash in tx_hashes:
                pool.remove(tx_hash)
        for report in result.fraud_txs:
            self.reported_fraud.add(consensus.fork_offense_key(report.evidence))
        # proofs this node derived itself (it tracks channel 0): keep the ones
        # for subscribed channels; the block's miner gossips them to users
        is_miner_of = kb.miner == self.keypair.public
        for proof in result.inflow_proofs:
            if self.subscribes(proof.channel):
                self.seen_proofs.add(block_hash(proof))
                self._store_proof(proof)
            if is_miner_of and not replayed:
                out.append(("broadcast", MsgInflow(proof)))
        self.fraud_outbox = [
            r
            for r in self.fraud_outbox
            if consensus.fork_offense_key(r.evidence) not in self.proc.applied_fraud
        ]

    def _maybe_become_leader(self) -> None:
        tip_kb = self.view.blocks[self.tip]
        if self.config.role == "miner" and tip_kb.miner == self.keypair.public:
            if self.leader_epoch != self.tip:
                self.leader_epoch = self.tip
                self.scratch = {}
                for ch in self.tracked_channels():
                    s = self.proc.states[ch].copy()
                    s.height = tip_kb.height + 1
                    s.pending_transfers = []
                    self.scratch[ch] = s
        else:
            self.leader_epoch = None
            self.scratch = {}

    # -- microblocks -------------------------------------------------------------------------

    def receive_microblock(self, mb: MicroBlock, now: float) -> list[Outbound]:
        if not self.subscribes(mb.channel):
            return []  # not our service: no storage, no relay
        h = block_hash(mb)
        if h in self.mb_index:
            return []
        if mb.epoch not in self.view:
            self.mb_waiting.setdefault(mb.epoch, []).append(mb)
            return []
        if not self._accept_microblock(mb):
            return []
        out: list[Outbound] = [("broadcast", MsgMicroBlock(mb))]
        out.extend(self._advance(now))
        return out

    def _accept_microblock(self, mb: MicroBlock) -> bool:
        h = block_hash(mb)
        if h in self.mb_index:
            return False
        epoch_kb = self.view.blocks.get(mb.epoch)
        if epoch_kb is None:
            return False
        if mb.leader != epoch_kb.miner:
            return False
        if not crypto.verify_sig(microblock_sighash(mb), mb.sig, mb.leader):
            return False
        desc = self.proc.gov.active.get(mb.channel)
        if desc is not None and encoded_size(mb) > desc[0].max_microblock_bytes:
            return False
        self.mb_index[h] = mb
        self._store_mb(mb)
        evidence = self.header_index.observe(microblock_header(mb))
        if evidence is not None:
            self._report_fraud(evidence)
        key = (mb.epoch, mb.channel)
        tail = self.adopted_tails.get(key, mb.epoch)
        if mb.prev == tail:
            self.adopted_tails[key] = h
        return True

    def _report_fraud(self, evidence) -> None:
        offense = consensus.fork_offense_key(evidence)
        if offense in self.reported_fraud or offense in self.proc.applied_fraud:
            return
        self.reported_fraud.add(offense)
        self.forked_epochs.add(evidence.first.epoch)
        report = FraudProof(evidence=evidence, reporter=self.keypair.public, sig=b"")
        report = replace(report, sig=crypto.sign(self.keypair.secret, tx_sighash(report)))
        if self.config.role == "miner":
            self.fraud_outbox.append(report)
        if self.subscribes(PAYMENT_CHANNEL):
            pool = self.mempool.setdefault(PAYMENT_CHANNEL, _Mempool())
            pool.add(block_hash(report), report, encoded_size(report))

    # -- transactions ---------------------------------------------------------------------------

    def receive_tx(self, channel: int, tx: Transaction, now: float) -> list[Outbound]:
        if not self.subscribes(channel):
            return []
        tx_hash = block_hash(tx)
        key = channel.to_bytes(8, "big") + tx_hash
        if key in self.seen_txs:
            return []
        self.seen_txs.add(key)
        if tx_hash in self.proc.confirmed_txs:
            return []
        state = self.proc.states.get(channel)
        if state is None:
            return []
        ctx = ledger.TxContext(
            params=self.params,
            active_channels=self.proc.gov.active_channels(),
            leader=None,
        )
        try:
            ledger.validate_tx(tx, state, self.proc.gov.descriptor(channel), ctx)
        except Violation as v:
            log.debug("%s: dropped tx %s: %s", self.name, tx_hash.hex()[:12], v)
            return []
        pool = self.mempool.setdefault(channel, _Mempool())
        pool.add(tx_hash, tx, encoded_size(tx))
        return [("broadcast", MsgTx(channel=channel, tx=tx))]

    # -- inflow proofs -----------------------------------------------------------------------------

    def receive_inflow(self, proof: InflowProof, now: float) -> list[Outbound]:
        if not self.subscribes(proof.channel) or proof.channel == PAYMENT_CHANNEL:
            return []
        key = block_hash(proof)
        if key in self.seen_proofs:
            return []
        self.seen_proofs.add(key)
        if self.proc.tracks_payment:
            # nodes tracking channel 0 derive inflows themselves
            return [("broadcast", MsgInflow(proof))]
        if proof.key_block not in self.proc.chain_set():
            self.proof_waiting.setdefault(proof.key_block, []).append(proof)
            return []
        try:
            credited = self.proc.credit_late_inflow(proof)
        except Violation as v:
            log.debug("%s: bad inflow proof: %s", self.name, v)
            return []
        if credited:
            self._store_proof(proof)
        return [("broadcast", MsgInflow(proof))]

    # -- assembly ------------------------------------------------------------------------------------

    def assemble_microblock(self, channel: int, now: float) -> MicroBlock | None:
        """Leader-only: pack mempool transactions, highest fee per byte first,
        into a signed microblock extending this epoch's chain."""
        if not self.is_leader:
            raise NotLeader(f"{self.name} does not lead the current epoch")
        if channel in self.config.censor_channels:
            return None
        state = self.scratch.get(channel)
        pool = self.mempool.get(channel)
        if state is None or pool is None or not pool.txs:
            return None
        proto = self.proc.gov.descriptor(channel)
        ctx = ledger.TxContext(
            params=self.params,
            active_channels=self.proc.gov.active_channels(),
            leader=None,
        )
        base = MicroBlock(
            channel=channel,
            epoch=self.leader_epoch,
            prev=state.tip,
            txs=(),
            leader=self.keypair.public,
            sig=b"\x00" * 32,
        )
        budget = proto.max_microblock_bytes - encoded_size(base)
        chosen: list[Transaction] = []
        staged = state
        for tx_hash, tx in pool.ordered():
            size = pool.sizes[tx_hash]
            if size > budget:
                continue
            try:
                ledger.validate_tx(tx, staged, proto, ctx)
            except Violation:
                continue
            probe = staged.copy()
            ledger.apply_validated_tx(tx, probe)
            staged = probe
            chosen.append(tx)
            budget -= size
        if not chosen:
            return None
        mb = replace(base, txs=tuple(chosen))
        mb = replace(mb, sig=crypto.sign(self.keypair.secret, microblock_sighash(mb)))
        staged.tip = block_hash(mb)
        self.scratch[channel] = staged
        self._accept_microblock(mb)
        return mb

    def fork_variant(self, mb: MicroBlock) -> MicroBlock:
        """Second, equally valid microblock at the same position: the tx list
        minus its last entry.  Used by the double-signing adversary."""
        variant = replace(mb, txs=mb.txs[:-1], sig=b"\x00" * 32)
        variant = replace(
            variant, sig=crypto.sign(self.keypair.secret, microblock_sighash(variant))
        )
        return variant

    def _choose_ballot(self, staged_registrations: list[bytes]) -> bytes | None:
        """Vote for the smallest-hash open proposal, counting registrations
        that confirm in the block being assembled."""
        if self.config.suppress_ballots or self.config.vote == "none":
            return None
        candidates = set(self.proc.gov.proposals) | set(staged_registrations)
        open_props = sorted(h for h in candidates if h not in self.proc.gov.adopted)
        return open_props[0] if open_props else None

    def _eligible_fraud_reports(self) -> tuple[FraudProof, ...]:
        reports = []
        seen = set()
        next_height = self.proc.height + 1
        for report in self.fraud_outbox:
            offense = consensus.fork_offense_key(report.evidence)
            if offense in seen or offense in self.proc.applied_fraud:
                continue
            epoch_hash = report.evidence.first.epoch
            if epoch_hash not in self.proc.chain_set():
                continue
            epoch_kb = self.proc.kbs[epoch_hash]
            if next_height > epoch_kb.height + self.params.coinbase_maturity:
                continue
            if report.evidence.first.leader != epoch_kb.miner:
                continue
            seen.add(offense)
            reports.append(report)
        return tuple(reports)

    def assemble_key_block(self, now: float) -> KeyBlock:
        """Build the key block sealing the current epoch on this node's tip."""
        epoch = self.tip
        chains: dict[int, list[MicroBlock]] = {}
        for ch in self.tracked_channels():
            tail = self.adopted_tails.get((epoch, ch))
            if tail is None:
                continue
            chain = self._walk_chain(epoch, tail)
            if chain and any(mb.txs for mb in chain):
                chains[ch] = chain
        staged_regs = [
            block_hash(tx)
            for mb in chains.get(REGISTRATION_CHANNEL, [])
            for tx in mb.txs
            if isinstance(tx, Registration)
        ]
        return self.proc.build_key_block(
            miner=self.keypair.public,
            chains=chains,
            ballot=self._choose_ballot(staged_regs),
            fraud_reports=self._eligible_fraud_reports(),
        )

    def _walk_chain(self, epoch: bytes, tail: bytes) -> list[MicroBlock]:
        chain = []
        h = tail
        while h != epoch:
            mb = self.mb_index[h]
            chain.append(mb)
            h = mb.prev
        chain.reverse()
        return chain

    # -- sync --------------------------------------------------------------------------------------------

    def serve_sync(self, req: MsgSyncRequest, sender: str | None) -> list[Outbound]:
        if sender is None:
            return []
        payload = self.sync_payload(req.channels)
        return [("send", sender, MsgSyncResponse(payload))]

    def sync_payload(self, channels: tuple[int, ...]) -> SyncPayload:
        """My winning chain plus microblocks and proofs for the asked channels."""
        path = self.view.chain_to(self.tip)
        kbs = tuple(self.view.blocks[h] for h in path)
        mbs: list[tuple[int, tuple[MicroBlock, ...]]] = []
        wanted = [ch for ch in channels if self.subscribes(ch)]
        per_channel: dict[int, list[MicroBlock]] = {ch: [] for ch in wanted}
        for h in path[1:]:
            kb = self.view.blocks[h]
            for ch in wanted:
                tail = kb.channel_refs.get(ch)
                if tail is None:
                    continue
                per_channel[ch].extend(self._walk_chain(kb.prev, tail))
        for ch in sorted(per_channel):
            mbs.append((ch, tuple(per_channel[ch])))
        proofs = tuple(
            p for p in self.proof_store if p.channel in wanted and p.key_block in set(path)
        )
        return SyncPayload(key_blocks=kbs, microblocks=tuple(mbs), proofs=proofs)

    def receive_sync(self, payload: SyncPayload, now: float) -> list[Outbound]:
        try:
            adopted = self.partial_sync(payload)
        except Violation as v:
            log.info("%s: rejected sync payload: %s", self.name, v)
            return []
        if not adopted:
            return []
        out: list[Outbound] = [("broadcast", MsgKeyBlock(self.view.blocks[self.tip]))]
        out.extend(self._advance(now))
        return out

    def partial_sync(self, payload: SyncPayload) -> bool:
        """Verify a peer's chain bottom-up and adopt it when it carries more
        work.  On any verification failure nothing changes and BadChain is
        raised."""
        kbs = payload.key_blocks
        if not kbs or block_hash(kbs[0]) != self.proc.genesis_hash:
            raise BadChain("sync payload does not start at our genesis")
        mb_by_hash = {}
        for _, chain in payload.microblocks:
            for mb in chain:
                mb_by_hash[block_hash(mb)] = mb
        proofs_by_kb: dict[bytes, list[InflowProof]] = {}
        for p in payload.proofs:
            proofs_by_kb.setdefault(p.key_block, []).append(p)

        fresh = ChainProcessor(self.params, self.config.subscription())
        prev_hash = fresh.genesis_hash
        for kb in kbs[1:]:
            if kb.prev != prev_hash:
                raise BadChain("sync payload is not a linear chain")
            if kb.work_nonce != consensus.expected_work_nonce(kb.prev, kb.height, kb.miner):
                raise BadChain("work witness does not verify")
            kb_hash = block_hash(kb)
            chains: dict[int, list[MicroBlock]] = {}
            for ch, tail in kb.channel_refs.items():
                if not self.subscribes(ch):
                    continue
                chain = []
                h = tail
                while h != kb.prev:
                    mb = mb_by_hash.get(h) or self.mb_index.get(h)
                    if mb is None:
                        raise BadChain(f"sync payload missing microblock for channel {ch}")
                    chain.append(mb)
                    h = mb.prev
                chain.reverse()
                chains[ch] = chain
            try:
                fresh.apply_key_block(kb, chains, proofs_by_kb.get(kb_hash, []))
            except Violation as v:
                raise BadChain(f"sync payload invalid at height {kb.height}: {v}")
            prev_hash = kb_hash

        new_work = len(kbs) - 1 + 1  # one unit per block including genesis
        current_work = self.view.cumulative_work.get(self.tip, 0)
        if new_work <= current_work:
            return False

        # adopt: merge blocks and data we did not have, then swap the state
        for kb in kbs[1:]:
            h = block_hash(kb)
            if h not in self.view:
                self.view.add_block(kb)
                self._store_kb(kb)
                self._drain_waiting_mbs(h)
        for ch, chain in payload.microblocks:
            for mb in chain:
                self._accept_microblock(mb)
        for p in payload.proofs:
            key = block_hash(p)
            if key not in self.seen_proofs and self.subscribes(p.channel):
                self.seen_proofs.add(key)
                self._store_proof(p)
        old_confirmed = self.proc.confirmed_txs
        self.proc = fresh
        self.tip = fresh.tip_hash
        self.tip_changed = True
        self._refill_mempool_after_reorg(old_confirmed)
        self._maybe_become_leader()
        return True

    # -- audit ------------------------------------------------------------------------------------------------

    def audit(self) -> list[tuple[int, int, bytes]]:
        """Replay my own store along my winning chain and compare the result
        with the live state, exactly.  Returns (height, channel, digest) rows
        for every height, which is also what metrics report."""
        index = {}
        for mbs in self.mb_store.values():
            for mb in mbs:
                index[block_hash(mb)] = mb
        proofs_by_kb: dict[bytes, list[InflowProof]] = {}
        for p in self.proof_store:
            proofs_by_kb.setdefault(p.key_block, []).append(p)
        fresh = ChainProcessor(self.params, self.config.subscription())
        digests: list[tuple[int, int, bytes]] = []
        for ch in sorted(fresh.states):
            digests.append((0, ch, fresh.states[ch].digest()))
        path = self.view.chain_to(self.tip)
        for h in path[1:]:
            kb = self.view.blocks[h]
            chains: dict[int, list[MicroBlock]] = {}
            for ch, tail in kb.channel_refs.items():
                if not self.subscribes(ch):
                    continue
                chain = []
                cursor = tail
                while cursor != kb.prev:
                    mb = index.get(cursor)
                    if mb is None:
                        raise AuditMismatch(
                            f"store is missing a microblock of channel {ch}"
                        ).at_block(h)
                    chain.append(mb)
                    cursor = mb.prev
                chain.reverse()
                chains[ch] = chain
            try:
                fresh.apply_key_block(kb, chains, proofs_by_kb.get(h, []))
            except Violation as v:
                raise AuditMismatch(f"replay failed at height {kb.height}: {v}").at_block(h)
            for ch in sorted(fresh.states):
                digests.append((kb.height, ch, fresh.states[ch].digest()))
        for ch in sorted(self.proc.states):
            if ch not in fresh.states or fresh.states[ch].digest() != self.proc.states[ch].digest():
                raise AuditMismatch(f"replayed state for channel {ch} diverges from live state")
        return digests
