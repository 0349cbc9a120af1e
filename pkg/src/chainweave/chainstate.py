"""Deterministic chain state machine.

A :class:`ChainProcessor` owns the per-channel states, governance, and fee
ledger for one linear key block chain.  Applying a key block validates and
replays the epoch it closes: microblocks per tracked channel, funding
commitments, coinbase, fraud reports, ballots, and window settlement, all or
nothing.  Both live nodes and offline replay (sync, audit, verify) drive the
same code, which is what makes "replay equals incremental" hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import consensus, governance as gov_mod, ledger, rewards
from .codec import block_hash
from .errors import (
    BadChain,
    BadBallot,
    BadChannelRef,
    BadCoinbase,
    BadEvidence,
    BadHeight,
    BadInflowCommitment,
    BadProof,
    BadWork,
    DuplicateInflow,
    InertChannelListed,
    TooManyRefs,
    Violation,
)
from .merkle import merkle_root
from .params import PAYMENT_CHANNEL, REGISTRATION_CHANNEL, ChainParams
from .types import (
    Coinbase,
    FraudProof,
    InflowProof,
    KeyBlock,
    MicroBlock,
    OutPoint,
    Registration,
    ZERO32,
)


@dataclass
class ApplyResult:
    """What one key block did, for callers that track mempools and metrics."""

    kb_hash: bytes
    height: int
    confirmed: dict[int, list[bytes]] = field(default_factory=dict)  # channel -> tx hashes
    registrations: list[bytes] = field(default_factory=list)
    fraud_txs: list[FraudProof] = field(default_factory=list)
    activations: list[int] = field(default_factory=list)
    activated_proposal: bytes | None = None
    fees: dict[int, int] = field(default_factory=dict)
    # (leader, accused epoch height, revoked, reporter credit)
    revocations: list[tuple[bytes, int, int, int]] = field(default_factory=list)
    inflow_proofs: list[InflowProof] = field(default_factory=list)


@dataclass
class _EpochRun:
    states: dict[int, ledger.ChannelState]
    gov: gov_mod.GovernanceState
    fees: dict[int, int]
    pending: list
    confirmed: dict[int, list[bytes]]
    registrations: list[bytes]
    fraud_txs: list[FraudProof]


class ChainProcessor:
    """State of one chain as seen by a node tracking some or all channels.

    ``subscribed=None`` tracks every active channel (a miner); otherwise only
    the given channels are validated and stored.  Channel 1 is always
    tracked, since active protocol knowledge is required to validate anything.
    """

    def __init__(
        self,
        params: ChainParams,
        subscribed: frozenset[int] | None = None,
    ) -> None:
        params.validate()
        self.params = params
        self.subscribed = None if subscribed is None else frozenset(subscribed) | {REGISTRATION_CHANNEL}
        self.gov = gov_mod.GovernanceState.genesis()
        self.fee_ledger = rewards.FeeLedger()
        self.applied_fraud: set[bytes] = set()  # offense keys, one per fork position
        self.revoked_outpoints: set = set()
        self.confirmed_txs: set[bytes] = set()
        self.burned = 0
        self.genesis = consensus.genesis_block(params)
        self.genesis_hash = block_hash(self.genesis)
        self._chain_set_cache: tuple[int, set[bytes]] | None = None
        self.chain: list[bytes] = [self.genesis_hash]
        self.kbs: dict[bytes, KeyBlock] = {self.genesis_hash: self.genesis}
        self.states: dict[int, ledger.ChannelState] = {}
        for ch in sorted(self.gov.active):
            if self._tracks(ch):
                self.states[ch] = ledger.ChannelState(channel=ch, height=0, tip=self.genesis_hash)
        self._apply_genesis_allocation()

    # -- helpers -----------------------------------------------------------------

    def _tracks(self, channel: int) -> bool:
        return self.subscribed is None or channel in self.subscribed

    @property
    def tracks_payment(self) -> bool:
        return self.subscribed is None or PAYMENT_CHANNEL in self.subscribed

    def _apply_genesis_allocation(self) -> None:
        if PAYMENT_CHANNEL not in self.states:
            return
        state = self.states[PAYMENT_CHANNEL]
        cb_hash = block_hash(self.genesis.coinbase)
        for idx, out in enumerate(self.genesis.coinbase.outputs):
            op = OutPoint(tx_hash=cb_hash, index=idx)
            state.utxo[op] = out
            state.coinbase_heights[op] = 0  # height 0 mints are spendable immediately

    @property
    def tip_hash(self) -> bytes:
        return self.chain[-1]

    @property
    def tip(self) -> KeyBlock:
        return self.kbs[self.tip_hash]

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    def kb_at(self, height: int) -> KeyBlock:
        return self.kbs[self.chain[height]]

    def active_channels(self) -> frozenset[int]:
        return self.gov.active_channels()

    def minted_total(self) -> int:
        genesis_coins = sum(v for _, v in self.params.genesis_allocation)
        return genesis_coins + self.height * self.params.block_subsidy

    def supply(self) -> int:
        return sum(s.total_value() for s in self.states.values())

    def digest(self, channel: int) -> bytes:
        return self.states[channel].digest()

    # -- epoch machinery -----------------------------------------------------------

    def _resolve_leader(self, parent: KeyBlock) -> bytes | None:
        return None if parent.height == 0 and parent.miner == ZERO32 else parent.miner

    def _run_epoch(
        self, kb_height: int, parent: KeyBlock, microblocks: dict[int, list[MicroBlock]]
    ) -> _EpochRun:
        """Apply one epoch's microblocks onto staged copies of the states."""
        leader = self._resolve_leader(parent)
        active = self.gov.active_channels()
        staged_gov = self.gov.copy()
        states: dict[int, ledger.ChannelState] = {}
        fees: dict[int, int] = {}
        confirmed: dict[int, list[bytes]] = {}
        registrations: list[bytes] = []
        fraud_txs: list[FraudProof] = []
        pending: list = []

        for ch in sorted(self.states):
            chain = microblocks.get(ch, [])
            staged = self.states[ch].copy()
            staged.height = kb_height
            staged.pending_transfers = []
            if chain and leader is None:
                raise BadChain("microblocks in the leaderless genesis epoch")
            ctx = ledger.TxContext(params=self.params, active_channels=active, leader=leader)
            proto = staged_gov.descriptor(ch)
            total_fee = 0
            tx_hashes: list[bytes] = []
            for mb in chain:
                staged = ledger.apply_microblock(mb, staged, proto, ctx)
                for tx in mb.txs:
                    tx_hash = block_hash(tx)
                    tx_hashes.append(tx_hash)
                    total_fee += getattr(tx, "fee", 0)
                    if isinstance(tx, Registration):
                        gov_mod.register_proposal(staged_gov, tx, tx_hash)
                        registrations.append(tx_hash)
                    elif isinstance(tx, FraudProof):
                        fraud_txs.append(tx)
            if total_fee:
                fees[ch] = total_fee
            if tx_hashes:
                confirmed[ch] = tx_hashes
            if ch == PAYMENT_CHANNEL:
                pending = staged.pending_transfers
            states[ch] = staged
        return _EpochRun(
            states=states,
            gov=staged_gov,
            fees=fees,
            pending=pending,
            confirmed=confirmed,
            registrations=registrations,
            fraud_txs=fraud_txs,
        )

    def _check_refs(self, kb: KeyBlock, microblocks: dict[int, list[MicroBlock]]) -> None:
        if len(kb.channel_refs) > self.params.max_channel_refs:
            raise TooManyRefs(
                f"{len(kb.channel_refs)} refs exceed {self.params.max_channel_refs}"
            )
        active = self.gov.active_channels()
        for ch, tail in kb.channel_refs.items():
            if ch not in active:
                raise BadChannelRef(f"ref to unknown channel {ch}")
            if not self._tracks(ch):
                continue
            chain = microblocks.get(ch, [])
            if not chain:
                raise BadChain(f"missing microblocks for referenced channel {ch}")
            if block_hash(chain[-1]) != tail:
                raise BadChannelRef(f"ref for channel {ch} does not match the resolved tail")
            if not any(mb.txs for mb in chain):
                raise InertChannelListed(f"channel {ch} had no transactions this epoch")
        for ch, chain in microblocks.items():
            if chain and ch not in kb.channel_refs:
                raise BadChannelRef(f"resolved microblocks for unreferenced channel {ch}")

    def _check_header(self, kb: KeyBlock) -> None:
        if kb.prev != self.tip_hash:
            raise BadChain("key block does not extend the current tip")
        if kb.height != self.height + 1:
            raise BadHeight(f"height {kb.height} after {self.height}")
        if kb.work != consensus.WORK_PER_BLOCK:
            raise BadWork("key blocks carry exactly one work unit")
        if kb.work_nonce != consensus.expected_work_nonce(kb.prev, kb.height, kb.miner):
            raise BadWork("work witness does not verify")

    def _check_coinbase(self, kb: KeyBlock, fees: dict[int, int], previous_miner) -> None:
        if self.subscribed is None:
            rewards.verify_coinbase(kb, self.params, previous_miner, fees)
            return
        # partial view: verify the slice of the coinbase this node can recompute
        if kb.coinbase.height != kb.height:
            raise BadCoinbase("coinbase height mismatch")
        subsidy_out = kb.coinbase.outputs[0] if kb.coinbase.outputs else None
        if (
            subsidy_out is None
            or subsidy_out.value != self.params.block_subsidy
            or subsidy_out.owner != kb.miner
            or subsidy_out.spend_channel != PAYMENT_CHANNEL
        ):
            raise BadCoinbase("subsidy output missing or malformed")
        for ch in sorted(self.states):
            expected = rewards.expected_channel_outputs(
                self.params, ch, fees.get(ch, 0), kb.miner, previous_miner
            )
            got = [o for o in kb.coinbase.outputs[1:] if o.spend_channel == ch]
            if got != expected:
                raise BadCoinbase(f"coinbase outputs for channel {ch} do not match fees")

    def _apply_coinbase(self, kb: KeyBlock, states: dict[int, ledger.ChannelState]) -> None:
        cb_hash = block_hash(kb.coinbase)
        for idx, out in enumerate(kb.coinbase.outputs):
            state = states.get(out.spend_channel)
            if state is None:
                continue
            op = OutPoint(tx_hash=cb_hash, index=idx)
            state.utxo[op] = out
            state.coinbase_heights[op] = kb.height

    def _check_fraud_reports(self, kb: KeyBlock) -> None:
        from . import crypto
        from .codec import tx_sighash

        seen: set[bytes] = set()
        for report in kb.fraud_reports:
            consensus.verify_fraud_evidence(report.evidence)
            if not crypto.verify_sig(tx_sighash(report), report.sig, report.reporter):
                raise BadEvidence("reporter signature invalid")
            offense = consensus.fork_offense_key(report.evidence)
            if offense in self.applied_fraud or offense in seen:
                raise BadEvidence("this fork has already been prosecuted on this chain")
            seen.add(offense)
            epoch_hash = report.evidence.first.epoch
            if epoch_hash not in self.kbs or epoch_hash not in self.chain_set():
                raise BadEvidence("accused epoch is not on this chain")

    def chain_set(self) -> set[bytes]:
        if self._chain_set_cache is None or self._chain_set_cache[0] != len(self.chain):
            self._chain_set_cache = (len(self.chain), set(self.chain))
        return self._chain_set_cache[1]

    def _apply_fraud_reports(
        self, kb: KeyBlock, states: dict[int, ledger.ChannelState]
    ) -> list[tuple[bytes, int, int]]:
        revocations = []
        for report in kb.fraud_reports:
            epoch_hash = report.evidence.first.epoch
            epoch_kb = self.kbs[epoch_hash]
            coinbases = [epoch_kb.coinbase]
            # the serializer share for the accused epoch is paid one block
            # later; sweep it only when that block is someone else's, since a
            # consecutive self-mined block is the next epoch's own reward
            next_height = epoch_kb.height + 1
            next_kb = None
            if next_height < kb.height:
                next_kb = self.kb_at(next_height)
            elif next_height == kb.height:
                next_kb = kb
            if next_kb is not None and next_kb.miner != epoch_kb.miner:
                coinbases.append(next_kb.coinbase)
            revoked, credit = consensus.apply_fraud_report(
                report,
                states,
                epoch_kb,
                coinbases,
                self.params,
                kb.height,
                already_revoked=self.revoked_outpoints,
            )
            self.applied_fraud.add(consensus.fork_offense_key(report.evidence))
            self.burned += revoked - credit
            revocations.append((epoch_kb.miner, epoch_kb.height, revoked, credit))
        return revocations

    # -- the transition ---------------------------------------------------------------

    def apply_key_block(
        self,
        kb: KeyBlock,
        microblocks: dict[int, list[MicroBlock]],
        inflow_proofs: list[InflowProof] | None = None,
    ) -> ApplyResult:
        """Validate and commit one key block plus the epoch it closes.

        ``microblocks`` holds the resolved chain per tracked channel in apply
        order.  ``inflow_proofs`` is required by nodes that do not track
        channel 0; nodes that do derive the inflows themselves and verify the
        commitments recompute exactly.
        """
        kb_hash = block_hash(kb)
        try:
            return self._apply_key_block(kb, kb_hash, microblocks, inflow_proofs)
        except Violation as v:
            raise v.at_block(kb_hash)

    def _apply_key_block(
        self,
        kb: KeyBlock,
        kb_hash: bytes,
        microblocks: dict[int, list[MicroBlock]],
        inflow_proofs: list[InflowProof] | None,
    ) -> ApplyResult:
        self._check_header(kb)
        parent = self.tip
        self._check_refs(kb, microblocks)
        run = self._run_epoch(kb.height, parent, microblocks)

        result = ApplyResult(kb_hash=kb_hash, height=kb.height)
        result.confirmed = run.confirmed
        result.registrations = run.registrations
        result.fraud_txs = run.fraud_txs
        result.fees = run.fees

        # funding commitments and credits
        tracks_payment = PAYMENT_CHANNEL in self.states
        if tracks_payment:
            expected = {
                ch: merkle_root(ls) for ch, ls in ledger.inflow_leaves(run.pending).items()
            }
            if kb.inflow_commitments != expected:
                raise BadInflowCommitment("inflow commitments do not recompute")
            proofs = ledger.build_inflow_proofs(run.pending, kb_hash)
            result.inflow_proofs = proofs
        else:
            proofs = list(inflow_proofs or [])
        for proof in proofs:
            state = run.states.get(proof.channel)
            if state is None:
                continue
            root = kb.inflow_commitments.get(proof.channel)
            if root is None:
                raise BadProof("no commitment for the inflow's channel")
            if proof.key_block != kb_hash:
                raise BadProof("inflow proof targets a different key block")
            run.states[proof.channel] = ledger.credit_inflows(state, [proof], root)

        previous_miner = self._resolve_leader(parent)
        self._check_coinbase(kb, run.fees, previous_miner)
        self._apply_coinbase(kb, run.states)

        self._check_fraud_reports(kb)
        result.revocations = self._apply_fraud_reports(kb, run.states)

        # governance: ballots count after this epoch's registrations confirm
        if kb.ballot is not None and kb.ballot not in run.gov.proposals:
            raise BadBallot("ballot references an unconfirmed proposal")
        gov_mod.record_ballot(run.gov, kb)
        if self.params.is_activation_height(kb.height):
            winner = gov_mod.tally_window(run.gov, self.params)
            if winner is not None:
                created = gov_mod.activate(run.gov, winner, kb.height)
                result.activated_proposal = winner.tx_hash
                for ch in created:
                    if self._tracks(ch):
                        run.states[ch] = ledger.ChannelState(
                            channel=ch, height=kb.height, tip=kb_hash
                        )
                result.activations = created

        # commit
        for ch, state in run.states.items():
            state.tip = kb_hash
            state.height = kb.height
            state.pending_transfers = []
        self.states = run.states
        self.gov = run.gov
        for ch, amount in run.fees.items():
            self.fee_ledger.record(parent.height, ch, amount)
        for tx_hashes in run.confirmed.values():
            self.confirmed_txs.update(tx_hashes)
        self.kbs[kb_hash] = kb
        self.chain.append(kb_hash)
        self._chain_set_cache = None
        return result

    # -- assembly ---------------------------------------------------------------------

    def build_key_block(
        self,
        miner: bytes,
        chains: dict[int, list[MicroBlock]],
        ballot: bytes | None,
        fraud_reports: tuple[FraudProof, ...] = (),
    ) -> KeyBlock:
        """Construct the key block sealing the current epoch with the given
        microblock chains.  The result passes :meth:`apply_key_block` on any
        node that saw the same chains."""
        parent = self.tip
        height = self.height + 1
        chains = {ch: chain for ch, chain in chains.items() if chain and any(mb.txs for mb in chain)}
        if len(chains) > self.params.max_channel_refs:
            # lowest service numbers keep their refs when the cap binds
            keep = sorted(chains)[: self.params.max_channel_refs]
            chains = {ch: chains[ch] for ch in keep}
        run = self._run_epoch(height, parent, chains)
        refs = {ch: block_hash(chain[-1]) for ch, chain in chains.items()}
        commitments = {
            ch: merkle_root(ls) for ch, ls in ledger.inflow_leaves(run.pending).items()
        }
        if ballot is not None and ballot not in run.gov.proposals:
            ballot = None
        coinbase = rewards.build_coinbase(
            self.params, height, miner, self._resolve_leader(parent), run.fees
        )
        return KeyBlock(
            prev=self.tip_hash,
            height=height,
            channel_refs=refs,
            inflow_commitments=commitments,
            ballot=ballot,
            coinbase=coinbase,
            fraud_reports=fraud_reports,
            miner=miner,
            work_nonce=consensus.expected_work_nonce(self.tip_hash, height, miner),
            work=consensus.WORK_PER_BLOCK,
        )

    # -- late inflows ------------------------------------------------------------------

    def credit_late_inflow(self, proof: InflowProof) -> bool:
        """Credit an inflow proof that arrived after its key block was applied.

        Returns False for duplicates; raises BadProof for invalid ones.  The
        credit is recorded at the key block's height so replay and live state
        agree bit for bit.
        """
        if proof.channel not in self.states:
            return False
        if proof.key_block not in self.chain_set():
            raise BadProof("inflow proof targets a block off this chain")
        kb = self.kbs[proof.key_block]
        root = kb.inflow_commitments.get(proof.channel)
        if root is None:
            raise BadProof("no commitment for the inflow's channel")
        state = self.states[proof.channel]
        try:
            self.states[proof.channel] = ledger.credit_inflows(
                state, [proof], root, at_height=kb.height
            )
        except DuplicateInflow:
            return False
        return True
