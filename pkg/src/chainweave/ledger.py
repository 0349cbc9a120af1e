"""Per-channel transaction validation and state transitions.

Each channel owns an independent UTXO set; the only cross-channel traffic is
a channel-0 funding transaction whose non-payment outputs are queued here and
committed into the next key block, where destination channels credit them
against the commitment root.  Microblocks apply atomically: one bad
transaction rejects the whole block and leaves the state untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, merkle
from .codec import block_hash, canonical_encode, encoded_size, tx_sighash
from .errors import (
    BadBalance,
    BadEvidence,
    BadProof,
    BadSignature,
    DoubleSpend,
    DuplicateInflow,
    DuplicateServiceNumber,
    FeeTooLow,
    ImmatureSpend,
    MalformedDescriptor,
    OverSize,
    StaleTip,
    UnknownChannel,
    UnknownInput,
    WrongChannel,
)
from .params import PAYMENT_CHANNEL, REGISTRATION_CHANNEL, ChainParams
from .types import (
    ChannelFunding,
    Coinbase,
    FraudProof,
    InflowProof,
    InflowRecord,
    MicroBlock,
    OutPoint,
    Output,
    Payment,
    ProtocolDescriptor,
    Registration,
    ServiceTx,
    Transaction,
)


@dataclass
class ChannelState:
    """UTXO set and bookkeeping for one channel.

    ``height`` is the key block height whose epoch is currently being applied
    (or was last applied).  ``credited`` is the inflow log: every funding
    output accepted into this channel, keyed by outpoint so replay order never
    affects equality.  ``pending_transfers`` only fills on channel 0 and holds
    the current epoch's outbound funding outputs until they are committed.
    """

    channel: int
    height: int = 0
    tip: bytes = b"\x00" * 32
    utxo: dict[OutPoint, Output] = field(default_factory=dict)
    spent: set[OutPoint] = field(default_factory=set)
    coinbase_heights: dict[OutPoint, int] = field(default_factory=dict)
    credited: dict[OutPoint, tuple[int, Output]] = field(default_factory=dict)
    pending_transfers: list[tuple[OutPoint, Output]] = field(default_factory=list)

    def copy(self) -> "ChannelState":
        return ChannelState(
            channel=self.channel,
            height=self.height,
            tip=self.tip,
            utxo=dict(self.utxo),
            spent=set(self.spent),
            coinbase_heights=dict(self.coinbase_heights),
            credited=dict(self.credited),
            pending_transfers=list(self.pending_transfers),
        )

    def digest(self) -> bytes:
        """Canonical digest of the full channel state; sorted so that two
        nodes reaching the same state byte-agree regardless of event order."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.channel.to_bytes(8, "big"))
        h.update(self.height.to_bytes(8, "big"))
        h.update(self.tip)
        for op in sorted(self.utxo, key=_op_key):
            h.update(canonical_encode(op))
            h.update(canonical_encode(self.utxo[op]))
        for op in sorted(self.spent, key=_op_key):
            h.update(canonical_encode(op))
        for op in sorted(self.coinbase_heights, key=_op_key):
            h.update(canonical_encode(op))
            h.update(self.coinbase_heights[op].to_bytes(8, "big"))
        for op in sorted(self.credited, key=_op_key):
            height, out = self.credited[op]
            h.update(canonical_encode(op))
            h.update(height.to_bytes(8, "big"))
            h.update(canonical_encode(out))
        for op, out in sorted(self.pending_transfers, key=lambda t: _op_key(t[0])):
            h.update(canonical_encode(op))
            h.update(canonical_encode(out))
        return h.digest()

    def total_value(self) -> int:
        return sum(o.value for o in self.utxo.values())

    def owned_by(self, owner: bytes) -> dict[OutPoint, Output]:
        return {op: o for op, o in self.utxo.items() if o.owner == owner}


def _op_key(op: OutPoint) -> tuple[bytes, int]:
    return (op.tx_hash, op.index)


@dataclass(frozen=True)
class TxContext:
    """Everything validation needs beyond the channel state itself."""

    params: ChainParams
    active_channels: frozenset[int]
    leader: bytes | None = None


def check_descriptor(d: ProtocolDescriptor) -> None:
    if d.service_number < 0:
        raise MalformedDescriptor("negative service number")
    if d.max_tx_bytes <= 0 or d.max_microblock_bytes <= 0:
        raise MalformedDescriptor("descriptor limits must be positive")
    if d.max_tx_bytes > d.max_microblock_bytes:
        raise MalformedDescriptor("tx limit exceeds microblock limit")
    if not d.microblock_interval > 0:
        raise MalformedDescriptor("microblock interval must be positive")


def check_registration(tx: Registration) -> None:
    seen: set[int] = set()
    for d in tx.descriptors:
        check_descriptor(d)
        if d.service_number in seen:
            raise DuplicateServiceNumber(f"service {d.service_number} repeated in proposal")
        seen.add(d.service_number)
    if not tx.descriptors:
        raise MalformedDescriptor("proposal carries no descriptors")


def validate_tx(
    tx: Transaction,
    state: ChannelState,
    proto: ProtocolDescriptor,
    ctx: TxContext,
) -> None:
    """Raise a violation unless ``tx`` is valid for this channel right now.

    Checks, in order: variant permitted in this channel, encoded size,
    duplicate inputs, input existence and maturity, ownership signatures,
    value balance, and output destination rules.
    """
    if isinstance(tx, Coinbase):
        raise WrongChannel("coinbase only appears in key blocks")
    if isinstance(tx, ChannelFunding) and state.channel != PAYMENT_CHANNEL:
        raise WrongChannel("funding transactions live on channel 0")
    if isinstance(tx, Registration) and state.channel != REGISTRATION_CHANNEL:
        raise WrongChannel("proposals live on channel 1")
    if isinstance(tx, FraudProof) and state.channel != PAYMENT_CHANNEL:
        raise WrongChannel("fraud reports live on channel 0")
    if isinstance(tx, ServiceTx) and tx.service_number != state.channel:
        raise WrongChannel(
            f"service tx for channel {tx.service_number} submitted to {state.channel}"
        )

    if encoded_size(tx) > proto.max_tx_bytes:
        raise OverSize(f"transaction exceeds {proto.max_tx_bytes} bytes")

    if isinstance(tx, Registration):
        check_registration(tx)
        if not crypto.verify_sig(tx_sighash(tx), tx.sig, tx.proposer):
            raise BadSignature("proposal signature invalid")
        return

    if isinstance(tx, FraudProof):
        _check_fraud_shape(tx)
        return

    # value-moving variants: Payment, ChannelFunding, ServiceTx
    sighash = tx_sighash(tx)
    seen: set[OutPoint] = set()
    total_in = 0
    for txin in tx.inputs:
        op = txin.outpoint
        if op in seen:
            raise DoubleSpend(f"outpoint {op.tx_hash.hex()[:12]}:{op.index} spent twice in one tx")
        seen.add(op)
        out = state.utxo.get(op)
        if out is None:
            if op in state.spent:
                raise DoubleSpend(f"outpoint {op.tx_hash.hex()[:12]}:{op.index} already spent")
            raise UnknownInput(f"no such unspent output {op.tx_hash.hex()[:12]}:{op.index}")
        mint = state.coinbase_heights.get(op)
        if mint is not None and mint > 0 and state.height < mint + ctx.params.coinbase_maturity:
            raise ImmatureSpend(f"coinbase output not spendable until height {mint + ctx.params.coinbase_maturity}")
        if txin.pubkey != out.owner:
            raise BadSignature("input signed by key that does not own the output")
        if not crypto.verify_sig(sighash, txin.sig, txin.pubkey):
            raise BadSignature("input signature invalid")
        total_in += out.value
    if not tx.inputs:
        raise UnknownInput("transaction spends nothing")

    total_out = 0
    for out in tx.outputs:
        if out.value <= 0:
            raise BadBalance("outputs must carry positive value")
        total_out += out.value
    if tx.fee < 0 or total_in != total_out + tx.fee:
        raise BadBalance(f"inputs {total_in} != outputs {total_out} + fee {tx.fee}")

    if isinstance(tx, ChannelFunding):
        validate_channel_funding(tx, state, ctx)
    else:
        for out in tx.outputs:
            if out.spend_channel != state.channel:
                raise WrongChannel("outputs of this variant stay in their channel")


def validate_channel_funding(tx: ChannelFunding, state: ChannelState, ctx: TxContext) -> None:
    """Funding-specific rules; balance and signatures are checked by
    :func:`validate_tx`.  Every output must name an active destination channel
    so no unspendable output can ever be created."""
    if state.channel != PAYMENT_CHANNEL:
        raise WrongChannel("funding transactions live on channel 0")
    for out in tx.outputs:
        if out.spend_channel not in ctx.active_channels:
            raise UnknownChannel(f"destination channel {out.spend_channel} is not active")
    if tx.fee < ctx.params.min_funding_fee:
        raise FeeTooLow(f"funding fee {tx.fee} below minimum {ctx.params.min_funding_fee}")


def _check_fraud_shape(tx: FraudProof) -> None:
    ev = tx.evidence
    a, b = ev.first, ev.second
    if (a.channel, a.epoch, a.prev, a.leader) != (b.channel, b.epoch, b.prev, b.leader):
        raise BadEvidence("headers do not describe a same-leader fork")
    if block_hash(a) == block_hash(b):
        raise BadEvidence("headers are identical")
    if not crypto.verify_sig(tx_sighash(tx), tx.sig, tx.reporter):
        raise BadSignature("fraud report signature invalid")


def apply_validated_tx(tx: Transaction, state: ChannelState) -> None:
    """Mutate ``state`` with an already-validated transaction."""
    if isinstance(tx, (Registration, FraudProof)):
        return  # confirmed content; no value movement inside the channel
    tx_hash = block_hash(tx)
    for txin in tx.inputs:
        del state.utxo[txin.outpoint]
        state.spent.add(txin.outpoint)
    for idx, out in enumerate(tx.outputs):
        op = OutPoint(tx_hash=tx_hash, index=idx)
        if isinstance(tx, ChannelFunding) and out.spend_channel != PAYMENT_CHANNEL:
            state.pending_transfers.append((op, out))
        else:
            state.utxo[op] = out


def apply_microblock(
    mb: MicroBlock,
    state: ChannelState,
    proto: ProtocolDescriptor,
    ctx: TxContext,
) -> ChannelState:
    """Validate and apply a whole microblock, returning the new state.

    Raises on the first violation without touching the input state.  The
    leader signature is checked against ``ctx.leader`` when provided.
    """
    from .codec import microblock_sighash

    if mb.channel != state.channel:
        raise WrongChannel(f"microblock for channel {mb.channel} applied to {state.channel}")
    if mb.prev != state.tip:
        raise StaleTip("microblock does not extend the current tip")
    if ctx.leader is not None:
        if mb.leader != ctx.leader:
            raise BadSignature("microblock not signed by the epoch leader")
        if not crypto.verify_sig(microblock_sighash(mb), mb.sig, mb.leader):
            raise BadSignature("leader signature invalid")
    if encoded_size(mb) > proto.max_microblock_bytes:
        raise OverSize(f"microblock exceeds {proto.max_microblock_bytes} bytes")

    staged = state.copy()
    for tx in mb.txs:
        validate_tx(tx, staged, proto, ctx)
        apply_validated_tx(tx, staged)
    staged.tip = block_hash(mb)
    return staged


# -- inflow commitments ------------------------------------------------------------


def inflow_leaves(pending: list[tuple[OutPoint, Output]]) -> dict[int, list[bytes]]:
    """Group an epoch's outbound funding outputs by destination channel and
    return the canonical leaf encodings, sorted for a deterministic tree."""
    by_channel: dict[int, list[tuple[OutPoint, Output]]] = {}
    for op, out in pending:
        by_channel.setdefault(out.spend_channel, []).append((op, out))
    leaves: dict[int, list[bytes]] = {}
    for channel, entries in by_channel.items():
        entries.sort(key=lambda t: _op_key(t[0]))
        leaves[channel] = [
            canonical_encode(InflowRecord(outpoint=op, output=out)) for op, out in entries
        ]
    return leaves


def build_inflow_commitment(pending: list[tuple[OutPoint, Output]]) -> dict[int, bytes]:
    """Per-channel merkle roots over the epoch's funding outputs; channels
    with nothing inbound are simply absent."""
    return {ch: merkle.merkle_root(ls) for ch, ls in inflow_leaves(pending).items()}


def build_inflow_proofs(
    pending: list[tuple[OutPoint, Output]], key_block: bytes
) -> list[InflowProof]:
    """Proof for every leaf, ready to gossip to destination-channel users."""
    proofs: list[InflowProof] = []
    for channel, leaves in sorted(inflow_leaves(pending).items()):
        for idx, leaf in enumerate(leaves):
            from .codec import canonical_decode

            rec = canonical_decode(leaf)
            proofs.append(
                InflowProof(
                    key_block=key_block,
                    channel=channel,
                    record=rec,
                    siblings=tuple(merkle.merkle_proof(leaves, idx)),
                )
            )
    return proofs


def credit_inflows(
    state: ChannelState,
    proofs: list[InflowProof],
    commitment_root: bytes,
    at_height: int | None = None,
) -> ChannelState:
    """Add proven funding outputs to a non-payment channel's UTXO set.

    ``at_height`` pins the inflow-log entry to the committing key block's
    height; late-arriving proofs must not log the height they happened to
    arrive at, or replay and live state would disagree.
    """
    if state.channel == PAYMENT_CHANNEL:
        raise WrongChannel("channel 0 keeps its funding change directly")
    staged = state.copy()
    height = state.height if at_height is None else at_height
    for proof in proofs:
        rec = proof.record
        if proof.channel != state.channel or rec.output.spend_channel != state.channel:
            raise BadProof("inflow destined to a different channel")
        leaf = canonical_encode(rec)
        if not merkle.verify_proof(leaf, proof.siblings, commitment_root):
            raise BadProof("merkle path does not reach the commitment root")
        if rec.outpoint in staged.credited or rec.outpoint in staged.utxo:
            raise DuplicateInflow("inflow already credited")
        staged.utxo[rec.outpoint] = rec.output
        staged.credited[rec.outpoint] = (height, rec.output)
    return staged
