"""Canonical byte encoding, decoding, and hashing for on-chain objects.

The encoding is injective: fixed field order, fixed-width unsigned integers,
length-prefixed byte strings, maps sorted by key, and a one-byte tag in front
of every variant.  It doubles as the block-store record format and the wire
format, so ``decode(encode(x)) == x`` must hold bit-exactly for every valid
object.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import replace

from .errors import CodecError
from .types import (
    ChannelFunding,
    Coinbase,
    FraudEvidence,
    FraudProof,
    InflowProof,
    InflowRecord,
    KeyBlock,
    MicroBlock,
    MicroBlockHeader,
    OutPoint,
    Output,
    Payment,
    ProtocolDescriptor,
    Registration,
    ServiceTx,
    Transaction,
    TxInput,
)
from .params import ChainParams

U64_MAX = (1 << 64) - 1

TAG_PAYMENT = 1
TAG_FUNDING = 2
TAG_SERVICE = 3
TAG_REGISTRATION = 4
TAG_FRAUD = 5
TAG_COINBASE = 6

KIND_TX = 0x10
KIND_MICROBLOCK = 0x11
KIND_KEYBLOCK = 0x12
KIND_HEADER = 0x13
KIND_EVIDENCE = 0x14
KIND_OUTPUT = 0x15
KIND_OUTPOINT = 0x16
KIND_DESCRIPTOR = 0x17
KIND_PARAMS = 0x18
KIND_INFLOW_RECORD = 0x19
KIND_INFLOW_PROOF = 0x1A


class Writer:
    __slots__ = ("buf",)

    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        if not 0 <= v <= 0xFF:
            raise CodecError(f"u8 out of range: {v}")
        self.buf.append(v)

    def u32(self, v: int) -> None:
        if not 0 <= v <= 0xFFFFFFFF:
            raise CodecError(f"u32 out of range: {v}")
        self.buf += v.to_bytes(4, "big")

    def u64(self, v: int) -> None:
        if not 0 <= v <= U64_MAX:
            raise CodecError(f"u64 out of range: {v}")
        self.buf += v.to_bytes(8, "big")

    def f64(self, v: float) -> None:
        if math.isnan(v):
            raise CodecError("NaN is not encodable")
        self.buf += struct.pack(">d", v)

    def raw32(self, v: bytes) -> None:
        if len(v) != 32:
            raise CodecError(f"expected 32 bytes, got {len(v)}")
        self.buf += v

    def blob(self, v: bytes) -> None:
        self.u32(len(v))
        self.buf += v

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class Reader:
    __slots__ = ("data", "off")

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.off = 0

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CodecError("truncated encoding")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self._take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def raw32(self) -> bytes:
        return self._take(32)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def finish(self) -> None:
        if self.off != len(self.data):
            raise CodecError("trailing bytes after decode")


# -- field helpers -------------------------------------------------------------


def _w_output(w: Writer, o: Output) -> None:
    w.u64(o.value)
    w.raw32(o.owner)
    w.u64(o.spend_channel)


def _r_output(r: Reader) -> Output:
    return Output(value=r.u64(), owner=r.raw32(), spend_channel=r.u64())


def _w_outpoint(w: Writer, p: OutPoint) -> None:
    w.raw32(p.tx_hash)
    w.u64(p.index)


def _r_outpoint(r: Reader) -> OutPoint:
    return OutPoint(tx_hash=r.raw32(), index=r.u64())


def _w_input(w: Writer, i: TxInput) -> None:
    _w_outpoint(w, i.outpoint)
    w.raw32(i.pubkey)
    w.blob(i.sig)


def _r_input(r: Reader) -> TxInput:
    return TxInput(outpoint=_r_outpoint(r), pubkey=r.raw32(), sig=r.blob())


def _w_descriptor(w: Writer, d: ProtocolDescriptor) -> None:
    w.u64(d.service_number)
    w.u64(d.max_tx_bytes)
    w.u64(d.max_microblock_bytes)
    w.f64(d.microblock_interval)
    w.u64(d.payload_schema_id)


def _r_descriptor(r: Reader) -> ProtocolDescriptor:
    return ProtocolDescriptor(
        service_number=r.u64(),
        max_tx_bytes=r.u64(),
        max_microblock_bytes=r.u64(),
        microblock_interval=r.f64(),
        payload_schema_id=r.u64(),
    )


def _w_header(w: Writer, h: MicroBlockHeader) -> None:
    w.u64(h.channel)
    w.raw32(h.epoch)
    w.raw32(h.prev)
    w.raw32(h.txs_hash)
    w.raw32(h.leader)
    w.blob(h.sig)


def _r_header(r: Reader) -> MicroBlockHeader:
    return MicroBlockHeader(
        channel=r.u64(),
        epoch=r.raw32(),
        prev=r.raw32(),
        txs_hash=r.raw32(),
        leader=r.raw32(),
        sig=r.blob(),
    )


def _w_evidence(w: Writer, ev: FraudEvidence) -> None:
    _w_header(w, ev.first)
    _w_header(w, ev.second)


def _r_evidence(r: Reader) -> FraudEvidence:
    return FraudEvidence(first=_r_header(r), second=_r_header(r))


def _w_tx(w: Writer, tx: Transaction) -> None:
    if isinstance(tx, Payment):
        w.u8(TAG_PAYMENT)
        _w_io(w, tx.inputs, tx.outputs, tx.fee)
    elif isinstance(tx, ChannelFunding):
        w.u8(TAG_FUNDING)
        _w_io(w, tx.inputs, tx.outputs, tx.fee)
    elif isinstance(tx, ServiceTx):
        w.u8(TAG_SERVICE)
        w.u64(tx.service_number)
        w.blob(tx.payload)
        _w_io(w, tx.inputs, tx.outputs, tx.fee)
    elif isinstance(tx, Registration):
        w.u8(TAG_REGISTRATION)
        w.u32(len(tx.descriptors))
        for d in tx.descriptors:
            _w_descriptor(w, d)
        w.raw32(tx.proposer)
        w.blob(tx.sig)
    elif isinstance(tx, FraudProof):
        w.u8(TAG_FRAUD)
        _w_evidence(w, tx.evidence)
        w.raw32(tx.reporter)
        w.blob(tx.sig)
    elif isinstance(tx, Coinbase):
        w.u8(TAG_COINBASE)
        w.u64(tx.height)
        w.u32(len(tx.outputs))
        for o in tx.outputs:
            _w_output(w, o)
    else:
        raise CodecError(f"not a transaction: {type(tx).__name__}")


def _w_io(w: Writer, inputs, outputs, fee: int) -> None:
    w.u32(len(inputs))
    for i in inputs:
        _w_input(w, i)
    w.u32(len(outputs))
    for o in outputs:
        _w_output(w, o)
    w.u64(fee)


def _r_io(r: Reader):
    inputs = tuple(_r_input(r) for _ in range(r.u32()))
    outputs = tuple(_r_output(r) for _ in range(r.u32()))
    return inputs, outputs, r.u64()


def _r_tx(r: Reader) -> Transaction:
    tag = r.u8()
    if tag == TAG_PAYMENT:
        i, o, f = _r_io(r)
        return Payment(inputs=i, outputs=o, fee=f)
    if tag == TAG_FUNDING:
        i, o, f = _r_io(r)
        return ChannelFunding(inputs=i, outputs=o, fee=f)
    if tag == TAG_SERVICE:
        num = r.u64()
        payload = r.blob()
        i, o, f = _r_io(r)
        return ServiceTx(service_number=num, payload=payload, inputs=i, outputs=o, fee=f)
    if tag == TAG_REGISTRATION:
        descs = tuple(_r_descriptor(r) for _ in range(r.u32()))
        return Registration(descriptors=descs, proposer=r.raw32(), sig=r.blob())
    if tag == TAG_FRAUD:
        return FraudProof(evidence=_r_evidence(r), reporter=r.raw32(), sig=r.blob())
    if tag == TAG_COINBASE:
        height = r.u64()
        outs = tuple(_r_output(r) for _ in range(r.u32()))
        return Coinbase(height=height, outputs=outs)
    raise CodecError(f"unknown transaction tag {tag}")


def _w_microblock(w: Writer, mb: MicroBlock) -> None:
    w.u64(mb.channel)
    w.raw32(mb.epoch)
    w.raw32(mb.prev)
    w.u32(len(mb.txs))
    for tx in mb.txs:
        _w_tx(w, tx)
    w.raw32(mb.leader)
    w.blob(mb.sig)


def _r_microblock(r: Reader) -> MicroBlock:
    channel = r.u64()
    epoch = r.raw32()
    prev = r.raw32()
    txs = tuple(_r_tx(r) for _ in range(r.u32()))
    return MicroBlock(channel=channel, epoch=epoch, prev=prev, txs=txs, leader=r.raw32(), sig=r.blob())


def _w_hashmap(w: Writer, m: dict[int, bytes]) -> None:
    w.u32(len(m))
    for k in sorted(m):
        w.u64(k)
        w.raw32(m[k])


def _r_hashmap(r: Reader) -> dict[int, bytes]:
    n = r.u32()
    out: dict[int, bytes] = {}
    last = -1
    for _ in range(n):
        k = r.u64()
        if k <= last:
            raise CodecError("map keys not strictly ascending")
        last = k
        out[k] = r.raw32()
    return out


def _w_keyblock(w: Writer, kb: KeyBlock) -> None:
    w.raw32(kb.prev)
    w.u64(kb.height)
    _w_hashmap(w, kb.channel_refs)
    _w_hashmap(w, kb.inflow_commitments)
    if kb.ballot is None:
        w.u8(0)
    else:
        w.u8(1)
        w.raw32(kb.ballot)
    _w_tx(w, kb.coinbase)
    w.u32(len(kb.fraud_reports))
    for rep in kb.fraud_reports:
        _w_evidence(w, rep.evidence)
        w.raw32(rep.reporter)
        w.blob(rep.sig)
    w.raw32(kb.miner)
    w.raw32(kb.work_nonce)
    w.u64(kb.work)


def _r_keyblock(r: Reader) -> KeyBlock:
    prev = r.raw32()
    height = r.u64()
    refs = _r_hashmap(r)
    inflows = _r_hashmap(r)
    ballot = r.raw32() if r.u8() == 1 else None
    coinbase = _r_tx(r)
    if not isinstance(coinbase, Coinbase):
        raise CodecError("key block coinbase has wrong variant")
    reports = tuple(
        FraudProof(evidence=_r_evidence(r), reporter=r.raw32(), sig=r.blob())
        for _ in range(r.u32())
    )
    return KeyBlock(
        prev=prev,
        height=height,
        channel_refs=refs,
        inflow_commitments=inflows,
        ballot=ballot,
        coinbase=coinbase,
        fraud_reports=reports,
        miner=r.raw32(),
        work_nonce=r.raw32(),
        work=r.u64(),
    )


def _w_params(w: Writer, p: ChainParams) -> None:
    w.f64(p.activation_threshold)
    w.u64(p.activation_interval)
    w.f64(p.target_keyblock_interval)
    w.u64(p.max_channel_refs)
    w.u64(p.min_funding_fee)
    w.u64(p.block_subsidy)
    w.f64(p.serializer_fee_share)
    w.u64(p.coinbase_maturity)
    w.u32(len(p.genesis_allocation))
    for owner, value in p.genesis_allocation:
        w.raw32(owner)
        w.u64(value)


def _w_inflow_record(w: Writer, rec: InflowRecord) -> None:
    _w_outpoint(w, rec.outpoint)
    _w_output(w, rec.output)


def _r_inflow_record(r: Reader) -> InflowRecord:
    return InflowRecord(outpoint=_r_outpoint(r), output=_r_output(r))


def _w_inflow_proof(w: Writer, p: InflowProof) -> None:
    w.raw32(p.key_block)
    w.u64(p.channel)
    _w_inflow_record(w, p.record)
    w.u32(len(p.siblings))
    for sib, is_right in p.siblings:
        w.raw32(sib)
        w.u8(1 if is_right else 0)


def _r_inflow_proof(r: Reader) -> InflowProof:
    kb = r.raw32()
    channel = r.u64()
    rec = _r_inflow_record(r)
    sibs = []
    for _ in range(r.u32()):
        h = r.raw32()
        flag = r.u8()
        if flag not in (0, 1):
            raise CodecError("bad proof side flag")
        sibs.append((h, flag == 1))
    return InflowProof(key_block=kb, channel=channel, record=rec, siblings=tuple(sibs))


_ENCODERS = [
    (KeyBlock, KIND_KEYBLOCK, _w_keyblock),
    (MicroBlock, KIND_MICROBLOCK, _w_microblock),
    (MicroBlockHeader, KIND_HEADER, _w_header),
    (FraudEvidence, KIND_EVIDENCE, _w_evidence),
    (Output, KIND_OUTPUT, _w_output),
    (OutPoint, KIND_OUTPOINT, _w_outpoint),
    (ProtocolDescriptor, KIND_DESCRIPTOR, _w_descriptor),
    (ChainParams, KIND_PARAMS, _w_params),
    (InflowRecord, KIND_INFLOW_RECORD, _w_inflow_record),
    (InflowProof, KIND_INFLOW_PROOF, _w_inflow_proof),
]

_TX_TYPES = (Payment, ChannelFunding, ServiceTx, Registration, FraudProof, Coinbase)


def canonical_encode(obj) -> bytes:
    """Encode any on-chain object, prefixed with its kind byte."""
    w = Writer()
    if isinstance(obj, _TX_TYPES):
        w.u8(KIND_TX)
        _w_tx(w, obj)
        return w.getvalue()
    for cls, kind, enc in _ENCODERS:
        if isinstance(obj, cls):
            w.u8(kind)
            enc(w, obj)
            return w.getvalue()
    raise CodecError(f"no canonical encoding for {type(obj).__name__}")


_DECODERS = {
    KIND_TX: _r_tx,
    KIND_MICROBLOCK: _r_microblock,
    KIND_KEYBLOCK: _r_keyblock,
    KIND_HEADER: _r_header,
    KIND_EVIDENCE: _r_evidence,
    KIND_OUTPUT: _r_output,
    KIND_OUTPOINT: _r_outpoint,
    KIND_DESCRIPTOR: _r_descriptor,
    KIND_INFLOW_RECORD: _r_inflow_record,
    KIND_INFLOW_PROOF: _r_inflow_proof,
}


def canonical_decode(data: bytes):
    """Inverse of :func:`canonical_encode`; rejects trailing bytes."""
    r = Reader(data)
    kind = r.u8()
    dec = _DECODERS.get(kind)
    if dec is None:
        raise CodecError(f"unknown kind byte {kind}")
    obj = dec(r)
    r.finish()
    return obj


def block_hash(obj) -> bytes:
    """32-byte digest of the canonical encoding; stable across runs."""
    return hashlib.sha256(canonical_encode(obj)).digest()


def encoded_size(obj) -> int:
    return len(canonical_encode(obj))


# -- signature digests -----------------------------------------------------------


def tx_sighash(tx: Transaction) -> bytes:
    """Digest each signer commits to: the transaction with signatures blanked."""
    if isinstance(tx, (Payment, ChannelFunding, ServiceTx)):
        blank_inputs = tuple(replace(i, sig=b"") for i in tx.inputs)
        stripped = replace(tx, inputs=blank_inputs)
    elif isinstance(tx, (Registration, FraudProof)):
        stripped = replace(tx, sig=b"")
    else:
        stripped = tx
    return block_hash(stripped)


def microblock_txs_hash(txs: tuple[Transaction, ...]) -> bytes:
    w = Writer()
    w.u32(len(txs))
    for tx in txs:
        _w_tx(w, tx)
    return hashlib.sha256(w.getvalue()).digest()


def microblock_header(mb: MicroBlock) -> MicroBlockHeader:
    return MicroBlockHeader(
        channel=mb.channel,
        epoch=mb.epoch,
        prev=mb.prev,
        txs_hash=microblock_txs_hash(mb.txs),
        leader=mb.leader,
        sig=mb.sig,
    )


def header_sighash(h: MicroBlockHeader) -> bytes:
    return block_hash(replace(h, sig=b""))


def microblock_sighash(mb: MicroBlock) -> bytes:
    """Leaders sign the header digest; it commits to the tx list via txs_hash."""
    return header_sighash(microblock_header(mb))
