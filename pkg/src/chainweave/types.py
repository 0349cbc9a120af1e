"""On-chain data model.

All value types are frozen dataclasses; identity is always the hash of the
canonical encoding (see :mod:`chainweave.codec`), never Python object
identity.  Collections that appear inside blocks use tuples so instances stay
immutable; the two key-block maps are plain dicts whose encoding is sorted by
key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

Hash = bytes  # 32-byte digest of a canonical encoding
PubKey = bytes  # 32-byte public key

ZERO32 = bytes(32)


@dataclass(frozen=True)
class Output:
    """A spendable coin: value, owner, and the one channel it can be spent in."""

    value: int
    owner: PubKey
    spend_channel: int


@dataclass(frozen=True)
class OutPoint:
    tx_hash: Hash
    index: int


@dataclass(frozen=True)
class TxInput:
    """Reference to an unspent output plus the owner's signature over the tx."""

    outpoint: OutPoint
    pubkey: PubKey
    sig: bytes


@dataclass(frozen=True)
class ProtocolDescriptor:
    """Per-channel limits: transaction size, block size, and block cadence."""

    service_number: int
    max_tx_bytes: int
    max_microblock_bytes: int
    microblock_interval: float
    payload_schema_id: int = 0


@dataclass(frozen=True)
class Payment:
    inputs: tuple[TxInput, ...]
    outputs: tuple[Output, ...]
    fee: int


@dataclass(frozen=True)
class ChannelFunding:
    """Channel-0 transaction whose outputs are locked for spending in the
    destination channels they name.  The only way funds cross channels."""

    inputs: tuple[TxInput, ...]
    outputs: tuple[Output, ...]
    fee: int


@dataclass(frozen=True)
class ServiceTx:
    """Service payload plus an ordinary value transfer within one channel."""

    service_number: int
    payload: bytes
    inputs: tuple[TxInput, ...]
    outputs: tuple[Output, ...]
    fee: int


@dataclass(frozen=True)
class Registration:
    """Channel-1 proposal introducing or updating service protocols."""

    descriptors: tuple[ProtocolDescriptor, ...]
    proposer: PubKey
    sig: bytes


@dataclass(frozen=True)
class MicroBlockHeader:
    channel: int
    epoch: Hash  # key block this microblock chain hangs off
    prev: Hash  # previous microblock, or the epoch key block
    txs_hash: Hash
    leader: PubKey
    sig: bytes


@dataclass(frozen=True)
class FraudEvidence:
    """Two conflicting microblock headers signed by the same epoch leader."""

    first: MicroBlockHeader
    second: MicroBlockHeader


@dataclass(frozen=True)
class FraudProof:
    """Report of a double-signing leader; revokes that epoch's reward."""

    evidence: FraudEvidence
    reporter: PubKey
    sig: bytes


@dataclass(frozen=True)
class Coinbase:
    """Reward transaction of one key block.  Carries its height so every
    coinbase hashes uniquely even when the outputs coincide."""

    height: int
    outputs: tuple[Output, ...]


Transaction = Union[Payment, ChannelFunding, ServiceTx, Registration, FraudProof, Coinbase]


@dataclass(frozen=True)
class MicroBlock:
    channel: int
    epoch: Hash
    prev: Hash
    txs: tuple[Transaction, ...]
    leader: PubKey
    sig: bytes


@dataclass(frozen=True)
class KeyBlock:
    """Checkpoint shared by all channels.

    ``channel_refs`` points at each non-idle channel's microblock tail from
    the epoch this block closes; ``inflow_commitments`` holds per-channel
    merkle roots over the funding outputs confirmed in that epoch and locked
    to each destination channel.
    """

    prev: Hash
    height: int
    channel_refs: dict[int, Hash]
    inflow_commitments: dict[int, Hash]
    ballot: Hash | None
    coinbase: Coinbase
    fraud_reports: tuple[FraudProof, ...]
    miner: PubKey
    work_nonce: Hash
    work: int


@dataclass(frozen=True)
class InflowRecord:
    """One funding output destined to a channel; the commitment leaf."""

    outpoint: OutPoint
    output: Output


@dataclass(frozen=True)
class InflowProof:
    """Inflow record plus its merkle path to a key block commitment root."""

    key_block: Hash
    channel: int
    record: InflowRecord
    siblings: tuple[tuple[Hash, bool], ...]  # (sibling hash, sibling is right)


def tx_fee(tx: Transaction) -> int:
    """Fee paid by a transaction; report and proposal variants are free."""
    return getattr(tx, "fee", 0)
