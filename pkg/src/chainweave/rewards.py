"""Coinbase construction and verification.

Every key block mints a fixed subsidy to its miner and re-mints the previous
epoch's fees, split per channel between the serializing (previous) miner and
the current one.  Fee outputs stay locked to the channel the fees were
collected from; the subsidy is locked to channel 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BadCoinbase
from .params import PAYMENT_CHANNEL, ChainParams
from .types import Coinbase, KeyBlock, Output


@dataclass
class FeeLedger:
    """Total microblock fees per (epoch height, channel), exact integers."""

    fees: dict[tuple[int, int], int] = field(default_factory=dict)

    def record(self, epoch_height: int, channel: int, amount: int) -> None:
        if amount:
            key = (epoch_height, channel)
            self.fees[key] = self.fees.get(key, 0) + amount

    def epoch_fees(self, epoch_height: int) -> dict[int, int]:
        return {
            channel: amount
            for (height, channel), amount in self.fees.items()
            if height == epoch_height and amount
        }

    def total(self) -> int:
        return sum(self.fees.values())

    def copy(self) -> "FeeLedger":
        return FeeLedger(fees=dict(self.fees))


def subsidy(params: ChainParams, height: int) -> int:
    """Fixed issuance per key block, independent of height."""
    if height < 1:
        raise ValueError("subsidy applies from height 1")
    return params.block_subsidy


def split_fees(total: int, serializer_share: float) -> tuple[int, int]:
    """Split one channel's epoch fees into (serializer, next miner) shares.

    The serializer (previous-epoch leader) gets the floored share; the
    remainder goes to the miner sealing the epoch, so no coin is lost.
    """
    if not 0.0 < serializer_share < 1.0:
        raise ValueError("share must be in (0, 1)")
    first = int(total * serializer_share)
    return first, total - first


def build_coinbase(
    params: ChainParams,
    height: int,
    current_miner: bytes,
    previous_miner: bytes | None,
    epoch_fees: dict[int, int],
) -> Coinbase:
    """Deterministic coinbase: subsidy first, then per-channel fee splits in
    ascending channel order, serializer share before current share.  Zero
    value outputs are omitted."""
    outputs: list[Output] = [
        Output(value=subsidy(params, height), owner=current_miner, spend_channel=PAYMENT_CHANNEL)
    ]
    for channel in sorted(epoch_fees):
        total = epoch_fees[channel]
        if total <= 0:
            continue
        if previous_miner is None:
            raise ValueError("fees collected but no previous miner to pay")
        to_serializer, to_current = split_fees(total, params.serializer_fee_share)
        if to_serializer:
            outputs.append(Output(value=to_serializer, owner=previous_miner, spend_channel=channel))
        if to_current:
            outputs.append(Output(value=to_current, owner=current_miner, spend_channel=channel))
    return Coinbase(height=height, outputs=tuple(outputs))


def verify_coinbase(
    kb: KeyBlock,
    params: ChainParams,
    previous_miner: bytes | None,
    epoch_fees: dict[int, int],
) -> None:
    """Exact equality against the rebuilt coinbase; anything else is rejected."""
    expected = build_coinbase(params, kb.height, kb.miner, previous_miner, epoch_fees)
    if kb.coinbase != expected:
        raise BadCoinbase(f"coinbase of key block at height {kb.height} does not match fees")


def expected_channel_outputs(
    params: ChainParams,
    channel: int,
    fees: int,
    current_miner: bytes,
    previous_miner: bytes | None,
) -> list[Output]:
    """Fee outputs one channel expects in a coinbase; lets a node that tracks
    only some channels verify its own slice of the reward."""
    if fees <= 0:
        return []
    if previous_miner is None:
        raise ValueError("fees collected but no previous miner to pay")
    to_serializer, to_current = split_fees(fees, params.serializer_fee_share)
    outputs = []
    if to_serializer:
        outputs.append(Output(value=to_serializer, owner=previous_miner, spend_channel=channel))
    if to_current:
        outputs.append(Output(value=to_current, owner=current_miner, spend_channel=channel))
    return outputs
