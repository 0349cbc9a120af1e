"""Chain-wide protocol parameters.

Every consensus-relevant constant lives in :class:`ChainParams` so that tests
and scenarios can state exactly which values they run under.  Two channels are
built into the system and can never be voted away: channel 0 carries plain
fund transfers, channel 1 carries service proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PAYMENT_CHANNEL = 0
REGISTRATION_CHANNEL = 1
SYSTEM_CHANNELS = frozenset((PAYMENT_CHANNEL, REGISTRATION_CHANNEL))

# Share of a revoked leader reward paid to whoever reported the fraud; the
# remainder is burned.  1/20 == 5%.
FRAUD_REWARD_NUM = 1
FRAUD_REWARD_DEN = 20

# Limits applied to the two system channels at genesis.  Everything else is
# introduced through governance and carries its own descriptor.
GENESIS_MAX_TX_BYTES = 2048
GENESIS_MAX_MICROBLOCK_BYTES = 16384
GENESIS_MICROBLOCK_INTERVAL = 1.0


@dataclass(frozen=True)
class ChainParams:
    """Protocol constants shared by every node on a chain.

    ``genesis_allocation`` lists (owner pubkey, value) pairs minted on channel
    0 in the genesis block; these outputs are spendable immediately.
    """

    activation_threshold: float = 0.75
    activation_interval: int = 20
    target_keyblock_interval: float = 10.0
    max_channel_refs: int = 256
    min_funding_fee: int = 10
    block_subsidy: int = 50
    serializer_fee_share: float = 0.4
    coinbase_maturity: int = 6
    genesis_allocation: tuple[tuple[bytes, int], ...] = ()

    @property
    def initial_channels(self) -> frozenset[int]:
        return SYSTEM_CHANNELS

    def validate(self) -> None:
        if not (0.0 < self.activation_threshold <= 1.0):
            raise ValueError("activation_threshold must be in (0, 1]")
        if not (0.0 < self.serializer_fee_share < 1.0):
            raise ValueError("serializer_fee_share must be in (0, 1)")
        if math.isnan(self.activation_threshold) or math.isnan(self.serializer_fee_share):
            raise ValueError("fractions must not be NaN")
        for name in ("activation_interval", "max_channel_refs", "coinbase_maturity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.target_keyblock_interval <= 0:
            raise ValueError("target_keyblock_interval must be positive")
        if self.block_subsidy < 0 or self.min_funding_fee < 0:
            raise ValueError("coin amounts must be non-negative")
        for owner, value in self.genesis_allocation:
            if len(owner) != 32:
                raise ValueError("genesis owner keys must be 32 bytes")
            if value <= 0:
                raise ValueError("genesis allocation values must be positive")

    def is_activation_height(self, height: int) -> bool:
        """True when governance windows settle at this key block height."""
        return height > 0 and height % self.activation_interval == 0
