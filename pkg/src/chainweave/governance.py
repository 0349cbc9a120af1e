"""Service integration and maintenance.

Proposals confirm on channel 1, each key block may cast one ballot for one
proposal, and windows settle at activation heights (multiples of the
activation interval).  A proposal activates only when its ballots strictly
exceed the threshold fraction of ALL key blocks in the window, so abstentions
count against it.  Comparison is exact rational arithmetic: a fraction equal
to the threshold never activates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import UnknownProposal
from .ledger import check_registration
from .params import (
    GENESIS_MAX_MICROBLOCK_BYTES,
    GENESIS_MAX_TX_BYTES,
    GENESIS_MICROBLOCK_INTERVAL,
    PAYMENT_CHANNEL,
    REGISTRATION_CHANNEL,
    ChainParams,
)
from .types import KeyBlock, ProtocolDescriptor, Registration


def initial_descriptors() -> dict[int, ProtocolDescriptor]:
    """Descriptors the two system channels start with at genesis."""
    return {
        ch: ProtocolDescriptor(
            service_number=ch,
            max_tx_bytes=GENESIS_MAX_TX_BYTES,
            max_microblock_bytes=GENESIS_MAX_MICROBLOCK_BYTES,
            microblock_interval=GENESIS_MICROBLOCK_INTERVAL,
        )
        for ch in (PAYMENT_CHANNEL, REGISTRATION_CHANNEL)
    }


@dataclass(frozen=True)
class Proposal:
    tx_hash: bytes
    descriptors: tuple[ProtocolDescriptor, ...]
    proposer: bytes


@dataclass
class GovernanceState:
    """Derived deterministically from the key block chain; never gossiped."""

    active: dict[int, tuple[ProtocolDescriptor, int]] = field(default_factory=dict)
    proposals: dict[bytes, Proposal] = field(default_factory=dict)
    window_tally: dict[bytes, int] = field(default_factory=dict)
    window_keyblocks: int = 0
    adopted: set[bytes] = field(default_factory=set)

    @classmethod
    def genesis(cls) -> "GovernanceState":
        return cls(active={ch: (d, 0) for ch, d in initial_descriptors().items()})

    def copy(self) -> "GovernanceState":
        return GovernanceState(
            active=dict(self.active),
            proposals=dict(self.proposals),
            window_tally=dict(self.window_tally),
            window_keyblocks=self.window_keyblocks,
            adopted=set(self.adopted),
        )

    def active_channels(self) -> frozenset[int]:
        return frozenset(self.active)

    def descriptor(self, channel: int) -> ProtocolDescriptor:
        return self.active[channel][0]

    def digest(self) -> bytes:
        import hashlib

        from .codec import canonical_encode

        h = hashlib.sha256()
        for ch in sorted(self.active):
            desc, height = self.active[ch]
            h.update(ch.to_bytes(8, "big"))
            h.update(canonical_encode(desc))
            h.update(height.to_bytes(8, "big"))
        for tx_hash in sorted(self.proposals):
            h.update(tx_hash)
        for tx_hash in sorted(self.window_tally):
            h.update(tx_hash)
            h.update(self.window_tally[tx_hash].to_bytes(8, "big"))
        h.update(self.window_keyblocks.to_bytes(8, "big"))
        for tx_hash in sorted(self.adopted):
            h.update(tx_hash)
        return h.digest()


def register_proposal(gov: GovernanceState, tx: Registration, tx_hash: bytes) -> None:
    """Index a confirmed channel-1 proposal so ballots can reference it."""
    check_registration(tx)
    gov.proposals[tx_hash] = Proposal(
        tx_hash=tx_hash, descriptors=tx.descriptors, proposer=tx.proposer
    )


def record_ballot(gov: GovernanceState, kb: KeyBlock) -> None:
    """Count one accepted key block; its ballot (if any) adds one vote."""
    gov.window_keyblocks += 1
    if kb.ballot is None:
        return
    if kb.ballot not in gov.proposals:
        raise UnknownProposal("ballot references an unknown proposal")
    gov.window_tally[kb.ballot] = gov.window_tally.get(kb.ballot, 0) + 1


def tally_window(gov: GovernanceState, params: ChainParams) -> Proposal | None:
    """Settle the window at an activation height and reset the tallies.

    Returns the winning proposal when its ballot count over the full window
    strictly exceeds the threshold; ties (possible only for thresholds below
    one half) break by higher tally then smaller proposal hash.
    """
    window = gov.window_keyblocks
    threshold = Fraction(params.activation_threshold)
    winners = [
        (count, tx_hash)
        for tx_hash, count in gov.window_tally.items()
        if window > 0 and Fraction(count, window) > threshold
    ]
    gov.window_tally = {}
    gov.window_keyblocks = 0
    if not winners:
        return None
    winners.sort(key=lambda t: (-t[0], t[1]))
    return gov.proposals[winners[0][1]]


def activate(gov: GovernanceState, winner: Proposal, height: int) -> list[int]:
    """Make the winner's descriptors active from the next microblock onward.

    Returns the channels that did not exist before (their states start
    empty).  Historical blocks stay judged by the descriptors that were
    active at their heights.
    """
    created: list[int] = []
    for desc in winner.descriptors:
        if desc.service_number not in gov.active:
            created.append(desc.service_number)
        gov.active[desc.service_number] = (desc, height)
    gov.adopted.add(winner.tx_hash)
    return created
