"""Violation types raised by validation paths.

Every rule failure maps to one class so tests can assert on the exact
rejection reason.  ``Violation.block`` is filled in by replay code to point at
the offending block when a stored chain fails verification.
"""

from __future__ import annotations


class Violation(Exception):
    """Base class for protocol rule violations."""

    block: bytes | None = None

    def at_block(self, block_hash: bytes) -> "Violation":
        self.block = block_hash
        return self


class CodecError(Violation):
    """Malformed or non-canonical byte encoding."""


# -- transaction level --------------------------------------------------------

class UnknownInput(Violation):
    pass


class DoubleSpend(Violation):
    pass


class WrongChannel(Violation):
    pass


class BadSignature(Violation):
    pass


class OverSize(Violation):
    pass


class BadBalance(Violation):
    pass


class ImmatureSpend(Violation):
    pass


class UnknownChannel(Violation):
    pass


class FeeTooLow(Violation):
    pass


# -- microblock / inflow level -------------------------------------------------

class StaleTip(Violation):
    pass


class BadProof(Violation):
    pass


class DuplicateInflow(Violation):
    pass


# -- key block level -----------------------------------------------------------

class BadWork(Violation):
    pass


class BadHeight(Violation):
    pass


class BadChannelRef(Violation):
    pass


class InertChannelListed(Violation):
    pass


class TooManyRefs(Violation):
    pass


class BadInflowCommitment(Violation):
    pass


class BadCoinbase(Violation):
    pass


class BadBallot(Violation):
    pass


class StaleEvidence(Violation):
    pass


class BadEvidence(Violation):
    pass


# -- governance ----------------------------------------------------------------

class DuplicateServiceNumber(Violation):
    pass


class MalformedDescriptor(Violation):
    pass


class UnknownProposal(Violation):
    pass


# -- node ------------------------------------------------------------------------

class NotLeader(Violation):
    pass


class AuditMismatch(Violation):
    pass


class BadChain(Violation):
    pass


class InvalidScenario(Exception):
    """Scenario file failed schema validation; not a chain rule violation."""
