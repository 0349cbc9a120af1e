"""chainweave: a multi-channel sharded ledger with a deterministic simulator.

Independent per-service microblock chains share one proof-of-work key block
spine.  Funds are locked to the single channel they can be spent in, service
protocols are introduced by on-chain voting, and service users validate their
channels completely while storing none of the others.
"""

from .params import ChainParams, PAYMENT_CHANNEL, REGISTRATION_CHANNEL
from .types import (
    ChannelFunding,
    Coinbase,
    FraudEvidence,
    FraudProof,
    InflowProof,
    InflowRecord,
    KeyBlock,
    MicroBlock,
    OutPoint,
    Output,
    Payment,
    ProtocolDescriptor,
    Registration,
    ServiceTx,
    Transaction,
    TxInput,
)
from .codec import block_hash, canonical_decode, canonical_encode
from .chainstate import ChainProcessor
from .ledger import ChannelState
from .node import Node, NodeConfig
from .netsim import Simulation, run
from .scenario import ScenarioConfig, load_scenario, parse_scenario

__all__ = [
    "ChainParams",
    "ChainProcessor",
    "ChannelFunding",
    "ChannelState",
    "Coinbase",
    "FraudEvidence",
    "FraudProof",
    "InflowProof",
    "InflowRecord",
    "KeyBlock",
    "MicroBlock",
    "Node",
    "NodeConfig",
    "OutPoint",
    "Output",
    "PAYMENT_CHANNEL",
    "Payment",
    "ProtocolDescriptor",
    "REGISTRATION_CHANNEL",
    "Registration",
    "ScenarioConfig",
    "ServiceTx",
    "Simulation",
    "Transaction",
    "TxInput",
    "block_hash",
    "canonical_decode",
    "canonical_encode",
    "load_scenario",
    "parse_scenario",
    "run",
]

__version__ = "0.1.0"
