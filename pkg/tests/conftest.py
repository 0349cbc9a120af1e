"""Shared fixtures: keys, parameters, and a single-miner chain harness."""

from __future__ import annotations

from dataclasses import replace

import pytest

from chainweave import crypto
from chainweave.codec import block_hash, tx_sighash
from chainweave.node import MsgInflow, MsgKeyBlock, MsgMicroBlock, MsgTx, Node, NodeConfig
from chainweave.params import ChainParams
from chainweave.types import (
    ChannelFunding,
    Output,
    Payment,
    ProtocolDescriptor,
    Registration,
    ServiceTx,
    TxInput,
)


@pytest.fixture
def keys():
    return {name: crypto.keypair(name.encode()) for name in ("alice", "bob", "carol", "miner", "miner2")}


@pytest.fixture
def params(keys):
    return ChainParams(
        activation_threshold=0.75,
        activation_interval=5,
        target_keyblock_interval=10.0,
        min_funding_fee=5,
        block_subsidy=50,
        serializer_fee_share=0.4,
        coinbase_maturity=6,
        genesis_allocation=tuple((keys["alice"].public, 500) for _ in range(4)),
    )


def sign_inputs(tx, keypair):
    sighash = tx_sighash(tx)
    signed = tuple(replace(i, sig=crypto.sign(keypair.secret, sighash)) for i in tx.inputs)
    return replace(tx, inputs=signed)


def make_payment(keypair, outpoints, outputs, fee, channel=0):
    tx = Payment(
        inputs=tuple(TxInput(outpoint=op, pubkey=keypair.public, sig=b"") for op in outpoints),
        outputs=tuple(Output(value=v, owner=owner, spend_channel=channel) for owner, v in outputs),
        fee=fee,
    )
    return sign_inputs(tx, keypair)


def make_funding(keypair, outpoints, destinations, change, fee):
    """destinations: (owner, value, channel); change stays on channel 0."""
    outs = [Output(value=v, owner=o, spend_channel=c) for o, v, c in destinations]
    if change:
        outs.append(Output(value=change, owner=keypair.public, spend_channel=0))
    tx = ChannelFunding(
        inputs=tuple(TxInput(outpoint=op, pubkey=keypair.public, sig=b"") for op in outpoints),
        outputs=tuple(outs),
        fee=fee,
    )
    return sign_inputs(tx, keypair)


def make_service(keypair, channel, outpoints, outputs, fee, payload=b"payload"):
    tx = ServiceTx(
        service_number=channel,
        payload=payload,
        inputs=tuple(TxInput(outpoint=op, pubkey=keypair.public, sig=b"") for op in outpoints),
        outputs=tuple(Output(value=v, owner=o, spend_channel=channel) for o, v in outputs),
        fee=fee,
    )
    return sign_inputs(tx, keypair)


def make_registration(keypair, service_number, **limits):
    desc = ProtocolDescriptor(
        service_number=service_number,
        max_tx_bytes=limits.get("max_tx_bytes", 2048),
        max_microblock_bytes=limits.get("max_microblock_bytes", 16384),
        microblock_interval=limits.get("microblock_interval", 1.0),
        payload_schema_id=limits.get("payload_schema_id", 0),
    )
    tx = Registration(descriptors=(desc,), proposer=keypair.public, sig=b"")
    return replace(tx, sig=crypto.sign(keypair.secret, tx_sighash(tx)))


class SoloChain:
    """One miner plus optional observer nodes, driven by hand.

    Collapses the simulator to direct calls: submit transactions, serialize a
    channel, mine a key block, and relay everything to the observers.
    """

    def __init__(self, params: ChainParams, observers=(), miner_key=None):
        self.params = params
        self.key = miner_key or crypto.keypair(b"miner")
        self.miner = Node(
            NodeConfig(name="m", role="miner", hash_power=1.0), params, self.key, tiebreak_seed=7
        )
        self.observers = list(observers)
        self.now = 0.0

    def _relay(self, outbound):
        for entry in outbound or []:
            msg = entry[-1]
            for node in self.observers:
                node.handle(msg, self.now, sender="m")

    def submit(self, channel: int, tx) -> bool:
        self.now += 0.1
        out = self.miner.receive_tx(channel, tx, self.now)
        self._relay(out)
        return bool(out)

    def serialize(self, channel: int):
        self.now += 0.1
        mb = self.miner.assemble_microblock(channel, self.now)
        if mb is not None:
            self._relay([("broadcast", MsgMicroBlock(mb))])
        return mb

    def mine(self):
        self.now += 1.0
        kb = self.miner.assemble_key_block(self.now)
        out = self.miner.receive_key_block(kb, self.now)
        self._relay(out)
        return kb

    def utxos_of(self, pub: bytes, channel: int = 0):
        state = self.miner.proc.states[channel]
        return sorted(
            ((op, o) for op, o in state.utxo.items() if o.owner == pub),
            key=lambda t: (t[0].tx_hash, t[0].index),
        )


@pytest.fixture
def solo(params):
    chain = SoloChain(params)
    chain.mine()  # height 1: a leader now exists
    return chain
