"""Simulator-side wallets: deterministic transaction construction.

A wallet reads the confirmed channel state of the node it is attached to,
selects its oldest unspent outputs, and signs with its own key.  Outpoints
already used in an unconfirmed transaction are held back until they either
confirm (and vanish from the UTXO set) or the wallet deliberately
double-spends them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import crypto
from .codec import block_hash, tx_sighash
from .types import (
    ChannelFunding,
    OutPoint,
    Output,
    Payment,
    ProtocolDescriptor,
    Registration,
    ServiceTx,
    Transaction,
    TxInput,
)


@dataclass
class Wallet:
    name: str
    keypair: crypto.KeyPair
    attach: object  # Node
    pending_spent: set[OutPoint] = field(default_factory=set)

    @property
    def public(self) -> bytes:
        return self.keypair.public

    def _spendable(self, channel: int) -> list[tuple[OutPoint, Output]]:
        state = self.attach.proc.states.get(channel)
        if state is None:
            return []
        # outpoints held for unconfirmed txs that have since confirmed are free again
        self.pending_spent = {op for op in self.pending_spent if op in state.utxo}
        maturity = self.attach.params.coinbase_maturity
        out = []
        for op, o in state.utxo.items():
            if o.owner != self.public or op in self.pending_spent:
                continue
            mint = state.coinbase_heights.get(op)
            if mint is not None and mint > 0 and state.height < mint + maturity:
                continue
            out.append((op, o))
        out.sort(key=lambda t: (t[0].tx_hash, t[0].index))
        return out

    def _select(self, channel: int, needed: int) -> list[tuple[OutPoint, Output]] | None:
        picked = []
        total = 0
        for op, o in self._spendable(channel):
            picked.append((op, o))
            total += o.value
            if total >= needed:
                return picked
        return None

    def _sign_inputs(self, tx: Transaction) -> Transaction:
        sighash = tx_sighash(tx)
        signed = tuple(
            replace(i, sig=crypto.sign(self.keypair.secret, sighash)) for i in tx.inputs
        )
        return replace(tx, inputs=signed)

    def _build_spend(self, channel: int, amount: int, fee: int, recipient: bytes, cls, **extra):
        picked = self._select(channel, amount + fee)
        if picked is None:
            return None
        total = sum(o.value for _, o in picked)
        outputs = [Output(value=amount, owner=recipient, spend_channel=channel)]
        change = total - amount - fee
        if change > 0:
            outputs.append(Output(value=change, owner=self.public, spend_channel=channel))
        inputs = tuple(TxInput(outpoint=op, pubkey=self.public, sig=b"") for op, _ in picked)
        tx = cls(inputs=inputs, outputs=tuple(outputs), fee=fee, **extra)
        tx = self._sign_inputs(tx)
        for op, _ in picked:
            self.pending_spent.add(op)
        return tx

    def build_payment(self, channel: int, amount: int, fee: int, recipient: bytes) -> Payment | None:
        return self._build_spend(channel, amount, fee, recipient, Payment)

    def build_service(
        self, channel: int, amount: int, fee: int, recipient: bytes, payload: bytes
    ) -> ServiceTx | None:
        picked = self._select(channel, amount + fee)
        if picked is None:
            return None
        total = sum(o.value for _, o in picked)
        outputs = [Output(value=amount, owner=recipient, spend_channel=channel)]
        change = total - amount - fee
        if change > 0:
            outputs.append(Output(value=change, owner=self.public, spend_channel=channel))
        inputs = tuple(TxInput(outpoint=op, pubkey=self.public, sig=b"") for op, _ in picked)
        tx = ServiceTx(
            service_number=channel,
            payload=payload,
            inputs=inputs,
            outputs=tuple(outputs),
            fee=fee,
        )
        tx = self._sign_inputs(tx)
        for op, _ in picked:
            self.pending_spent.add(op)
        return tx

    def build_funding(
        self, destinations: list[tuple[bytes, int, int]], fee: int
    ) -> ChannelFunding | None:
        """Lock funds to other channels: destinations are (owner, value,
        channel) triples; change stays on channel 0."""
        needed = sum(v for _, v, _ in destinations) + fee
        picked = self._select(0, needed)
        if picked is None:
            return None
        total = sum(o.value for _, o in picked)
        outputs = [
            Output(value=value, owner=owner, spend_channel=channel)
            for owner, value, channel in destinations
        ]
        change = total - needed
        if change > 0:
            outputs.append(Output(value=change, owner=self.public, spend_channel=0))
        inputs = tuple(TxInput(outpoint=op, pubkey=self.public, sig=b"") for op, _ in picked)
        tx = ChannelFunding(inputs=inputs, outputs=tuple(outputs), fee=fee)
        tx = self._sign_inputs(tx)
        for op, _ in picked:
            self.pending_spent.add(op)
        return tx

    def build_registration(self, descriptor: ProtocolDescriptor) -> Registration:
        tx = Registration(descriptors=(descriptor,), proposer=self.public, sig=b"")
        return replace(tx, sig=crypto.sign(self.keypair.secret, tx_sighash(tx)))

    def build_conflicting_pair(
        self, channel: int, amount: int, fee: int
    ) -> tuple[Payment, Payment] | None:
        """Two payments spending the same outputs to different self-owned
        destinations; at most one can ever confirm."""
        picked = self._select(channel, amount + fee)
        if picked is None:
            return None
        total = sum(o.value for _, o in picked)
        inputs = tuple(TxInput(outpoint=op, pubkey=self.public, sig=b"") for op, _ in picked)
        pair = []
        for tag in (b"first", b"second"):
            alt = crypto.keypair(self.keypair.secret + tag)
            outputs = [Output(value=amount, owner=alt.public, spend_channel=channel)]
            change = total - amount - fee
            if change > 0:
                outputs.append(Output(value=change, owner=self.public, spend_channel=channel))
            tx = Payment(inputs=inputs, outputs=tuple(outputs), fee=fee)
            pair.append(self._sign_inputs(tx))
        for op, _ in picked:
            self.pending_spent.add(op)
        return pair[0], pair[1]
