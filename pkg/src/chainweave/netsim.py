"""Deterministic discrete-event network simulator.

Virtual time only; every source of randomness is a stream derived from the
scenario seed plus a label, and per-message latency is keyed by the message's
own content hash.  That last point matters: it means the delivery time of a
block or transaction never depends on how much unrelated traffic happened to
share the link, which keeps independent channels byte-for-byte independent
across runs.

Events are processed in (time, sequence) order.  Miners re-arm an exponential
mining timer whenever their tip moves; the epoch leader emits microblocks on
a per-channel grid anchored at its own key block.  Partitions drop cross-group
messages until they heal; churned nodes come back through a sync round with a
live peer.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import random
from dataclasses import dataclass, field

from . import consensus
from .chainstate import ApplyResult, ChainProcessor
from .codec import block_hash, encoded_size
from .crypto import KeyPair, keypair
from .errors import InvalidScenario, Violation
from .metrics import Metrics
from .node import (
    MsgInflow,
    MsgKeyBlock,
    MsgMicroBlock,
    MsgSyncRequest,
    MsgSyncResponse,
    MsgTx,
    Node,
    NodeConfig,
)
from .params import PAYMENT_CHANNEL, REGISTRATION_CHANNEL, ChainParams
from .scenario import ScenarioConfig
from .types import KeyBlock, MicroBlock, ProtocolDescriptor
from .wallet import Wallet

log = logging.getLogger(__name__)

MAX_EVENTS = 5_000_000


def _stream(seed: int, label: str) -> random.Random:
    digest = hashlib.sha256(seed.to_bytes(8, "big", signed=False) + label.encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def message_identity(msg) -> bytes:
    """Stable identity of a message's content, for latency keying."""
    if isinstance(msg, MsgKeyBlock):
        return b"kb" + block_hash(msg.kb)
    if isinstance(msg, MsgMicroBlock):
        return b"mb" + block_hash(msg.mb)
    if isinstance(msg, MsgTx):
        return b"tx" + msg.channel.to_bytes(8, "big") + block_hash(msg.tx)
    if isinstance(msg, MsgInflow):
        return b"fl" + block_hash(msg.proof)
    if isinstance(msg, MsgSyncRequest):
        return b"sq" + msg.tip + bytes(c % 256 for c in msg.channels)
    if isinstance(msg, MsgSyncResponse):
        tip = block_hash(msg.payload.key_blocks[-1]) if msg.payload.key_blocks else b""
        return b"sr" + tip + len(msg.payload.proofs).to_bytes(4, "big")
    return b"??" + repr(msg).encode()[:64]


class Simulation:
    def __init__(self, scenario: ScenarioConfig) -> None:
        self.scenario = scenario
        self.seed = scenario.seed
        self.metrics = Metrics()
        self.now = 0.0
        self._seq = 0
        self._heap: list[tuple[float, int, str, tuple]] = []
        self._events_processed = 0
        self.cutoff = False

        # wallets fund the genesis allocation
        self.wallets: dict[str, Wallet] = {}
        allocation = []
        wallet_keys: dict[str, KeyPair] = {}
        for spec in scenario.wallets:
            kp = keypair(b"wallet:" + spec.name.encode() + self.seed.to_bytes(8, "big"))
            wallet_keys[spec.name] = kp
            if spec.funds > 0:
                n = max(1, spec.outputs)
                share, rem = divmod(spec.funds, n)
                for i in range(n):
                    value = share + (rem if i == 0 else 0)
                    if value > 0:
                        allocation.append((kp.public, value))
        self.params = scenario.build_params(tuple(allocation))

        # nodes and topology
        self.nodes: dict[str, Node] = {}
        names = [spec.name for spec in scenario.nodes]
        neighbor_map: dict[str, list[str]] = {n: [] for n in names}
        if scenario.topology is None:
            for a in names:
                neighbor_map[a] = [b for b in names if b != a]
        else:
            for a, b in scenario.topology:
                if b not in neighbor_map[a]:
                    neighbor_map[a].append(b)
                if a not in neighbor_map[b]:
                    neighbor_map[b].append(a)
        self.miner_pubs: dict[bytes, str] = {}
        for spec in scenario.nodes:
            cfg = NodeConfig(
                name=spec.name,
                role=spec.role,
                hash_power=spec.hash_power,
                channels=spec.channels,
                censor_channels=spec.censor_channels,
                fork_microblocks=spec.fork_microblocks,
                suppress_ballots=spec.suppress_ballots,
                vote=spec.vote,
            )
            kp = keypair(b"node:" + spec.name.encode() + self.seed.to_bytes(8, "big"))
            tiebreak = _stream(self.seed, f"tiebreak:{spec.name}").getrandbits(63)
            node = Node(cfg, self.params, kp, tiebreak, neighbors=neighbor_map[spec.name])
            self.nodes[spec.name] = node
            if spec.role == "miner":
                self.miner_pubs[kp.public] = spec.name
        self.total_power = sum(s.hash_power for s in scenario.nodes if s.role == "miner")
        if self.total_power <= 0:
            raise InvalidScenario("total hash power must be positive")

        for spec in scenario.wallets:
            attach = spec.attach or self._default_attach()
            self.wallets[spec.name] = Wallet(
                name=spec.name, keypair=wallet_keys[spec.name], attach=self.nodes[attach]
            )

        self._mine_rng = {n: _stream(self.seed, f"mine:{n}") for n in names}
        self._work_rng = [
            _stream(self.seed, f"workload:{i}") for i in range(len(scenario.workload))
        ]
        self._churn_rng = _stream(self.seed, "churn")
        self._mine_generation: dict[str, int] = {n: 0 for n in names}
        self._prev_tip: dict[str, bytes] = {n: self.nodes[n].tip for n in names}

        self.partition: tuple[tuple[str, ...], ...] | None = None
        self._convergence_watch: dict | None = None
        self._height_triggers: dict[int, list[tuple]] = {}
        self._max_height_seen = 0
        self.kb_log: dict[bytes, dict] = {}
        self.tx_log: dict[bytes, dict] = {}
        self._skipped_txs: list[dict] = []
        self._kbs_mined = 0
        self._reorgs = 0

        self._schedule_initial()

    # -- scheduling ------------------------------------------------------------------

    def _default_attach(self) -> str:
        for spec in self.scenario.nodes:
            if spec.role == "user":
                return spec.name
        return self.scenario.nodes[0].name

    def _push(self, time: float, kind: str, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))

    def _schedule_initial(self) -> None:
        for spec in self.scenario.nodes:
            if spec.role == "miner":
                self._arm_miner(spec.name, 0.0)
        for idx, item in enumerate(self.scenario.workload):
            if "at_height" in item:
                self._height_triggers.setdefault(int(item["at_height"]), []).append(
                    ("workload", idx)
                )
            else:
                start = float(item.get("start", 0.0))
                interval = float(item.get("interval", self.params.target_keyblock_interval))
                count = int(item.get("count", 1))
                for k in range(count):
                    self._push(start + k * interval, "workload", (idx, k))
        for part_idx, part in enumerate(self.scenario.partitions):
            self._height_triggers.setdefault(part.at_height, []).append(("partition", part_idx))
        for spec in self.scenario.nodes:
            cls = "miners" if spec.role == "miner" else "users"
            churn = self.scenario.churn.get(cls)
            if churn and churn.leave_rate > 0:
                delay = self._churn_rng.expovariate(churn.leave_rate)
                self._push(delay, "churn_leave", (spec.name,))

    def _arm_miner(self, name: str, now: float) -> None:
        if self.cutoff:
            return
        spec = next(s for s in self.scenario.nodes if s.name == name)
        delay = consensus.miner_delay(
            spec.hash_power,
            self.total_power,
            self.params.target_keyblock_interval,
            self._mine_rng[name],
        )
        self._mine_generation[name] += 1
        self._push(now + delay, "mine", (name, self._mine_generation[name]))

    def _delivery_delay(self, src: str, dst: str, msg) -> float:
        ident = message_identity(msg)
        digest = hashlib.sha256(
            self.seed.to_bytes(8, "big")
            + b"lat"
            + src.encode()
            + b">"
            + dst.encode()
            + ident
        ).digest()
        u = int.from_bytes(digest[:8], "big") / float(1 << 64)
        lo, mean = self.scenario.latency_min, self.scenario.latency_mean
        if mean <= lo:
            return lo
        return lo - (mean - lo) * math.log1p(-u)

    def _partitioned(self, a: str, b: str) -> bool:
        if self.partition is None:
            return False
        group_of = {}
        for i, group in enumerate(self.partition):
            for n in group:
                group_of[n] = i
        return group_of.get(a) != group_of.get(b)

    def _dispatch_outbound(self, node: Node, outbound) -> None:
        for entry in outbound:
            kind = entry[0]
            if kind == "broadcast":
                msg = entry[1]
                for peer in node.neighbors:
                    self._send(node.name, peer, msg)
            elif kind == "send":
                _, peer, msg = entry
                self._send(node.name, peer, msg)

    def _send(self, src: str, dst: str, msg) -> None:
        if self._partitioned(src, dst):
            return
        self._push(self.now + self._delivery_delay(src, dst, msg), "deliver", (dst, msg, src))

    # -- node follow-ups -----------------------------------------------------------------

    def _after_node_event(self, node: Node) -> None:
        if not node.tip_changed:
            return
        node.tip_changed = False
        old_tip = self._prev_tip[node.name]
        self._prev_tip[node.name] = node.tip
        new_kb = node.view.blocks[node.tip]
        if old_tip in node.view.blocks and node.view.blocks[old_tip].height >= new_kb.height:
            self._reorgs += 1
            self.metrics.add(
                "reorg",
                node=node.name,
                time=self.now,
                depth=node.view.blocks[old_tip].height - new_kb.height + 1,
            )
        elif old_tip != new_kb.prev and old_tip in node.view.blocks:
            self._reorgs += 1
            self.metrics.add("reorg", node=node.name, time=self.now, depth=1)
        self.metrics.add(
            "storage",
            node=node.name,
            height=new_kb.height,
            bytes=node.storage_bytes,
            time=self.now,
        )
        if node.config.role == "miner":
            self._arm_miner(node.name, self.now)
            if node.is_leader:
                self._schedule_microblock_timers(node)
        if new_kb.height > self._max_height_seen:
            self._max_height_seen = new_kb.height
            self._fire_height_triggers(new_kb.height)
            if (
                self.scenario.duration_key_blocks is not None
                and new_kb.height >= self.scenario.duration_key_blocks
            ):
                self.cutoff = True
        self._check_convergence()

    def _schedule_microblock_timers(self, node: Node) -> None:
        if self.cutoff:
            return
        epoch = node.leader_epoch
        for ch in node.tracked_channels():
            if ch in node.config.censor_channels:
                continue
            # serialize whatever is already pending the moment the epoch
            # starts, then keep the per-channel cadence
            self._push(self.now, "mbtimer", (node.name, epoch, ch, 0, self.now))

    def _fire_height_triggers(self, height: int) -> None:
        for h in [h for h in sorted(self._height_triggers) if h <= height]:
            for trig in self._height_triggers.pop(h):
                if trig[0] == "workload":
                    self._push(self.now, "workload", (trig[1], 0))
                elif trig[0] == "partition":
                    self._push(self.now, "partition_start", (trig[1],))

    def _check_convergence(self) -> None:
        watch = self._convergence_watch
        if watch is None:
            return
        online = [n for n in self.nodes.values() if n.online]
        if not online:
            return
        tips = {n.tip for n in online}
        if len(tips) == 1:
            self.metrics.add(
                "convergence",
                partition=watch["partition"],
                heal_time=watch["heal_time"],
                converged_time=self.now,
                key_blocks_after_heal=self._kbs_mined - watch["kbs_at_heal"],
            )
            self._convergence_watch = None

    # -- event handlers ---------------------------------------------------------------------

    def _handle_mine(self, name: str, generation: int) -> None:
        if self.cutoff or generation != self._mine_generation[name]:
            return
        node = self.nodes[name]
        if not node.online:
            return
        kb = node.assemble_key_block(self.now)
        kb_hash = block_hash(kb)
        self._kbs_mined += 1
        self.kb_log[kb_hash] = {
            "height": kb.height,
            "miner": name,
            "time": self.now,
        }
        outbound = node.receive_key_block(kb, self.now)
        self._dispatch_outbound(node, outbound)
        self._after_node_event(node)

    def _handle_mbtimer(self, name: str, epoch: bytes, channel: int, k: int, epoch_start: float) -> None:
        if self.cutoff:
            return
        node = self.nodes[name]
        if not node.online or node.leader_epoch != epoch:
            return
        desc = node.proc.gov.active.get(channel)
        if desc is None:
            return
        mb = node.assemble_microblock(channel, self.now)
        if mb is not None:
            if node.config.fork_microblocks and mb.txs and epoch not in node.forked_epochs:
                variant = node.fork_variant(mb)
                node.forked_epochs.add(epoch)
                half = len(node.neighbors) // 2 or 1
                for peer in node.neighbors[:half]:
                    self._send(name, peer, MsgMicroBlock(mb))
                for peer in node.neighbors[half:]:
                    self._send(name, peer, MsgMicroBlock(variant))
            else:
                for peer in node.neighbors:
                    self._send(name, peer, MsgMicroBlock(mb))
        self._push(
            epoch_start + (k + 1) * desc[0].microblock_interval,
            "mbtimer",
            (name, epoch, channel, k + 1, epoch_start),
        )

    def _handle_deliver(self, dst: str, msg, src: str) -> None:
        node = self.nodes[dst]
        if not node.online or self._partitioned(src, dst):
            return
        outbound = node.handle(msg, self.now, sender=src)
        self._dispatch_outbound(node, outbound)
        self._after_node_event(node)

    def _handle_workload(self, idx: int, step: int) -> None:
        if self.cutoff:
            return
        item = self.scenario.workload[idx]
        kind = item["kind"]
        rng = self._work_rng[idx]
        if kind == "payments":
            self._do_transfer(item, rng, service=False)
        elif kind == "service":
            self._do_transfer(item, rng, service=True)
        elif kind == "funding":
            self._do_funding(item)
        elif kind == "registration":
            self._do_registration(item)
        elif kind == "double_spend":
            self._do_double_spend(item, rng)

    def _pick(self, rng: random.Random, names) -> str:
        if isinstance(names, str):
            return names
        return names[rng.randrange(len(names))]

    def _submit(self, wallet: Wallet, channel: int, tx, conflict_group=None) -> bool:
        node = wallet.attach
        if tx is None or not node.online:
            self._skipped_txs.append({"channel": channel, "time": self.now})
            return False
        tx_hash = block_hash(tx)
        self.tx_log[tx_hash] = {
            "channel": channel,
            "submit_time": self.now,
            "submit_height": node.proc.height,
            "conflict_group": conflict_group,
        }
        outbound = node.receive_tx(channel, tx, self.now)
        self._dispatch_outbound(node, outbound)
        self._after_node_event(node)
        return True

    def _do_transfer(self, item: dict, rng: random.Random, service: bool) -> None:
        channel = int(item.get("channel", PAYMENT_CHANNEL))
        sender = self.wallets[self._pick(rng, item["from"])]
        recipient = self.wallets[self._pick(rng, item["to"])]
        amount = int(item.get("amount", 10))
        fee = int(item.get("fee", 2))
        if service:
            payload = bytes(rng.getrandbits(8) for _ in range(int(item.get("payload_bytes", 16))))
            tx = sender.build_service(channel, amount, fee, recipient.public, payload)
        else:
            tx = sender.build_payment(channel, amount, fee, recipient.public)
        self._submit(sender, channel, tx)

    def _do_funding(self, item: dict) -> None:
        sender = self.wallets[item["from"]]
        channel = int(item["to_channel"])
        destinations = [
            (self.wallets[w].public, int(v), channel) for w, v in item["outputs"]
        ]
        fee = int(item.get("fee", self.params.min_funding_fee))
        tx = sender.build_funding(destinations, fee)
        self._submit(sender, PAYMENT_CHANNEL, tx)

    def _do_registration(self, item: dict) -> None:
        proposer = self.wallets[item["proposer"]]
        desc = ProtocolDescriptor(
            service_number=int(item["service_number"]),
            max_tx_bytes=int(item.get("max_tx_bytes", 2048)),
            max_microblock_bytes=int(item.get("max_microblock_bytes", 16384)),
            microblock_interval=float(item.get("microblock_interval", 1.0)),
        )
        tx = proposer.build_registration(desc)
        self._submit(proposer, REGISTRATION_CHANNEL, tx)

    def _do_double_spend(self, item: dict, rng: random.Random) -> None:
        sender = self.wallets[item["from"]]
        channel = int(item.get("channel", PAYMENT_CHANNEL))
        amount = int(item.get("amount", 10))
        fee = int(item.get("fee", 2))
        pair = sender.build_conflicting_pair(channel, amount, fee)
        if pair is None:
            self._skipped_txs.append({"channel": channel, "time": self.now})
            return
        first, second = pair
        group = f"ds:{item.get('at_height', 0)}"
        self._submit(sender, channel, first, conflict_group=group)
        # hand the conflicting spend to a different node directly
        others = [
            n
            for n in sorted(self.nodes)
            if n != sender.attach.name and self.nodes[n].subscribes(channel) and self.nodes[n].online
        ]
        if not others:
            return
        target = self.nodes[others[rng.randrange(len(others))]]
        tx_hash = block_hash(second)
        self.tx_log[tx_hash] = {
            "channel": channel,
            "submit_time": self.now,
            "submit_height": target.proc.height,
            "conflict_group": group,
        }
        outbound = target.receive_tx(channel, second, self.now)
        self._dispatch_outbound(target, outbound)
        self._after_node_event(target)

    def _handle_partition_start(self, idx: int) -> None:
        part = self.scenario.partitions[idx]
        self.partition = part.groups
        self.metrics.add("partition_start", partition=idx, time=self.now)
        self._push(self.now + part.heal_after, "partition_heal", (idx,))

    def _handle_partition_heal(self, idx: int) -> None:
        self.partition = None
        self.metrics.add("partition_heal", partition=idx, time=self.now)
        self._convergence_watch = {
            "partition": idx,
            "heal_time": self.now,
            "kbs_at_heal": self._kbs_mined,
        }
        # kick a sync round so both sides learn of each other's chains
        for name in sorted(self.nodes):
            node = self.nodes[name]
            if not node.online:
                continue
            peers = [p for p in node.neighbors if self.nodes[p].online]
            if peers:
                self._send(name, peers[0], MsgSyncRequest(channels=node._sync_channels(), tip=node.tip))

    def _handle_churn_leave(self, name: str) -> None:
        if self.cutoff:
            return
        node = self.nodes[name]
        spec = next(s for s in self.scenario.nodes if s.name == name)
        cls = "miners" if spec.role == "miner" else "users"
        churn = self.scenario.churn[cls]
        if node.online:
            node.online = False
            self.metrics.add("churn", node=name, event="leave", time=self.now)
            if churn.rejoin_rate > 0:
                self._push(self.now + self._churn_rng.expovariate(churn.rejoin_rate), "churn_join", (name,))
        if churn.leave_rate > 0:
            self._push(self.now + self._churn_rng.expovariate(churn.leave_rate), "churn_leave", (name,))

    def _handle_churn_join(self, name: str) -> None:
        node = self.nodes[name]
        if node.online:
            return
        node.online = True
        self.metrics.add("churn", node=name, event="join", time=self.now)
        peers = [p for p in sorted(node.neighbors) if self.nodes[p].online]
        if peers:
            peer = peers[self._churn_rng.randrange(len(peers))]
            self._send(name, peer, MsgSyncRequest(channels=node._sync_channels(), tip=node.tip))
        if node.config.role == "miner":
            self._arm_miner(name, self.now)

    # -- main loop --------------------------------------------------------------------------

    def run(self) -> Metrics:
        handlers = {
            "mine": self._handle_mine,
            "mbtimer": self._handle_mbtimer,
            "deliver": self._handle_deliver,
            "workload": self._handle_workload,
            "partition_start": self._handle_partition_start,
            "partition_heal": self._handle_partition_heal,
            "churn_leave": self._handle_churn_leave,
            "churn_join": self._handle_churn_join,
        }
        limit_seconds = self.scenario.duration_seconds
        while self._heap:
            time, _, kind, payload = heapq.heappop(self._heap)
            self._events_processed += 1
            if self._events_processed > MAX_EVENTS:
                raise RuntimeError("event budget exhausted; scenario appears unbounded")
            self.now = time
            if limit_seconds is not None and time > limit_seconds:
                self.cutoff = True
                if kind != "deliver":
                    continue
            handlers[kind](*payload)
        self._finalize()
        return self.metrics

    # -- end-of-run reporting ------------------------------------------------------------------

    def _reference_node(self) -> Node:
        miners = [n for n in self.nodes.values() if n.config.role == "miner"]
        return max(miners, key=lambda n: (n.view.cumulative_work.get(n.tip, 0), n.name))

    def _canonical_replay(self, ref: Node) -> tuple[ChainProcessor, list[tuple[KeyBlock, ApplyResult]]]:
        proc = ChainProcessor(self.params, None)
        results = []
        path = ref.view.chain_to(ref.tip)
        for h in path[1:]:
            kb = ref.view.blocks[h]
            chains: dict[int, list[MicroBlock]] = {}
            for ch, tail in kb.channel_refs.items():
                chain = []
                cursor = tail
                while cursor != kb.prev:
                    mb = ref.mb_index[cursor]
                    chain.append(mb)
                    cursor = mb.prev
                chain.reverse()
                chains[ch] = chain
            results.append((kb, proc.apply_key_block(kb, chains)))
        return proc, results

    def _finalize(self) -> None:
        ref = self._reference_node()
        chain = ref.view.chain_to(ref.tip)
        chain_set = set(chain)
        proc, results = self._canonical_replay(ref)

        for kb_hash in sorted(self.kb_log, key=lambda h: (self.kb_log[h]["time"], h)):
            info = self.kb_log[kb_hash]
            self.metrics.add(
                "key_block",
                hash=kb_hash.hex(),
                height=info["height"],
                miner=info["miner"],
                time=info["time"],
                on_chain=kb_hash in chain_set,
            )

        confirm_height: dict[bytes, int] = {}
        for kb, result in results:
            for tx_hashes in result.confirmed.values():
                for tx_hash in tx_hashes:
                    confirm_height[tx_hash] = result.height
            if result.activations or result.activated_proposal:
                self.metrics.add(
                    "governance",
                    event="activation",
                    height=result.height,
                    proposal=(result.activated_proposal or b"").hex(),
                    channels=sorted(result.activations),
                )
            for leader_pub, epoch_height, revoked, credit in result.revocations:
                self.metrics.add(
                    "fraud",
                    leader=self.miner_pubs.get(leader_pub, leader_pub.hex()[:12]),
                    epoch_height=epoch_height,
                    report_height=result.height,
                    revoked=revoked,
                    credit=credit,
                )

        kb_time_by_height = {
            self.kb_log[h]["height"]: self.kb_log[h]["time"] for h in chain_set if h in self.kb_log
        }
        for tx_hash in sorted(self.tx_log):
            info = self.tx_log[tx_hash]
            height = confirm_height.get(tx_hash)
            row = {
                "tx": tx_hash.hex(),
                "channel": info["channel"],
                "submit_time": info["submit_time"],
                "submit_height": info["submit_height"],
                "status": "confirmed" if height is not None else "pending",
            }
            if info.get("conflict_group"):
                row["conflict_group"] = info["conflict_group"]
            if height is not None:
                row["confirm_height"] = height
                row["confirm_time"] = kb_time_by_height.get(height)
            self.metrics.add("tx", **row)
        for skip in self._skipped_txs:
            self.metrics.add("tx", status="skipped", **skip)

        # audits and per-height digests
        for name in sorted(self.nodes):
            node = self.nodes[name]
            try:
                digests = node.audit()
                ok = True
            except Violation as v:
                digests = []
                ok = False
                log.error("audit failed for %s: %s", name, v)
            self.metrics.add("audit", node=name, ok=ok)
            for height, channel, digest in digests:
                self.metrics.add(
                    "state_digest",
                    node=name,
                    channel=channel,
                    height=height,
                    digest=digest.hex(),
                )

        # final reward balances per miner
        for pub in sorted(self.miner_pubs, key=lambda p: self.miner_pubs[p]):
            name = self.miner_pubs[pub]
            for ch in sorted(proc.states):
                amount = sum(o.value for o in proc.states[ch].utxo.values() if o.owner == pub)
                if amount:
                    self.metrics.add("reward", miner=name, channel=ch, amount=amount)

        # safety oracle: every spend on the winning chain is unique
        double_spends = 0
        seen_outpoints: set = set()
        for h in chain[1:]:
            kb = ref.view.blocks[h]
            for ch, tail in kb.channel_refs.items():
                cursor = tail
                while cursor != kb.prev:
                    mb = ref.mb_index[cursor]
                    for tx in mb.txs:
                        for txin in getattr(tx, "inputs", ()):
                            if txin.outpoint in seen_outpoints:
                                double_spends += 1
                            seen_outpoints.add(txin.outpoint)
                    cursor = mb.prev
        supply = proc.supply()
        minted = proc.minted_total()
        conservation_ok = supply == minted - proc.burned
        self.metrics.add(
            "safety",
            double_spends=double_spends,
            conservation_ok=conservation_ok,
            supply=supply,
            minted=minted,
            burned=proc.burned,
        )

        self.metrics.add(
            "run_summary",
            final_height=proc.height,
            final_tip=proc.tip_hash.hex(),
            nodes=len(self.nodes),
            orphans=sum(1 for h in self.kb_log if h not in chain_set),
            reorgs=self._reorgs,
            events=self._events_processed,
        )


def run(scenario: ScenarioConfig) -> Metrics:
    """Execute a scenario; identical (scenario, seed) gives identical metrics."""
    return Simulation(scenario).run()
