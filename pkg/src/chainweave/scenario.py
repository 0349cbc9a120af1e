"""Scenario file schema: versioned JSON, strict about unknown keys.

A scenario fully determines a simulation run together with its seed; there is
no other source of configuration or entropy.  Unknown keys are errors rather
than warnings because a silently ignored setting would invalidate whatever
experiment the scenario was written for.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidScenario
from .params import ChainParams

SCHEMA_VERSION = 1

_PARAM_KEYS = {
    "activation_threshold",
    "activation_interval",
    "target_keyblock_interval",
    "max_channel_refs",
    "min_funding_fee",
    "block_subsidy",
    "serializer_fee_share",
    "coinbase_maturity",
}

_NODE_KEYS = {
    "name",
    "role",
    "hash_power",
    "channels",
    "censor_channels",
    "fork_microblocks",
    "suppress_ballots",
    "vote",
}

_WALLET_KEYS = {"name", "funds", "outputs", "attach"}

_WORKLOAD_KEYS = {
    "payments": {"kind", "channel", "count", "start", "interval", "amount", "fee", "from", "to"},
    "service": {
        "kind",
        "channel",
        "count",
        "start",
        "interval",
        "amount",
        "fee",
        "payload_bytes",
        "from",
        "to",
    },
    "funding": {"kind", "at_height", "from", "to_channel", "outputs", "fee"},
    "registration": {
        "kind",
        "at_height",
        "proposer",
        "service_number",
        "max_tx_bytes",
        "max_microblock_bytes",
        "microblock_interval",
    },
    "double_spend": {"kind", "at_height", "from", "channel", "amount", "fee"},
}

_PARTITION_KEYS = {"at_height", "groups", "heal_after"}

_TOP_KEYS = {
    "version",
    "seed",
    "duration",
    "params",
    "latency",
    "nodes",
    "topology",
    "churn",
    "wallets",
    "workload",
    "partitions",
}


@dataclass(frozen=True)
class NodeSpec:
    name: str
    role: str
    hash_power: float = 0.0
    channels: tuple[int, ...] = ()
    censor_channels: tuple[int, ...] = ()
    fork_microblocks: bool = False
    suppress_ballots: bool = False
    vote: str = "all"


@dataclass(frozen=True)
class WalletSpec:
    name: str
    funds: int
    outputs: int = 4
    attach: str | None = None


@dataclass(frozen=True)
class ChurnSpec:
    leave_rate: float = 0.0
    rejoin_rate: float = 0.0


@dataclass(frozen=True)
class PartitionSpec:
    at_height: int
    groups: tuple[tuple[str, ...], ...]
    heal_after: float


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_key_blocks: int | None
    duration_seconds: float | None
    param_overrides: dict
    latency_min: float
    latency_mean: float
    nodes: tuple[NodeSpec, ...]
    topology: tuple[tuple[str, str], ...] | None  # None = fully connected
    churn: dict[str, ChurnSpec]
    wallets: tuple[WalletSpec, ...]
    workload: tuple[dict, ...]
    partitions: tuple[PartitionSpec, ...]

    def build_params(self, genesis_allocation) -> ChainParams:
        params = ChainParams(genesis_allocation=genesis_allocation, **self.param_overrides)
        params.validate()
        return params


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidScenario(msg)


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    _require(isinstance(obj, dict), f"{where}: expected an object")
    unknown = set(obj) - allowed
    _require(not unknown, f"{where}: unknown keys {sorted(unknown)}")


def parse_scenario(data: dict) -> ScenarioConfig:
    _check_keys(data, _TOP_KEYS, "scenario")
    _require(data.get("version") == SCHEMA_VERSION, f"scenario: version must be {SCHEMA_VERSION}")
    _require(isinstance(data.get("seed"), int), "scenario: seed is mandatory and integer")

    duration = data.get("duration")
    _check_keys(duration or {}, {"key_blocks", "seconds"}, "duration")
    _require(bool(duration), "scenario: duration is mandatory")
    kb = duration.get("key_blocks")
    secs = duration.get("seconds")
    _require((kb is None) != (secs is None), "duration: exactly one of key_blocks/seconds")
    if kb is not None:
        _require(isinstance(kb, int) and kb >= 1, "duration.key_blocks must be a positive integer")
    if secs is not None:
        _require(secs > 0, "duration.seconds must be positive")

    overrides = data.get("params", {})
    _check_keys(overrides, _PARAM_KEYS, "params")

    latency = data.get("latency", {"min": 0.01, "mean": 0.05})
    _check_keys(latency, {"min", "mean"}, "latency")
    lat_min = float(latency.get("min", 0.01))
    lat_mean = float(latency.get("mean", max(lat_min, 0.05)))
    _require(0 <= lat_min <= lat_mean, "latency: need 0 <= min <= mean")

    raw_nodes = data.get("nodes", [])
    _require(raw_nodes, "scenario: at least one node required")
    nodes = []
    names = set()
    for i, n in enumerate(raw_nodes):
        _check_keys(n, _NODE_KEYS, f"nodes[{i}]")
        _require(isinstance(n.get("name"), str) and n["name"], f"nodes[{i}]: name required")
        _require(n["name"] not in names, f"nodes[{i}]: duplicate name {n['name']}")
        names.add(n["name"])
        role = n.get("role")
        _require(role in ("miner", "user"), f"nodes[{i}]: role must be miner or user")
        if role == "miner":
            _require(float(n.get("hash_power", 0)) > 0, f"nodes[{i}]: miners need hash_power > 0")
        vote = n.get("vote", "all")
        _require(vote in ("all", "none"), f"nodes[{i}]: vote must be all or none")
        nodes.append(
            NodeSpec(
                name=n["name"],
                role=role,
                hash_power=float(n.get("hash_power", 0.0)),
                channels=tuple(int(c) for c in n.get("channels", [])),
                censor_channels=tuple(int(c) for c in n.get("censor_channels", [])),
                fork_microblocks=bool(n.get("fork_microblocks", False)),
                suppress_ballots=bool(n.get("suppress_ballots", False)),
                vote=vote,
            )
        )
    _require(any(n.role == "miner" for n in nodes), "scenario: at least one miner required")

    topology = data.get("topology", "full")
    edges: tuple[tuple[str, str], ...] | None
    if topology == "full":
        edges = None
    else:
        _require(isinstance(topology, list), "topology: 'full' or a list of [a, b] edges")
        pairs = []
        for e in topology:
            _require(
                isinstance(e, list) and len(e) == 2 and all(x in names for x in e),
                f"topology: bad edge {e}",
            )
            pairs.append((e[0], e[1]))
        edges = tuple(pairs)

    churn_raw = data.get("churn", {})
    _check_keys(churn_raw, {"miners", "users"}, "churn")
    churn = {}
    for cls in ("miners", "users"):
        c = churn_raw.get(cls, {})
        _check_keys(c, {"leave_rate", "rejoin_rate"}, f"churn.{cls}")
        churn[cls] = ChurnSpec(
            leave_rate=float(c.get("leave_rate", 0.0)),
            rejoin_rate=float(c.get("rejoin_rate", 0.0)),
        )
        _require(churn[cls].leave_rate >= 0 and churn[cls].rejoin_rate >= 0, f"churn.{cls}: rates >= 0")

    wallets = []
    wallet_names = set()
    for i, w in enumerate(data.get("wallets", [])):
        _check_keys(w, _WALLET_KEYS, f"wallets[{i}]")
        _require(isinstance(w.get("name"), str) and w["name"], f"wallets[{i}]: name required")
        _require(w["name"] not in wallet_names, f"wallets[{i}]: duplicate name")
        wallet_names.add(w["name"])
        _require(isinstance(w.get("funds"), int) and w["funds"] >= 0, f"wallets[{i}]: funds >= 0")
        attach = w.get("attach")
        if attach is not None:
            _require(attach in names, f"wallets[{i}]: attach must name a node")
        wallets.append(
            WalletSpec(
                name=w["name"],
                funds=w["funds"],
                outputs=int(w.get("outputs", 4)),
                attach=attach,
            )
        )

    workload = []
    for i, item in enumerate(data.get("workload", [])):
        kind = item.get("kind")
        _require(kind in _WORKLOAD_KEYS, f"workload[{i}]: unknown kind {kind!r}")
        _check_keys(item, _WORKLOAD_KEYS[kind], f"workload[{i}]")
        for ref_key in ("from", "proposer"):
            ref = item.get(ref_key)
            if isinstance(ref, str):
                _require(ref in wallet_names, f"workload[{i}]: unknown wallet {ref}")
            elif isinstance(ref, list):
                for r in ref:
                    _require(r in wallet_names, f"workload[{i}]: unknown wallet {r}")
        to = item.get("to")
        if isinstance(to, list):
            for r in to:
                _require(r in wallet_names, f"workload[{i}]: unknown wallet {r}")
        if kind == "funding":
            for pair in item.get("outputs", []):
                _require(
                    isinstance(pair, list) and len(pair) == 2 and pair[0] in wallet_names,
                    f"workload[{i}]: outputs entries are [wallet, value]",
                )
        workload.append(dict(item))

    partitions = []
    for i, p in enumerate(data.get("partitions", [])):
        _check_keys(p, _PARTITION_KEYS, f"partitions[{i}]")
        groups = p.get("groups")
        _require(isinstance(groups, list) and len(groups) >= 2, f"partitions[{i}]: need >= 2 groups")
        flat = [x for g in groups for x in g]
        _require(set(flat) == names and len(flat) == len(names), f"partitions[{i}]: groups must partition the node set")
        partitions.append(
            PartitionSpec(
                at_height=int(p["at_height"]),
                groups=tuple(tuple(g) for g in groups),
                heal_after=float(p["heal_after"]),
            )
        )

    return ScenarioConfig(
        seed=data["seed"],
        duration_key_blocks=kb,
        duration_seconds=secs,
        param_overrides=dict(overrides),
        latency_min=lat_min,
        latency_mean=lat_mean,
        nodes=tuple(nodes),
        topology=edges,
        churn=churn,
        wallets=tuple(wallets),
        workload=tuple(workload),
        partitions=tuple(partitions),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidScenario(f"cannot read scenario {path}: {e}")
    return parse_scenario(data)


def scenario_content_hash(path: str | Path) -> str:
    """Content hash of the parsed scenario, for run provenance."""
    import hashlib

    data = json.loads(Path(path).read_text())
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
