"""Simulator behavior: determinism, convergence, adversaries, churn."""

import pytest

from chainweave.netsim import Simulation, run
from chainweave.scenario import parse_scenario


def scen(seed=7, key_blocks=10, nodes=None, wallets=None, workload=None, **extra):
    data = {
        "version": 1,
        "seed": seed,
        "duration": {"key_blocks": key_blocks},
        "params": {"target_keyblock_interval": 10.0},
        "latency": {"min": 0.02, "mean": 0.06},
        "nodes": nodes
        or [
            {"name": "m0", "role": "miner", "hash_power": 1},
            {"name": "u0", "role": "user", "channels": [0]},
        ],
        "wallets": wallets or [{"name": "alice", "funds": 1000, "attach": "m0"}],
        "workload": workload or [],
    }
    data.update(extra)
    return parse_scenario(data)


def digests_by_node(metrics):
    out = {}
    for row in metrics.of_kind("state_digest"):
        out.setdefault(row["node"], {})[(row["channel"], row["height"])] = row["digest"]
    return out


def test_degenerate_network_agrees():
    # one miner, one user, no adversary: the user's state equals the miner's
    workload = [
        {"kind": "payments", "channel": 0, "count": 8, "start": 5.0, "interval": 6.0,
         "amount": 10, "fee": 2, "from": ["alice"], "to": ["alice"]}
    ]
    metrics = run(scen(workload=workload))
    assert all(r["ok"] for r in metrics.of_kind("audit"))
    digs = digests_by_node(metrics)
    for key, value in digs["u0"].items():
        assert digs["m0"][key] == value


def test_identical_seed_identical_metrics():
    workload = [
        {"kind": "payments", "channel": 0, "count": 5, "start": 5.0, "interval": 7.0,
         "amount": 10, "fee": 2, "from": ["alice"], "to": ["alice"]}
    ]
    a = run(scen(seed=7, workload=workload)).to_ndjson()
    b = run(scen(seed=7, workload=workload)).to_ndjson()
    assert a == b


def test_different_seeds_differ():
    a = run(scen(seed=7)).to_ndjson()
    b = run(scen(seed=8)).to_ndjson()
    assert a != b


def test_equal_miners_win_proportionally():
    nodes = [{"name": f"m{i}", "role": "miner", "hash_power": 20} for i in range(5)]
    metrics = run(scen(seed=13, key_blocks=200, nodes=nodes, wallets=[]))
    kbs = [r for r in metrics.of_kind("key_block") if r["on_chain"]]
    shares = {}
    for r in kbs:
        shares[r["miner"]] = shares.get(r["miner"], 0) + 1
    total = sum(shares.values())
    for name in (n["name"] for n in nodes):
        assert abs(shares.get(name, 0) / total - 0.2) <= 0.05


def test_partition_heals_to_single_tip():
    nodes = [
        {"name": "m0", "role": "miner", "hash_power": 40},
        {"name": "m1", "role": "miner", "hash_power": 60},
    ]
    partitions = [{"at_height": 3, "groups": [["m0"], ["m1"]], "heal_after": 35.0}]
    sim = Simulation(scen(seed=5, key_blocks=16, nodes=nodes, wallets=[], partitions=partitions))
    metrics = sim.run()
    conv = metrics.of_kind("convergence")
    assert conv, "partition never converged"
    assert conv[0]["key_blocks_after_heal"] <= 2
    tips = {n.tip for n in sim.nodes.values()}
    assert len(tips) == 1
    assert metrics.of_kind("run_summary")[0]["reorgs"] >= 1


def test_zero_length_partition_is_noop():
    nodes = [
        {"name": "m0", "role": "miner", "hash_power": 40},
        {"name": "m1", "role": "miner", "hash_power": 60},
    ]
    partitions = [{"at_height": 3, "groups": [["m0"], ["m1"]], "heal_after": 0.0}]
    metrics = run(scen(seed=5, key_blocks=10, nodes=nodes, wallets=[], partitions=partitions))
    assert all(r["ok"] for r in metrics.of_kind("audit"))


def test_double_spender_never_lands_twice():
    nodes = [
        {"name": "m0", "role": "miner", "hash_power": 50},
        {"name": "m1", "role": "miner", "hash_power": 50},
    ]
    wallets = [
        {"name": "alice", "funds": 1000, "attach": "m0"},
        {"name": "mallory", "funds": 400, "outputs": 1, "attach": "m0"},
    ]
    workload = [
        {"kind": "double_spend", "at_height": 2, "from": "mallory", "channel": 0,
         "amount": 300, "fee": 3},
    ]
    metrics = run(scen(seed=21, key_blocks=12, nodes=nodes, wallets=wallets, workload=workload))
    confirmed_conflicts = [
        r for r in metrics.of_kind("tx")
        if r.get("conflict_group") and r.get("status") == "confirmed"
    ]
    assert len(confirmed_conflicts) <= 1
    assert metrics.of_kind("safety")[0]["double_spends"] == 0


def test_forking_leader_is_caught_and_revoked():
    nodes = [
        {"name": "m0", "role": "miner", "hash_power": 40},
        {"name": "m1", "role": "miner", "hash_power": 40},
        {"name": "fk", "role": "miner", "hash_power": 20, "fork_microblocks": True},
    ]
    wallets = [{"name": "alice", "funds": 4000, "outputs": 16, "attach": "m0"}]
    workload = [
        {"kind": "payments", "channel": 0, "count": 40, "start": 3.0, "interval": 3.0,
         "amount": 11, "fee": 2, "from": ["alice"], "to": ["alice"]}
    ]
    metrics = run(scen(seed=3, key_blocks=15, nodes=nodes, wallets=wallets, workload=workload))
    kbs = [r for r in metrics.of_kind("key_block") if r["on_chain"]]
    forker_led = [r for r in kbs if r["miner"] == "fk" and r["height"] < max(k["height"] for k in kbs)]
    fraud = metrics.of_kind("fraud")
    if forker_led:  # it led at least one full epoch with traffic
        assert fraud, "forking leader escaped detection"
    for row in fraud:
        assert row["leader"] == "fk"
    assert metrics.of_kind("safety")[0]["conservation_ok"]


def test_churny_user_rejoins_and_audits():
    nodes = [
        {"name": "m0", "role": "miner", "hash_power": 1},
        {"name": "u0", "role": "user", "channels": [0]},
    ]
    churn = {"users": {"leave_rate": 0.01, "rejoin_rate": 0.05}}
    workload = [
        {"kind": "payments", "channel": 0, "count": 20, "start": 4.0, "interval": 5.0,
         "amount": 10, "fee": 2, "from": ["alice"], "to": ["alice"]}
    ]
    metrics = run(scen(seed=17, key_blocks=20, nodes=nodes, workload=workload, churn=churn))
    churn_rows = metrics.of_kind("churn")
    assert any(r["event"] == "leave" for r in churn_rows)
    assert any(r["event"] == "join" for r in churn_rows)
    assert all(r["ok"] for r in metrics.of_kind("audit"))


def test_duration_in_seconds_mode():
    metrics = run(scen(duration={"seconds": 120.0}))
    summary = metrics.of_kind("run_summary")[0]
    assert summary["final_height"] >= 1
