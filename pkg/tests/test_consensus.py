"""Chain view, fork choice, mining lottery, fork detection, revocation."""

import random
from dataclasses import replace

import pytest

from chainweave import crypto
from chainweave.codec import block_hash, header_sighash, microblock_header, tx_sighash
from chainweave.consensus import (
    ChainView,
    EpochSummary,
    HeaderIndex,
    apply_fraud_report,
    choose_tip,
    detect_microblock_fork,
    expected_work_nonce,
    fork_choice,
    fork_offense_key,
    fraud_reward,
    genesis_block,
    mine_next,
    miner_delay,
    validate_key_block,
    verify_fraud_evidence,
)
from chainweave.errors import (
    BadChain,
    BadCoinbase,
    BadEvidence,
    BadHeight,
    BadInflowCommitment,
    BadBallot,
    BadWork,
    InertChannelListed,
    StaleEvidence,
    TooManyRefs,
)
from chainweave.ledger import ChannelState
from chainweave.params import ChainParams
from chainweave.rewards import build_coinbase
from chainweave.types import (
    Coinbase,
    FraudEvidence,
    FraudProof,
    KeyBlock,
    MicroBlockHeader,
    OutPoint,
    Output,
)


def kb_on(parent_hash, height, miner=b"\x0A" * 32, coinbase=None, **fields):
    kb = KeyBlock(
        prev=parent_hash,
        height=height,
        channel_refs=fields.get("channel_refs", {}),
        inflow_commitments=fields.get("inflow_commitments", {}),
        ballot=fields.get("ballot"),
        coinbase=coinbase or Coinbase(height=height, outputs=()),
        fraud_reports=fields.get("fraud_reports", ()),
        miner=miner,
        work_nonce=expected_work_nonce(parent_hash, height, miner),
        work=fields.get("work", 1),
    )
    return kb


@pytest.fixture
def view(params):
    return ChainView(genesis_block(params))


def extend(view, parent_hash, n, tag):
    h = parent_hash
    height = view.blocks[parent_hash].height
    for i in range(n):
        height += 1
        kb = kb_on(h, height, miner=tag * 32)
        h = view.add_block(kb)
    return h


def test_cumulative_work_and_leaves(view):
    g = view.genesis_hash
    a = extend(view, g, 3, b"\x0A")
    b = extend(view, g, 2, b"\x0B")
    assert view.cumulative_work[a] == 4
    assert view.cumulative_work[b] == 3
    assert set(view.leaves()) == {a, b}


def test_orphans_never_enter_the_view(view):
    stranger = kb_on(b"\x77" * 32, 5)
    with pytest.raises(BadChain):
        view.add_block(stranger)


def test_fork_choice_takes_strictly_more_work(view):
    g = view.genesis_hash
    long_tip = extend(view, g, 12, b"\x0A")
    extend(view, g, 10, b"\x0B")
    for seed in range(20):
        assert fork_choice(view, seed) == long_tip


def test_fork_choice_single_leaf(view):
    tip = extend(view, view.genesis_hash, 1, b"\x0A")
    assert fork_choice(view, 0) == tip


def test_fork_choice_tie_deterministic_per_seed(view):
    g = view.genesis_hash
    extend(view, g, 3, b"\x0A")
    extend(view, g, 3, b"\x0B")
    first = fork_choice(view, 42)
    for _ in range(50):
        assert fork_choice(view, 42) == first


def test_fork_choice_tie_is_uniform(view):
    g = view.genesis_hash
    a = extend(view, g, 3, b"\x0A")
    b = extend(view, g, 3, b"\x0B")
    counts = {a: 0, b: 0}
    for seed in range(10_000):
        counts[fork_choice(view, seed)] += 1
    share = counts[a] / 10_000
    assert abs(share - 0.5) <= 0.02


def test_choose_tip_sticks_on_tie(view):
    g = view.genesis_hash
    a = extend(view, g, 3, b"\x0A")
    b = extend(view, g, 3, b"\x0B")
    rng = random.Random(1)
    assert choose_tip(view, a, rng) == a
    assert choose_tip(view, b, rng) == b
    longer = extend(view, a, 1, b"\x0C")
    assert choose_tip(view, b, rng) == longer


def test_mine_next_single_miner(params):
    rng = random.Random(0)
    winner, interval = mine_next([(b"\x01" * 32, 10.0)], rng, params)
    assert winner == b"\x01" * 32 and interval > 0


def test_mine_next_proportional_to_power(params):
    rng = random.Random(7)
    miners = [(b"\x01" * 32, 75.0), (b"\x02" * 32, 25.0)]
    wins = {m: 0 for m, _ in miners}
    total_interval = 0.0
    for _ in range(10_000):
        winner, interval = mine_next(miners, rng, params)
        wins[winner] += 1
        total_interval += interval
    assert abs(wins[miners[0][0]] / 10_000 - 0.75) <= 0.02
    assert abs(total_interval / 10_000 - params.target_keyblock_interval) < 0.5


def test_mine_next_requires_power(params):
    with pytest.raises(ValueError):
        mine_next([(b"\x01" * 32, 0.0)], random.Random(0), params)


def test_miner_delay_superposition_matches_target(params):
    # two independent timers: the network-wide rate matches one global lottery
    rng = random.Random(3)
    draws = []
    for _ in range(20_000):
        a = miner_delay(75.0, 100.0, params.target_keyblock_interval, rng)
        b = miner_delay(25.0, 100.0, params.target_keyblock_interval, rng)
        draws.append(min(a, b))
    mean = sum(draws) / len(draws)
    assert abs(mean - params.target_keyblock_interval) < 0.3


# -- microblock fork detection ---------------------------------------------------------


def signed_header(keys, channel, epoch, prev, txs_hash, leader="miner"):
    h = MicroBlockHeader(
        channel=channel,
        epoch=epoch,
        prev=prev,
        txs_hash=txs_hash,
        leader=keys[leader].public,
        sig=b"",
    )
    return replace(h, sig=crypto.sign(keys[leader].secret, header_sighash(h)))


def test_honest_linear_chain_has_no_fork(keys):
    epoch = b"\x01" * 32
    headers = [
        signed_header(keys, 0, epoch, epoch, b"\x10" * 32),
        signed_header(keys, 0, epoch, b"\x20" * 32, b"\x30" * 32),
    ]
    assert detect_microblock_fork(headers) is None


def test_same_leader_fork_detected(keys):
    epoch = b"\x01" * 32
    a = signed_header(keys, 0, epoch, epoch, b"\x10" * 32)
    b = signed_header(keys, 0, epoch, epoch, b"\x22" * 32)
    ev = detect_microblock_fork([a, b])
    assert ev is not None
    verify_fraud_evidence(ev)
    assert {block_hash(ev.first), block_hash(ev.second)} == {block_hash(a), block_hash(b)}


def test_forks_by_different_leaders_are_not_fraud(keys):
    # oracle: scan all pairs; only same-leader same-position pairs count
    epoch1, epoch2 = b"\x01" * 32, b"\x02" * 32
    headers = [
        signed_header(keys, 0, epoch1, epoch1, b"\x10" * 32, leader="miner"),
        signed_header(keys, 0, epoch2, epoch2, b"\x20" * 32, leader="miner2"),
        signed_header(keys, 0, epoch1, epoch1, b"\x30" * 32, leader="miner2"),
    ]
    assert detect_microblock_fork(headers) is None
    same_position_same_leader = [
        (x, y)
        for x in headers
        for y in headers
        if x is not y
        and (x.channel, x.epoch, x.prev, x.leader) == (y.channel, y.epoch, y.prev, y.leader)
        and block_hash(x) != block_hash(y)
    ]
    assert not same_position_same_leader


def test_header_index_streams_and_normalizes(keys):
    epoch = b"\x01" * 32
    a = signed_header(keys, 0, epoch, epoch, b"\x10" * 32)
    b = signed_header(keys, 0, epoch, epoch, b"\x22" * 32)
    idx1, idx2 = HeaderIndex(), HeaderIndex()
    assert idx1.observe(a) is None
    ev_ab = idx1.observe(b)
    assert idx2.observe(b) is None
    ev_ba = idx2.observe(a)
    assert fork_offense_key(ev_ab) == fork_offense_key(ev_ba)
    assert block_hash(ev_ab) == block_hash(ev_ba)  # normalized ordering


def test_unsigned_headers_ignored(keys):
    epoch = b"\x01" * 32
    a = signed_header(keys, 0, epoch, epoch, b"\x10" * 32)
    forged = replace(a, txs_hash=b"\x22" * 32)  # signature now invalid
    assert detect_microblock_fork([a, forged]) is None


# -- revocation -------------------------------------------------------------------------


def fraud_setup(keys, params):
    """Forked epoch at height 4; returns (report, states, epoch_kb, coinbases)."""
    leader = keys["miner"]
    epoch_hash = b"\x04" * 32
    a = signed_header(keys, 0, epoch_hash, epoch_hash, b"\x10" * 32)
    b = signed_header(keys, 0, epoch_hash, epoch_hash, b"\x22" * 32)
    ev = detect_microblock_fork([a, b])
    report = FraudProof(evidence=ev, reporter=keys["carol"].public, sig=b"")
    report = replace(report, sig=crypto.sign(keys["carol"].secret, tx_sighash(report)))
    epoch_cb = build_coinbase(params, 4, leader.public, keys["miner2"].public, {0: 10})
    next_cb = build_coinbase(params, 5, keys["miner2"].public, leader.public, {0: 20})
    epoch_kb = kb_on(b"\x03" * 32, 4, miner=leader.public, coinbase=epoch_cb)
    states = {0: ChannelState(channel=0, height=5, tip=b"\x05" * 32)}
    for cb in (epoch_cb, next_cb):
        cb_hash = block_hash(cb)
        for i, out in enumerate(cb.outputs):
            op = OutPoint(tx_hash=cb_hash, index=i)
            states[0].utxo[op] = out
            states[0].coinbase_heights[op] = cb.height
    return report, states, epoch_kb, [epoch_cb, next_cb]


def leader_balance(states, leader_pub):
    return sum(o.value for o in states[0].utxo.values() if o.owner == leader_pub)


def test_revocation_zeroes_the_epoch_reward(keys, params):
    report, states, epoch_kb, coinbases = fraud_setup(keys, params)
    leader = keys["miner"].public
    before = leader_balance(states, leader)
    assert before > 0
    revoked, credit = apply_fraud_report(report, states, epoch_kb, coinbases, params, 5)
    assert revoked == before
    assert credit == fraud_reward(revoked) == revoked // 20
    assert leader_balance(states, leader) == 0
    assert leader_balance(states, keys["carol"].public) == credit


def test_report_after_window_is_stale(keys, params):
    report, states, epoch_kb, coinbases = fraud_setup(keys, params)
    too_late = epoch_kb.height + params.coinbase_maturity + 1
    with pytest.raises(StaleEvidence):
        apply_fraud_report(report, states, epoch_kb, coinbases, params, too_late)


def test_forged_second_header_rejected(keys, params):
    report, states, epoch_kb, coinbases = fraud_setup(keys, params)
    forged = replace(report.evidence.second, sig=b"\x00" * 32)
    bad = replace(report, evidence=replace(report.evidence, second=forged))
    with pytest.raises(BadEvidence):
        apply_fraud_report(bad, states, epoch_kb, coinbases, params, 5)


def test_wrong_leader_rejected(keys, params):
    report, states, epoch_kb, coinbases = fraud_setup(keys, params)
    imposter_kb = replace(epoch_kb, miner=keys["miner2"].public)
    with pytest.raises(BadEvidence):
        apply_fraud_report(report, states, imposter_kb, coinbases, params, 5)


def test_double_prosecution_revokes_nothing_more(keys, params):
    report, states, epoch_kb, coinbases = fraud_setup(keys, params)
    hit: set = set()
    apply_fraud_report(report, states, epoch_kb, coinbases, params, 5, already_revoked=hit)
    again, credit = apply_fraud_report(
        report, states, epoch_kb, coinbases, params, 5, already_revoked=hit
    )
    assert again == 0 and credit == 0


# -- key block validation against an epoch summary ----------------------------------------


def summary_for(params, tails=None, fees=None, previous=None, leaves=None):
    return EpochSummary(
        tails=tails or {},
        inflow_leaves=leaves or {},
        fees=fees or {},
        previous_miner=previous,
    )


def test_validate_accepts_honest_block(params, view, keys):
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    kb = kb_on(g, 1, miner=keys["miner"].public, coinbase=cb)
    validate_key_block(kb, view, params, summary_for(params))


def test_validate_rejects_bad_height(params, view, keys):
    g = view.genesis_hash
    cb = build_coinbase(params, 2, keys["miner"].public, None, {})
    kb = kb_on(g, 2, miner=keys["miner"].public, coinbase=cb)
    with pytest.raises(BadHeight):
        validate_key_block(kb, view, params, summary_for(params))


def test_validate_rejects_bad_work_witness(params, view, keys):
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    kb = replace(kb_on(g, 1, miner=keys["miner"].public, coinbase=cb), work_nonce=b"\x00" * 32)
    with pytest.raises(BadWork):
        validate_key_block(kb, view, params, summary_for(params))


def test_inert_channel_listed_is_rejected(params, view, keys):
    # a ref to a channel with no transactions this epoch
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    kb = kb_on(g, 1, miner=keys["miner"].public, coinbase=cb, channel_refs={0: b"\x10" * 32})
    with pytest.raises(InertChannelListed):
        validate_key_block(kb, view, params, summary_for(params))


def test_too_many_refs_boundary(view, keys):
    params = ChainParams(max_channel_refs=256)
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    refs = {c: bytes([c % 256]) * 32 for c in range(257)}
    kb = kb_on(g, 1, miner=keys["miner"].public, coinbase=cb, channel_refs=refs)
    with pytest.raises(TooManyRefs):
        validate_key_block(kb, view, params, summary_for(params))


def test_coinbase_overpayment_rejected(params, view, keys):
    # the rewards oracle recomputes the exact split; one extra unit fails
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    padded = Coinbase(
        height=1, outputs=cb.outputs + (Output(value=1, owner=keys["miner"].public, spend_channel=0),)
    )
    kb = kb_on(g, 1, miner=keys["miner"].public, coinbase=padded)
    with pytest.raises(BadCoinbase):
        validate_key_block(kb, view, params, summary_for(params))


def test_unknown_ballot_rejected(params, view, keys):
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    kb = kb_on(g, 1, miner=keys["miner"].public, coinbase=cb, ballot=b"\x31" * 32)
    with pytest.raises(BadBallot):
        validate_key_block(kb, view, params, summary_for(params))


def test_wrong_inflow_commitments_rejected(params, view, keys):
    g = view.genesis_hash
    cb = build_coinbase(params, 1, keys["miner"].public, None, {})
    kb = kb_on(
        g, 1, miner=keys["miner"].public, coinbase=cb, inflow_commitments={3: b"\x00" * 32}
    )
    with pytest.raises(BadInflowCommitment):
        validate_key_block(kb, view, params, summary_for(params))
