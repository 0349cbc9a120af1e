"""Subsidy, fee splitting, and coinbase construction."""

from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from chainweave.errors import BadCoinbase
from chainweave.params import ChainParams
from chainweave.rewards import (
    FeeLedger,
    build_coinbase,
    expected_channel_outputs,
    split_fees,
    subsidy,
    verify_coinbase,
)
from chainweave.types import Coinbase, KeyBlock, Output
from chainweave.consensus import expected_work_nonce


@pytest.fixture
def miner_keys(keys):
    return keys["miner"].public, keys["miner2"].public


def test_subsidy_is_constant(params):
    assert subsidy(params, 1) == 50
    assert subsidy(params, 10**6) == 50
    assert sum(subsidy(params, h) for h in range(1, 101)) == 100 * 50


def test_subsidy_needs_positive_height(params):
    with pytest.raises(ValueError):
        subsidy(params, 0)


def test_split_basic():
    assert split_fees(100, 0.4) == (40, 60)
    assert split_fees(0, 0.4) == (0, 0)
    assert split_fees(7, 0.4) == (2, 5)


def test_split_sums_exhaustively():
    for total in range(0, 10_001):
        a, b = split_fees(total, 0.4)
        assert a + b == total
        assert a == int(total * 0.4)


@given(st.integers(min_value=0, max_value=10**12), st.floats(min_value=0.01, max_value=0.99))
def test_split_conserves_for_any_share(total, share):
    a, b = split_fees(total, share)
    assert a + b == total and a >= 0 and b >= 0


def test_coinbase_with_no_fees_is_single_subsidy_output(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {})
    assert cb.height == 4
    assert cb.outputs == (Output(value=50, owner=current, spend_channel=0),)


def test_coinbase_splits_channel_fees(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {3: 100})
    assert cb.outputs == (
        Output(value=50, owner=current, spend_channel=0),
        Output(value=40, owner=previous, spend_channel=3),
        Output(value=60, owner=current, spend_channel=3),
    )


def test_coinbase_conservation_over_channels(params, miner_keys):
    # fees {0: 10, 3: 7}: five outputs, S minted, 17 re-minted as fees
    current, previous = miner_keys
    fees = {0: 10, 3: 7}
    cb = build_coinbase(params, 4, current, previous, fees)
    assert len(cb.outputs) == 5
    minted = sum(o.value for o in cb.outputs)
    assert minted == params.block_subsidy + sum(fees.values())
    fee_outputs = [o for o in cb.outputs[1:]]
    assert sum(o.value for o in fee_outputs) == 17
    # channel lock: every fee output spends in the channel the fee came from
    by_channel = {}
    for o in fee_outputs:
        by_channel[o.spend_channel] = by_channel.get(o.spend_channel, 0) + o.value
    assert by_channel == fees


def test_zero_share_outputs_omitted(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {3: 1})
    # floor(0.4 * 1) == 0: no serializer output
    assert cb.outputs == (
        Output(value=50, owner=current, spend_channel=0),
        Output(value=1, owner=current, spend_channel=3),
    )


def make_kb(params, cb, miner):
    return KeyBlock(
        prev=b"\x01" * 32,
        height=cb.height,
        channel_refs={},
        inflow_commitments={},
        ballot=None,
        coinbase=cb,
        fraud_reports=(),
        miner=miner,
        work_nonce=expected_work_nonce(b"\x01" * 32, cb.height, miner),
        work=1,
    )


def test_verify_accepts_honest_coinbase(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {3: 100})
    verify_coinbase(make_kb(params, cb, current), params, previous, {3: 100})


def test_verify_rejects_extra_unit(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {3: 100})
    padded = Coinbase(
        height=4, outputs=cb.outputs + (Output(value=1, owner=current, spend_channel=0),)
    )
    with pytest.raises(BadCoinbase):
        verify_coinbase(make_kb(params, padded, current), params, previous, {3: 100})


def test_verify_rejects_overpaying_previous_miner(params, miner_keys):
    current, previous = miner_keys
    cb = build_coinbase(params, 4, current, previous, {3: 100})
    outputs = list(cb.outputs)
    outputs[1] = replace(outputs[1], value=outputs[1].value + 1)
    with pytest.raises(BadCoinbase):
        verify_coinbase(
            make_kb(params, Coinbase(height=4, outputs=tuple(outputs)), current),
            params,
            previous,
            {3: 100},
        )


def test_every_field_mutation_rejected(params, miner_keys):
    current, previous = miner_keys
    fees = {0: 10, 3: 7}
    cb = build_coinbase(params, 4, current, previous, fees)
    mutants = []
    for i, out in enumerate(cb.outputs):
        mutants.append((i, replace(out, value=out.value + 1)))
        mutants.append((i, replace(out, owner=b"\xEE" * 32)))
        mutants.append((i, replace(out, spend_channel=out.spend_channel + 1)))
    for i, mutant in mutants:
        outputs = list(cb.outputs)
        outputs[i] = mutant
        bad = Coinbase(height=4, outputs=tuple(outputs))
        with pytest.raises(BadCoinbase):
            verify_coinbase(make_kb(params, bad, current), params, previous, fees)


def test_expected_channel_outputs_matches_full_coinbase(params, miner_keys):
    current, previous = miner_keys
    fees = {0: 13, 3: 7, 4: 29}
    cb = build_coinbase(params, 9, current, previous, fees)
    for ch, amount in fees.items():
        expected = expected_channel_outputs(params, ch, amount, current, previous)
        got = [o for o in cb.outputs[1:] if o.spend_channel == ch]
        assert got == expected


def test_fee_ledger_accumulates_exactly():
    ledger = FeeLedger()
    ledger.record(4, 0, 10)
    ledger.record(4, 0, 5)
    ledger.record(4, 3, 7)
    ledger.record(5, 0, 1)
    assert ledger.epoch_fees(4) == {0: 15, 3: 7}
    assert ledger.epoch_fees(5) == {0: 1}
    assert ledger.total() == 23
