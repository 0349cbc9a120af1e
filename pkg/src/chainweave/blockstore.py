"""Append-only per-node block store.

One file of key blocks, one file per subscribed channel of microblocks, and
one file of inflow proofs.  Records are canonical encodings framed by a
4-byte big-endian length, so replay reads back bit-exact objects and any
corrupted byte surfaces as a decode or hash failure.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .codec import canonical_decode, canonical_encode
from .errors import CodecError
from .params import ChainParams
from .types import InflowProof, KeyBlock, MicroBlock

KEYBLOCK_FILE = "keyblocks.log"
INFLOW_FILE = "inflows.log"
PARAMS_FILE = "params.json"
_CHANNEL_RE = re.compile(r"^channel_(\d+)\.log$")


def frame(payload: bytes) -> bytes:
    return len(payload).to_bytes(4, "big") + payload


def iter_frames(data: bytes, origin: str = "<bytes>"):
    """Yield (offset, payload) pairs; truncation raises CodecError."""
    off = 0
    while off < len(data):
        if off + 4 > len(data):
            raise CodecError(f"{origin}: truncated frame header at offset {off}")
        n = int.from_bytes(data[off : off + 4], "big")
        if off + 4 + n > len(data):
            raise CodecError(f"{origin}: truncated frame at offset {off}")
        yield off, data[off + 4 : off + 4 + n]
        off += 4 + n


def params_to_json(params: ChainParams) -> dict:
    return {
        "activation_threshold": params.activation_threshold,
        "activation_interval": params.activation_interval,
        "target_keyblock_interval": params.target_keyblock_interval,
        "max_channel_refs": params.max_channel_refs,
        "min_funding_fee": params.min_funding_fee,
        "block_subsidy": params.block_subsidy,
        "serializer_fee_share": params.serializer_fee_share,
        "coinbase_maturity": params.coinbase_maturity,
        "genesis_allocation": [
            [owner.hex(), value] for owner, value in params.genesis_allocation
        ],
    }


def params_from_json(data: dict) -> ChainParams:
    alloc = tuple((bytes.fromhex(o), v) for o, v in data.get("genesis_allocation", []))
    return ChainParams(
        activation_threshold=data["activation_threshold"],
        activation_interval=data["activation_interval"],
        target_keyblock_interval=data["target_keyblock_interval"],
        max_channel_refs=data["max_channel_refs"],
        min_funding_fee=data["min_funding_fee"],
        block_subsidy=data["block_subsidy"],
        serializer_fee_share=data["serializer_fee_share"],
        coinbase_maturity=data["coinbase_maturity"],
        genesis_allocation=alloc,
    )


def write_store(
    directory: Path,
    params: ChainParams,
    key_blocks: list[KeyBlock],
    microblocks: dict[int, list[MicroBlock]],
    inflow_proofs: list[InflowProof],
) -> None:
    """Dump one node's retained chain data in acceptance order."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / PARAMS_FILE).write_text(
        json.dumps(params_to_json(params), sort_keys=True, indent=1)
    )
    with open(directory / KEYBLOCK_FILE, "wb") as f:
        for kb in key_blocks:
            f.write(frame(canonical_encode(kb)))
    for channel in sorted(microblocks):
        with open(directory / f"channel_{channel}.log", "wb") as f:
            for mb in microblocks[channel]:
                f.write(frame(canonical_encode(mb)))
    with open(directory / INFLOW_FILE, "wb") as f:
        for proof in inflow_proofs:
            f.write(frame(canonical_encode(proof)))


class StoreReader:
    """Read a store directory back into typed objects."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        if not (self.directory / KEYBLOCK_FILE).exists():
            raise FileNotFoundError(f"no {KEYBLOCK_FILE} in {directory}")

    def params(self) -> ChainParams:
        data = json.loads((self.directory / PARAMS_FILE).read_text())
        return params_from_json(data)

    def channels(self) -> list[int]:
        out = []
        for p in self.directory.iterdir():
            m = _CHANNEL_RE.match(p.name)
            if m:
                out.append(int(m.group(1)))
        return sorted(out)

    def _read_typed(self, path: Path, want: type) -> list:
        if not path.exists():
            return []
        out = []
        data = path.read_bytes()
        for off, payload in iter_frames(data, origin=path.name):
            obj = canonical_decode(payload)
            if not isinstance(obj, want):
                raise CodecError(f"{path.name}: record at offset {off} has the wrong type")
            out.append(obj)
        return out

    def key_blocks(self) -> list[KeyBlock]:
        return self._read_typed(self.directory / KEYBLOCK_FILE, KeyBlock)

    def microblocks(self, channel: int) -> list[MicroBlock]:
        return self._read_typed(self.directory / f"channel_{channel}.log", MicroBlock)

    def inflow_proofs(self) -> list[InflowProof]:
        return self._read_typed(self.directory / INFLOW_FILE, InflowProof)
