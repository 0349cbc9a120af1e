"""Run metrics: line-delimited JSON records.

One record per observation, keys sorted, so a (scenario, seed) pair always
produces byte-identical files.  Record kinds:

  key_block     height, hash, miner, time, on_chain
  storage       node, height, bytes, time
  state_digest  node, channel, height, digest
  tx            tx (hash), channel, submit_time, submit_height, status,
                confirm_height, confirm_time, conflict_group
  reorg         node, time, depth
  convergence   partition, heal_time, converged_time, key_blocks_after_heal
  governance    event, height, proposal, channels
  fraud         leader, epoch_height, report_height, revoked, credit
  reward        miner, channel, amount
  audit         node, ok
  safety        double_spends, conservation_ok, supply, minted, burned
  run_summary   final_height, final_tip, nodes, orphans, reorgs
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Metrics:
    rows: list[dict] = field(default_factory=list)

    def add(self, kind: str, **fields) -> None:
        row = {"kind": kind}
        row.update(fields)
        self.rows.append(row)

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.rows if r["kind"] == kind]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson())

    @classmethod
    def read(cls, path: str | Path) -> "Metrics":
        rows = []
        text = Path(path).read_text()
        for line in text.splitlines():
            line = line.strip()
            if line:
                rows.append(json.loads(line))
        return cls(rows=rows)
