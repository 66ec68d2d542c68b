"""Ground truth: every monitored data packet is tallied per (flow, block)
when it is stamped at ingress, delivered at egress, or dropped anywhere."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from ..errors import EpochNotQuiesced
from ..packet import SidList


@dataclass
class BlockTally:
    sent: int = 0
    delivered: int = 0
    drops: int = 0

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.drops


class DropOracle:
    def __init__(self):
        self.blocks: dict[tuple[SidList, int], BlockTally] = defaultdict(BlockTally)
        self.drop_reasons: dict[str, int] = defaultdict(int)

    def on_sent(self, stamp) -> None:
        self.blocks[stamp].sent += 1

    def on_delivered(self, stamp) -> None:
        self.blocks[stamp].delivered += 1

    def on_drop(self, stamp, reason: str) -> None:
        self.blocks[stamp].drops += 1
        self.drop_reasons[reason] += 1

    def tally(self, sids: SidList, epoch: int) -> BlockTally:
        return self.blocks.get((sids, epoch), BlockTally())

    def block_drops(self, sids: SidList, epoch: int) -> int:
        t = self.tally(sids, epoch)
        if t.in_flight:
            raise EpochNotQuiesced(f"{t.in_flight} packets of block {epoch} on {sids} in flight")
        return t.drops

    def flows(self) -> list[SidList]:
        return sorted({sids for sids, _ in self.blocks}, key=str)

    def epochs(self, sids: SidList) -> list[int]:
        return sorted(e for s, e in self.blocks if s == sids)

    def total_drops(self, sids: SidList) -> int:
        return sum(t.drops for (s, _), t in self.blocks.items() if s == sids)

    def quiescent(self) -> bool:
        return all(t.in_flight == 0 for t in self.blocks.values())


def oracle_block_drops(oracle: DropOracle, sids, epoch: int) -> int:
    return oracle.block_drops(SidList(sids) if not isinstance(sids, SidList) else sids, epoch)
