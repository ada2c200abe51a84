"""Streaming Pareto filter over asymptotic costs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .queries import EMPTY_CONTEXT, Context, CostOrdering, TaskSet, order, prepare


@dataclass
class Candidate:
    program: object
    cost: TaskSet
    meta: dict = field(default_factory=dict)
    prepared: TaskSet = None

    @property
    def text(self) -> str:
        return str(self.program)


@dataclass
class Frontier:
    members: list = field(default_factory=list)
    discarded: list = field(default_factory=list)
    seconds: float = 0.0

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def to_json(self) -> list:
        return [{"program": c.text, "cost": str(c.cost), "meta": c.meta} for c in self.members]


def build_frontier(universe, ctx: Context = EMPTY_CONTEXT) -> Frontier:
    """Keep every candidate whose cost does not strictly contain a kept one's.

    A newcomer is dropped when some member is strictly cheaper; otherwise it
    joins and evicts every member it is strictly cheaper than.  Members with
    equivalent costs coexist.
    """
    f = Frontier()
    t0 = time.perf_counter()
    seen = set()
    for cand in universe:
        key = (str(cand.cost), cand.text)
        if key in seen:
            continue
        seen.add(key)
        if cand.prepared is None:
            cand.prepared = prepare(cand.cost, ctx)
        verdicts = [order(cand.prepared, m.prepared) for m in f.members]
        if CostOrdering.STRICTLY_CONTAINS in verdicts:
            f.discarded.append(cand)
            continue
        keep = []
        for m, v in zip(f.members, verdicts):
            (f.discarded if v is CostOrdering.STRICTLY_CONTAINED else keep).append(m)
        keep.append(cand)
        f.members = keep
    f.seconds = time.perf_counter() - t0
    return f


@dataclass
class Report:
    universe: int
    frontier: int
    mean_filter_seconds: float

    def to_json(self) -> dict:
        return {"universe": self.universe, "frontier": self.frontier,
                "mean_filter_seconds": self.mean_filter_seconds}


def frontier_stats(f: Frontier, universe_size: int, timings=None) -> Report:
    total = sum(timings) if timings is not None else f.seconds
    mean = total / universe_size if universe_size else 0.0
    return Report(universe_size, len(f.members), mean)
