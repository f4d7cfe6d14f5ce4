from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from sortedcontainers import SortedList

from aioguiprobe.util import quantiles


HEAT_EDGES = (300, 100, 50, 20, 10)
FLAG_SUCCESS_RATE = 0.3


@dataclass
class CoverageSummary:
    targets: int
    covered: int
    events_mean: Optional[float]  # over covered targets only
    events_quantiles: Optional[List[float]]

    @property
    def success_rate(self) -> Optional[float]:
        return self.covered / self.targets if self.targets else None

    @property
    def success_pretty(self) -> str:
        if self.success_rate is None:
            return "N/A"
        return f"{100 * self.success_rate:.1f} %"


def summarize(outcomes: Iterable[Tuple[bool, int]]) -> CoverageSummary:
    """`outcomes` are (covered, events_used) pairs"""
    events = SortedList()
    targets = covered = 0
    for is_covered, events_used in outcomes:
        targets += 1
        if is_covered:
            covered += 1
            events.add(events_used)
    return CoverageSummary(
        targets=targets,
        covered=covered,
        events_mean=sum(events) / len(events) if events else None,
        events_quantiles=quantiles(list(events), (0.25, 0.5, 0.75)),
    )


def union_coverage(trials: Iterable[Tuple[int, bool]]) -> Dict[int, bool]:
    """Per function: covered in at least one repeat"""
    ret: Dict[int, bool] = {}
    for function_id, covered in trials:
        ret[function_id] = ret.get(function_id, False) or covered
    return ret


@dataclass
class HeatBucket:
    label: str
    low: float
    high: Optional[float]
    functions: int
    trials: int
    successes: int

    @property
    def success_rate(self) -> Optional[float]:
        return self.successes / self.trials if self.trials else None

    @property
    def flagged(self) -> bool:
        return self.success_rate is not None and self.success_rate > FLAG_SUCCESS_RATE


def heat_buckets(
    heat: Mapping[int, int],
    trials: Iterable[Tuple[int, bool]],
    scale: float = 1.0,
    edges: Sequence[int] = HEAT_EDGES,
) -> List[HeatBucket]:
    """
    Groups directed-run outcomes by how often the target fired during
    training. Bucket edges are multiplied by `scale` so that small runs get
    meaningful buckets.
    """
    scaled = [edge * scale for edge in edges]
    bounds: List[Tuple[str, float, Optional[float]]] = [(f">= {edges[0]}", scaled[0], None)]
    for (high_edge, high), (low_edge, low) in zip(zip(edges, scaled), zip(edges[1:], scaled[1:])):
        bounds.append((f"{low_edge}-{high_edge}", low, high))
    bounds.append((f"< {edges[-1]}", float("-inf"), scaled[-1]))

    functions: Dict[int, set] = defaultdict(set)
    counts: Dict[int, List[int]] = defaultdict(lambda: [0, 0])
    for function_id, covered in trials:
        count = heat.get(function_id, 0)
        index = next(i for i, (_, low, _) in enumerate(bounds) if count >= low)
        functions[index].add(function_id)
        counts[index][0] += 1
        counts[index][1] += int(covered)

    return [
        HeatBucket(label, low, high, len(functions[i]), counts[i][0], counts[i][1])
        for i, (label, low, high) in enumerate(bounds)
    ]


def heat_is_monotone(buckets: Sequence[HeatBucket]) -> bool:
    """Success rate never increases from the hottest bucket to the coldest (empty buckets skipped)"""
    rates = [b.success_rate for b in buckets if b.success_rate is not None]
    return all(a >= b for a, b in zip(rates, rates[1:]))


def markdown_table(headers: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def bold_best(values: Sequence[Optional[float]], higher_is_better: bool = True, fmt: str = "{:g}") -> List[str]:
    """Formats a row of per-policy values, bolding the winner when there is a unique one"""
    present = [v for v in values if v is not None]
    best = (max if higher_is_better else min)(present) if present else None
    unique = best is not None and present.count(best) == 1 and len(present) > 1
    ret = []
    for v in values:
        cell = "N/A" if v is None else fmt.format(v)
        ret.append(f"**{cell}**" if unique and v == best else cell)
    return ret
