from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Tuple

from sortedcontainers import SortedList

from aioguiprobe.util import quantiles


class TrainingStatistics:
    """Windowed loss statistics and per-function heat of a training run"""

    QUANTILES = (0.1, 0.5, 0.9)

    def __init__(self, window: int = 200) -> None:
        self.window = window
        self._recent: Deque[float] = deque()
        self._sorted = SortedList()
        self.heat: Dict[int, int] = {}
        self.steps = 0

    @dataclass
    class Summary:
        steps: int
        loss_mean: Optional[float]
        loss_quantiles: Optional[List[float]]
        hottest: List[Tuple[int, int]]

        @property
        def loss_pretty(self) -> str:
            if self.loss_mean is None:
                return "N/A"
            return f"{self.loss_mean:.3g}"

    def update_loss(self, loss: float) -> None:
        self.steps += 1
        self._recent.append(loss)
        self._sorted.add(loss)
        while len(self._recent) > self.window:
            self._sorted.remove(self._recent.popleft())

    def update_heat(self, covered: Iterable[int]) -> None:
        for function_id in covered:
            self.heat[function_id] = self.heat.get(function_id, 0) + 1

    def merge_heat(self, heat: Mapping[int, int]) -> None:
        for function_id, count in heat.items():
            self.heat[function_id] = self.heat.get(function_id, 0) + count

    def summary(self, top: int = 5) -> TrainingStatistics.Summary:
        losses = list(self._sorted)
        hottest = sorted(self.heat.items(), key=lambda item: (-item[1], item[0]))[:top]
        return TrainingStatistics.Summary(
            steps=self.steps,
            loss_mean=sum(losses) / len(losses) if losses else None,
            loss_quantiles=quantiles(losses, self.QUANTILES),
            hottest=hottest,
        )
