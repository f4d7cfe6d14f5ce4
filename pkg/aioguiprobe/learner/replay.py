from __future__ import annotations

from typing import Generic, Iterable, List, Optional, TypeVar

import numpy as np

from aioguiprobe.util import ValidationError


T = TypeVar("T")


class ReplayBuffer(Generic[T]):
    """Fixed-capacity ring buffer with FIFO eviction and uniform sampling"""

    def __init__(self, capacity: int = 200_000, min_fill: int = 1) -> None:
        if capacity < 1:
            raise ValidationError("Replay buffer capacity must be positive")
        self.capacity = capacity
        self.min_fill = min_fill
        self._items: List[Optional[T]] = []
        self._head = 0  # index of the oldest item once the buffer is full
        self.pushed = 0
        self.evicted = 0

    def __len__(self) -> int:
        return len(self._items)

    @property
    def ready(self) -> bool:
        return len(self) >= max(self.min_fill, 1)

    def push(self, items: Iterable[T]) -> None:
        for item in items:
            self.pushed += 1
            if len(self._items) < self.capacity:
                self._items.append(item)
            else:
                self._items[self._head] = item
                self._head = (self._head + 1) % self.capacity
                self.evicted += 1

    def oldest(self) -> T:
        item = self._items[self._head if len(self._items) == self.capacity else 0]
        assert item is not None
        return item

    def items(self) -> List[T]:
        """Items from oldest to newest"""
        ordered = self._items[self._head :] + self._items[: self._head]
        return [item for item in ordered if item is not None]

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[T]:
        if not self.ready:
            raise ValidationError(f"Cannot sample: buffer holds {len(self)} of the required {self.min_fill} items")
        if batch_size < 1:
            raise ValidationError("batch_size must be positive")
        indices = rng.integers(len(self._items), size=batch_size)
        return [self._items[int(i)] for i in indices]  # type: ignore[misc]


def buffer_push(buffer: ReplayBuffer[T], tuples: Iterable[T]) -> None:
    buffer.push(tuples)


def buffer_sample(buffer: ReplayBuffer[T], batch_size: int, rng: np.random.Generator) -> List[T]:
    return buffer.sample(batch_size, rng)
