from __future__ import annotations

import asyncio
from typing import Iterable, Optional

from rich.progress import BarColumn, Progress, SpinnerColumn, Task, TaskID, TextColumn, TimeElapsedColumn

from aioguiprobe.learner.trainer import Trainer


class TrainingProgressBar(Progress):
    def __init__(self, disable: bool = False) -> None:
        super().__init__(
            TimeElapsedColumn(),
            TextColumn(" "),
            SpinnerColumn(spinner_name="dots"),
            TextColumn(" "),
            TextColumn("[progress.description]{task.description}"),
            TextColumn(" loss: [bold]{task.fields[loss]}[/]"),
            TextColumn(" buffer: {task.fields[buffer]}"),
            TextColumn(" model: v{task.fields[version]}"),
            TextColumn(" "),
            BarColumn(),
            disable=disable,
        )

    def make_tasks_table(self, tasks: Iterable[Task]):  # type: ignore[no-untyped-def]
        ret = super().make_tasks_table(tasks)
        ret.padding = (0, 0)
        return ret

    async def follow(self, trainer: Trainer, total: Optional[int], period: float = 0.25) -> None:
        """Mirrors the trainer's counters until cancelled"""
        taskid = self.add_task("Training", total=total, loss="N/A", buffer=0, version=0)
        try:
            while True:
                self._refresh_task(taskid, trainer)
                await asyncio.sleep(period)
        finally:
            self._refresh_task(taskid, trainer)

    def _refresh_task(self, taskid: TaskID, trainer: Trainer) -> None:
        self.update(
            taskid,
            completed=trainer.steps,
            loss=trainer.stats.summary().loss_pretty,
            buffer=len(trainer.buffer),
            version=trainer.storage.version,
        )


class EvaluationProgressBar(Progress):
    def __init__(self, disable: bool = False) -> None:
        super().__init__(
            TimeElapsedColumn(),
            TextColumn(" "),
            TextColumn("[progress.description]{task.description}"),
            TextColumn(" covered: [bold]{task.fields[covered]}[/]"),
            TextColumn(" "),
            BarColumn(),
            TextColumn(" {task.completed}/{task.total}"),
            disable=disable,
        )

    def start_run(self, description: str, total: int) -> TaskID:
        return self.add_task(description, total=total, covered=0)
