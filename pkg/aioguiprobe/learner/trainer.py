from __future__ import annotations

import asyncio
import csv
import io
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from aioguiprobe.checkpoint import Checkpoint, dumps_checkpoint, save_checkpoint
from aioguiprobe.encoder import EncoderConfig, GuiEncoder
from aioguiprobe.learner.episode import EpisodeSequence, TrainingTuple, relabel
from aioguiprobe.learner.learner_stats import TrainingStatistics
from aioguiprobe.learner.replay import ReplayBuffer
from aioguiprobe.qnet import (
    HIDDEN_SIZES,
    AdamState,
    Batch,
    MlpParams,
    adam_step,
    double_q_values,
    init_params,
    loss_and_grads,
    sync_target,
)
from aioguiprobe.util import BackpressureError, RuntimeFailure, ValidationError, timer


logger = logging.getLogger(__name__)

CHECKPOINT_ATTEMPTS = 3
# seconds to wait on intake while the buffer is below min_fill
IDLE_WAIT = 0.05


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    relabel_count: int = 4
    max_len: int = 64
    batch_size: int = 64
    target_sync_interval: int = 500
    min_fill: int = 1_000
    capacity: int = 200_000
    publish_interval: int = 200
    metrics_interval: int = 50
    intake_capacity: int = 1_024
    lr: float = 1e-3
    hidden: Tuple[int, ...] = HIDDEN_SIZES
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    refresh_interval: int = 100

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValidationError(f"gamma must be in (0, 1), got {self.gamma}")
        for name in (
            "relabel_count", "max_len", "batch_size", "target_sync_interval", "min_fill", "capacity",
            "publish_interval", "metrics_interval", "intake_capacity", "eps_decay_steps", "refresh_interval",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"TrainerConfig.{name} must be positive")
        if self.lr <= 0:
            raise ValidationError("TrainerConfig.lr must be positive")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValidationError("Epsilon schedule needs 0 <= eps_end <= eps_start <= 1")

    def to_dict(self) -> Dict[str, Any]:
        ret = asdict(self)
        ret["hidden"] = list(self.hidden)
        return ret

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> TrainerConfig:
        known = {f.name for f in fields(TrainerConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown trainer options: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(int(h) for h in data["hidden"])
        return TrainerConfig(**data)


@dataclass(frozen=True)
class Snapshot:
    """Immutable published model; readers never see later in-place updates"""

    version: int
    params: MlpParams
    encoder_cfg: EncoderConfig


class ModelStorage:
    """Latest published model, kept in memory and optionally mirrored to a checkpoint file"""

    def __init__(self, encoder_cfg: EncoderConfig, path: Optional[Path] = None, meta: Optional[Dict[str, Any]] = None):
        self.encoder_cfg = encoder_cfg
        self.path = path
        self.meta = dict(meta or {})
        self.version = 0
        self._latest: Optional[Snapshot] = None
        self._blob: Optional[bytes] = None
        self.writer: Callable[[Path, Checkpoint], None] = lambda path, ckpt: save_checkpoint(
            ckpt.pred, ckpt.target, ckpt.adam, ckpt.encoder_cfg, ckpt.meta, path
        )

    @staticmethod
    def from_checkpoint(checkpoint: Checkpoint) -> ModelStorage:
        storage = ModelStorage(checkpoint.encoder_cfg, meta=checkpoint.meta)
        storage.version = checkpoint.model_version
        storage._latest = Snapshot(storage.version, checkpoint.pred.copy(), checkpoint.encoder_cfg)
        storage._blob = dumps_checkpoint(checkpoint)
        return storage

    def initialize(self, params: MlpParams) -> None:
        """Serves `params` as version 0 until the first publish"""
        if self._latest is None:
            self._latest = Snapshot(self.version, params.copy(), self.encoder_cfg)

    def latest(self) -> Optional[Snapshot]:
        return self._latest

    def blob(self) -> Optional[bytes]:
        return self._blob

    def publish(self, pred: MlpParams, target: MlpParams, adam: Optional[AdamState], meta: Dict[str, Any]) -> int:
        version = self.version + 1
        meta = {**self.meta, **meta, "model_version": version}
        checkpoint = Checkpoint(pred.copy(), target.copy(), self.encoder_cfg, adam, meta)
        if self.path is not None:
            for attempt in range(1, CHECKPOINT_ATTEMPTS + 1):
                try:
                    self.writer(self.path, checkpoint)
                    break
                except OSError as e:
                    logger.warning(
                        "Checkpoint write to %s failed (attempt %d/%d): %s", self.path, attempt, CHECKPOINT_ATTEMPTS, e
                    )
                    if attempt == CHECKPOINT_ATTEMPTS:
                        raise RuntimeFailure(f"Could not write checkpoint {self.path}: {e}")
        self.version = version
        self._latest = Snapshot(version, checkpoint.pred, self.encoder_cfg)
        self._blob = dumps_checkpoint(checkpoint)
        logger.debug("Published model version %d", version)
        return version


class MetricsLog:
    """Training metrics as CSV rows (step, loss, buffer_size, model_version)"""

    HEADER = ("step", "loss", "buffer_size", "model_version")

    def __init__(self, path: Optional[Path] = None) -> None:
        self.path = path
        self.rows: List[Tuple[int, float, int, int]] = []

    def append(self, step: int, loss: float, buffer_size: int, model_version: int) -> None:
        self.rows.append((step, loss, buffer_size, model_version))

    def dumps(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.HEADER)
        for step, loss, buffer_size, model_version in self.rows:
            writer.writerow((step, repr(loss), buffer_size, model_version))
        return out.getvalue()

    def flush(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.dumps(), encoding="utf-8")


class Trainer:
    """Single consumer of submitted sequences; owns the replay buffer and both networks"""

    def __init__(
        self,
        cfg: TrainerConfig,
        encoder: GuiEncoder,
        storage: ModelStorage,
        seed: int = 0,
        params: Optional[MlpParams] = None,
        metrics: Optional[MetricsLog] = None,
    ) -> None:
        self.cfg = cfg
        self.encoder = encoder
        self.storage = storage
        self.metrics = metrics or MetricsLog()
        self.rng = np.random.default_rng(seed)
        self.pred = params.copy() if params is not None else init_params(encoder.input_dim, seed, cfg.hidden)
        self.target = sync_target(self.pred)
        self.adam = AdamState.for_params(self.pred, cfg.lr)
        storage.initialize(self.pred)
        self.buffer: ReplayBuffer[TrainingTuple] = ReplayBuffer(cfg.capacity, cfg.min_fill)
        self.intake: asyncio.Queue[EpisodeSequence] = asyncio.Queue(cfg.intake_capacity)
        self.steps = 0
        self.target_syncs = 0
        self.last_loss: Optional[float] = None
        self.stats = TrainingStatistics()
        self.received: List[str] = []
        self.tuples_received = 0
        self.idle_waits = 0

    @property
    def heat(self) -> Dict[int, int]:
        return self.stats.heat

    def submit(self, seq: EpisodeSequence) -> None:
        try:
            self.intake.put_nowait(seq)
        except asyncio.QueueFull:
            raise BackpressureError(f"Trainer intake is full ({self.cfg.intake_capacity} sequences)")

    def ingest(self, seq: EpisodeSequence) -> int:
        tuples = relabel(seq, self.cfg, self.rng)
        self.buffer.push(tuples)
        for step in seq.steps:
            self.stats.update_heat(step.covered)
        self.received.append(seq.sequence_id)
        self.tuples_received += len(tuples)
        return len(tuples)

    async def wait_for_data(self, timeout: float = IDLE_WAIT) -> bool:
        """Ingests the next submitted sequence, or returns False after `timeout` seconds without one"""
        self.idle_waits += 1
        try:
            seq = await asyncio.wait_for(self.intake.get(), timeout)
        except asyncio.TimeoutError:
            return False
        self.ingest(seq)
        return True

    def drain(self) -> int:
        n = 0
        while not self.intake.empty():
            self.ingest(self.intake.get_nowait())
            n += 1
        return n

    def make_batch(self, tuples: List[TrainingTuple]) -> Batch:
        inputs = np.stack([self.encoder.input_vector(t.state, t.action, t.goal) for t in tuples])
        targets = np.array([t.reward for t in tuples], dtype=np.float64)
        pending = [i for i, t in enumerate(tuples) if not t.done]
        if pending:
            rows = [
                self.encoder.candidate_matrix(tuples[i].next_state, tuples[i].next_candidates, tuples[i].goal)
                for i in pending
            ]
            values = double_q_values(np.concatenate(rows), [len(r) for r in rows], self.pred, self.target)
            targets[pending] += self.cfg.gamma * values
        return Batch(inputs, targets)

    def train_step(self) -> Optional[float]:
        if not self.buffer.ready:
            return None
        batch = self.make_batch(self.buffer.sample(self.cfg.batch_size, self.rng))
        loss, grads = loss_and_grads(self.pred, batch)
        self.pred = adam_step(self.pred, self.adam, grads)
        self.steps += 1
        self.last_loss = loss
        self.stats.update_loss(loss)

        if self.steps % self.cfg.target_sync_interval == 0:
            self.target = sync_target(self.pred, self.target)
            self.target_syncs += 1
            logger.info("Target network synchronized at step %d", self.steps)
        if self.steps % self.cfg.publish_interval == 0:
            self.publish()
        if self.steps % self.cfg.metrics_interval == 0:
            self.metrics.append(self.steps, loss, len(self.buffer), self.storage.version)
        return loss

    def publish(self) -> int:
        return self.storage.publish(self.pred, self.target, self.adam, {"trainer_step": self.steps})

    def finish(self) -> None:
        """Publishes the final parameters unless nothing was trained"""
        self.drain()
        if self.steps > 0 and self.steps % self.cfg.publish_interval != 0:
            self.publish()
        self.metrics.flush()

    async def run(
        self,
        stop: Optional[asyncio.Event] = None,
        max_steps: Optional[int] = None,
        deadline: Optional[float] = None,
    ) -> int:
        """Drains intake and trains until `stop`, `max_steps` or the `deadline` (a util.timer() value)"""
        while stop is None or not stop.is_set():
            self.drain()
            if max_steps is not None and self.steps >= max_steps:
                break
            if deadline is not None and timer() >= deadline:
                break
            if not self.buffer.ready:
                await self.wait_for_data()
                continue
            self.train_step()
            await asyncio.sleep(0)
        self.drain()
        return self.steps


async def trainer_loop(trainer: Trainer, stop: asyncio.Event, max_steps: Optional[int] = None) -> int:
    steps = await trainer.run(stop, max_steps)
    trainer.finish()
    return steps
