from .episode import (
    REWARD_LATER_BASE,
    REWARD_NO_CHANGE,
    REWARD_OTHER,
    REWARD_TRIGGER,
    EpisodeSequence,
    EpisodeStep,
    RecordResult,
    TrainingTuple,
    compute_reward,
    future_coverage,
    record_step,
    relabel,
)
from .learner_stats import TrainingStatistics
from .replay import ReplayBuffer, buffer_push, buffer_sample
from .trainer import MetricsLog, ModelStorage, Snapshot, Trainer, TrainerConfig, trainer_loop
