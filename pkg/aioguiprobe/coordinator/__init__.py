from .protocol import (
    LENGTH,
    MAX_FRAME_SIZE,
    ErrorCode,
    MessageType,
    decode_payload,
    encode_frame,
    read_frame,
    write_frame,
)
from .session import (
    ActionCounter,
    DeviceSession,
    DirectedReport,
    DirectedRunConfig,
    EpsilonSchedule,
    Policy,
    TargetResult,
    assign_goals,
    check_compatible,
    directed_session,
    explore_devices,
    guided_explore,
    select_action,
    training_session,
)
from .worker import (
    DEFAULT_URL,
    LocalWorkerClient,
    QResult,
    RemoteWorkerClient,
    Worker,
    WorkerClient,
    WorkerServer,
    retrying,
)
