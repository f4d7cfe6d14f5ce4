from .app_model import (
    EXIT,
    UNREACHABLE,
    ActionSpec,
    AppModel,
    EventKind,
    FunctionTable,
    GuiState,
    Outcome,
    Screen,
    StepResult,
    Transition,
    Widget,
    bfs_depth,
    dump_app_model,
    enumerate_actions,
    initial_state,
    load_app_model,
    load_fixture,
    shortest_trigger_distance,
    state_actions,
    step,
    trigger_witness,
)
from .app_generator import BUNDLED_SYNTHETIC, GeneratorSpec, generate_synthetic_app, resolve_app
