"""Twin-in-the-loop heater control.

A decision backend (live model, scripted policy, or replayed transcript)
proposes binary heater actions; a deterministic validator checks each
proposal against the hysteresis control rule or a digital-twin rollout;
failed proposals are reprompted with corrective feedback up to a bound,
after which a safety action is forced.  The bundled two-node thermal twin
doubles as the simulated plant, either in-process or served over a small
TCP line protocol.
"""

from .agents import (
    AgentSpec,
    TaskSpec,
    Thresholds,
    Verdict,
    compose_feedback,
    expected_action,
    monitor_trigger,
    parse_action,
    render_prompt,
    validate_rule,
    validate_twin,
)
from .backends import (
    BackendConfig,
    DecisionContext,
    Exchange,
    HttpBackend,
    LatencySpec,
    ReplayBackend,
    ScriptedBackend,
    ScriptedPolicy,
    TranscriptRecorder,
    load_replay,
)
from .errors import (
    BackendError,
    ConfigError,
    InvalidInput,
    InvalidState,
    LogFormatError,
    ParseError,
    PlantIoError,
    ReplayExhausted,
    TemplateError,
    TwinloopError,
)
from .metrics import (
    AccuracyMetrics,
    ControlMetrics,
    RunMetrics,
    accuracy_metrics,
    control_metrics,
    report,
    run_metrics,
)
from .orchestrator import (
    AttemptRecord,
    EpisodeRecord,
    MonitorMode,
    RunConfig,
    RunLogWriter,
    ValidatorMode,
    read_run_log,
    run_episode,
    run_loop,
    safety_action,
)
from .plantio import (
    HeaterAction,
    PlantProtocol,
    PlantSample,
    PlantServer,
    TcpPlantClient,
    TwinPlant,
)
from .twin import TwinParams, TwinState, rollout, steady_state, step

__version__ = "0.1.0"
