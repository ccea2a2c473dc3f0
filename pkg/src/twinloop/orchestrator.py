"""The control loop: sample the plant, let the backend propose an action,
validate it, and either apply it, reprompt with corrective feedback, or fall
back to the safety action once the attempt budget is exhausted.

Clock semantics are the heart of this module.  While a decision is being
made the previously applied action stays in force and the clock advances by
that attempt's inference latency -- in lockstep mode the twin is integrated
forward by exactly that much, in realtime mode wall time simply passes.  Slow
models therefore hold stale actions longer, and that shows up in the control
metrics.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import twin
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
    DEFAULT_OPERATOR,
    DEFAULT_TASK,
)
from .backends import DecisionContext
from .errors import (
    BackendError,
    InvalidInput,
    InvalidState,
    LogFormatError,
    ParseError,
)
from .jsonio import dumps_record, loads_record
from .plantio import HeaterAction, LOCKSTEP, REALTIME, CLOCK_MODES

RULE = "rule"
TWIN = "twin"

EXPECTED_RULE = "expected_rule"
FORCE_OFF = "force_off"

LOG_FORMAT = "twinloop-run-log/1"

# Idle poll period when the anomaly monitor declines a sample and no explicit
# sample_period_floor is set; without it a lockstep clock would never move.
DEFAULT_IDLE_POLL = 1.0
# Minimum advance after an episode that consumed no simulated time, so the
# loop always terminates even with a zero-latency backend.
MIN_IDLE_TICK = 1e-3


@dataclass(frozen=True)
class ValidatorMode:
    kind: str = RULE
    horizon: float = 300.0
    envelope: tuple[float, float] = (-math.inf, math.inf)

    def validate(self) -> "ValidatorMode":
        if self.kind not in (RULE, TWIN):
            raise InvalidInput(f"unknown validator mode {self.kind!r}")
        if self.kind == TWIN:
            if self.horizon <= 0.0:
                raise InvalidInput("twin validation horizon must be > 0")
            if not self.envelope[0] < self.envelope[1]:
                raise InvalidInput(f"envelope must be well ordered, got {self.envelope!r}")
        return self


@dataclass(frozen=True)
class MonitorMode:
    kind: str = "continuous"
    margin: float = 0.0

    def validate(self) -> "MonitorMode":
        if self.kind not in ("continuous", "anomaly"):
            raise InvalidInput(f"unknown monitor mode {self.kind!r}")
        if self.margin < 0.0:
            raise InvalidInput("monitor margin must be >= 0")
        return self


@dataclass(frozen=True)
class RunConfig:
    duration: float = 2400.0
    max_reprompts: int = 3
    sample_period_floor: float = 0.0
    thresholds: Thresholds = field(default_factory=Thresholds)
    validator: ValidatorMode = field(default_factory=ValidatorMode)
    monitor: MonitorMode = field(default_factory=MonitorMode)
    clock_mode: str = LOCKSTEP
    initial_action: HeaterAction = HeaterAction.OFF
    safe_action_policy: str = EXPECTED_RULE

    def validate(self) -> "RunConfig":
        if self.duration <= 0.0 or not math.isfinite(self.duration):
            raise InvalidInput("duration must be > 0")
        if self.max_reprompts < 0:
            raise InvalidInput("max_reprompts must be >= 0")
        if self.sample_period_floor < 0.0:
            raise InvalidInput("sample_period_floor must be >= 0")
        if self.clock_mode not in CLOCK_MODES:
            raise InvalidInput(f"unknown clock mode {self.clock_mode!r}")
        if self.safe_action_policy not in (EXPECTED_RULE, FORCE_OFF):
            raise InvalidInput(f"unknown safety policy {self.safe_action_policy!r}")
        self.validator.validate()
        self.monitor.validate()
        return self


@dataclass(frozen=True)
class AttemptRecord:
    """One backend invocation inside an episode.

    ``error`` is None for a validated attempt, "parse_error" when no ACTION
    line was found, and "backend_error" when the backend call itself failed.
    """

    attempt_index: int
    raw_response: str | None
    parsed: HeaterAction | None
    passed: bool
    expected: HeaterAction | None
    reason: str
    error: str | None
    latency: float


@dataclass(frozen=True)
class EpisodeRecord:
    """One full decision cycle, from sensor sample to applied action."""

    index: int
    t_start: float
    t_sensor: float
    prev_action: HeaterAction
    attempts: tuple[AttemptRecord, ...]
    applied: HeaterAction
    override: bool
    t_end: float


def safety_action(
    policy: str, t: float, prev: HeaterAction, th: Thresholds
) -> HeaterAction:
    """Action forced on the plant when every attempt failed validation."""
    if policy == EXPECTED_RULE:
        return expected_action(t, prev, th)
    if policy == FORCE_OFF:
        return HeaterAction.OFF
    raise InvalidInput(f"unknown safety policy {policy!r}")


def _advance_clock(plant, dt: float, clock_mode: str) -> None:
    if dt <= 0.0:
        return
    if clock_mode == LOCKSTEP:
        plant.advance(dt)
    else:
        time.sleep(dt)


def _twin_snapshot(plant, t_sensor: float, clock: float) -> twin.TwinState:
    state = getattr(plant, "state", None)
    if isinstance(state, twin.TwinState):
        return state
    # Remote plants expose only the sensor reading; assume the nodes are in
    # equilibrium with each other at that temperature.
    return twin.TwinState(t_sensor, t_sensor, clock)


def _validate_proposal(
    proposal: HeaterAction,
    sample_t: float,
    prev: HeaterAction,
    config: RunConfig,
    plant,
    twin_params: twin.TwinParams | None,
    clock: float,
) -> Verdict:
    if config.validator.kind == RULE:
        return validate_rule(proposal, sample_t, prev, config.thresholds)
    if twin_params is None:
        raise InvalidState("twin validator mode requires twin parameters")
    state = _twin_snapshot(plant, sample_t, clock)
    return validate_twin(
        twin_params, state, proposal, config.validator.horizon, config.validator.envelope
    )


def run_episode(
    plant,
    backend,
    config: RunConfig,
    prev: HeaterAction,
    index: int,
    operator: AgentSpec = DEFAULT_OPERATOR,
    task: TaskSpec = DEFAULT_TASK,
    twin_params: twin.TwinParams | None = None,
) -> EpisodeRecord:
    """Run one decision cycle and apply its outcome to the plant.

    The temperature is sampled once, at t_start, and drives every attempt of
    the episode.  Parse failures and backend errors consume an attempt just
    like a failed validation.  If no attempt passes within
    ``max_reprompts + 1``, the safety action is applied and the episode is
    marked as overridden.
    """
    th = config.thresholds
    sample = plant.read_temperature()
    t_start = sample.timestamp
    attempts: list[AttemptRecord] = []
    feedback: str | None = None
    applied: HeaterAction | None = None

    for attempt_index in range(config.max_reprompts + 1):
        system_text, user_text = render_prompt(operator, task, sample, prev, th, feedback)
        ctx = DecisionContext(
            t_sensor=sample.t_sensor,
            prev_action=prev,
            thresholds=th,
            has_feedback=feedback is not None,
            timestamp=plant.clock,
        )
        try:
            exchange = backend.complete(system_text, user_text, ctx)
        except BackendError as exc:
            latency = exc.elapsed if config.clock_mode == REALTIME else 0.0
            attempts.append(
                AttemptRecord(
                    attempt_index, None, None, False, None,
                    f"backend error: {exc}", "backend_error", latency,
                )
            )
            if attempt_index < config.max_reprompts:
                feedback = compose_feedback(
                    None, attempt_index + 1, config.max_reprompts,
                    sample.t_sensor, prev, None, th,
                )
            continue

        # The previous action stays in force while "inference" runs.
        if config.clock_mode == LOCKSTEP:
            _advance_clock(plant, exchange.latency, LOCKSTEP)

        try:
            proposal = parse_action(exchange.response_text)
        except ParseError:
            attempts.append(
                AttemptRecord(
                    attempt_index, exchange.response_text, None, False, None,
                    "no ACTION line found", "parse_error", exchange.latency,
                )
            )
            if attempt_index < config.max_reprompts:
                feedback = compose_feedback(
                    None, attempt_index + 1, config.max_reprompts,
                    sample.t_sensor, prev, None, th,
                )
            continue

        verdict = _validate_proposal(
            proposal, sample.t_sensor, prev, config, plant, twin_params, plant.clock
        )
        attempts.append(
            AttemptRecord(
                attempt_index, exchange.response_text, proposal,
                verdict.passed, verdict.expected, verdict.reason, None, exchange.latency,
            )
        )
        if verdict.passed:
            applied = proposal
            break
        if attempt_index < config.max_reprompts:
            feedback = compose_feedback(
                verdict, attempt_index + 1, config.max_reprompts,
                sample.t_sensor, prev, proposal, th,
            )

    override = applied is None
    if override:
        applied = safety_action(config.safe_action_policy, sample.t_sensor, prev, th)
    plant.apply_heater(applied)
    return EpisodeRecord(
        index=index,
        t_start=t_start,
        t_sensor=sample.t_sensor,
        prev_action=prev,
        attempts=tuple(attempts),
        applied=applied,
        override=override,
        t_end=plant.clock,
    )


def run_loop(
    plant,
    backend,
    config: RunConfig,
    operator: AgentSpec = DEFAULT_OPERATOR,
    task: TaskSpec = DEFAULT_TASK,
    twin_params: twin.TwinParams | None = None,
    on_episode=None,
) -> list[EpisodeRecord]:
    """Drive decision episodes until the clock reaches ``config.duration``.

    The first sample always produces an episode (the cold-start decision);
    after that the monitor gate decides.  ``on_episode`` is called with each
    completed record before the loop moves on, so an incremental log stays
    valid even if the run aborts.
    """
    config.validate()
    if config.validator.kind == TWIN and twin_params is None:
        twin_params = getattr(plant, "params", None)
        if twin_params is None:
            raise InvalidState("twin validator mode requires twin parameters")

    plant.apply_heater(config.initial_action)
    prev = config.initial_action
    episodes: list[EpisodeRecord] = []

    while plant.clock < config.duration:
        # the cold-start episode always runs; afterwards the anomaly monitor
        # (when configured) gates on a fresh reading
        if episodes and config.monitor.kind == "anomaly":
            sample = plant.read_temperature()
            if not monitor_trigger(
                sample, config.monitor.kind, config.thresholds, config.monitor.margin
            ):
                poll = config.sample_period_floor if config.sample_period_floor > 0 else DEFAULT_IDLE_POLL
                _advance_clock(plant, poll, config.clock_mode)
                continue
        record = run_episode(
            plant, backend, config, prev, len(episodes), operator, task, twin_params
        )
        episodes.append(record)
        if on_episode is not None:
            on_episode(record)
        prev = record.applied

        floor_target = record.t_start + config.sample_period_floor
        if floor_target > plant.clock:
            _advance_clock(plant, floor_target - plant.clock, config.clock_mode)
        elif plant.clock <= record.t_start:
            _advance_clock(plant, MIN_IDLE_TICK, config.clock_mode)
    return episodes


# --- run log serialization ---------------------------------------------------


def _envelope_to_doc(envelope: tuple[float, float]) -> list:
    lo, hi = envelope
    return [None if math.isinf(lo) else lo, None if math.isinf(hi) else hi]


def _envelope_from_doc(doc) -> tuple[float, float]:
    lo, hi = doc
    return (-math.inf if lo is None else float(lo), math.inf if hi is None else float(hi))


def run_config_to_doc(config: RunConfig) -> dict:
    return {
        "duration": float(config.duration),
        "max_reprompts": config.max_reprompts,
        "sample_period_floor": float(config.sample_period_floor),
        "thresholds": {"low": float(config.thresholds.low), "high": float(config.thresholds.high)},
        "validator": {
            "kind": config.validator.kind,
            "horizon": float(config.validator.horizon),
            "envelope": _envelope_to_doc(config.validator.envelope),
        },
        "monitor": {"kind": config.monitor.kind, "margin": float(config.monitor.margin)},
        "clock_mode": config.clock_mode,
        "initial_action": config.initial_action.value,
        "safe_action_policy": config.safe_action_policy,
    }


def run_config_from_doc(doc: dict) -> RunConfig:
    return RunConfig(
        duration=float(doc["duration"]),
        max_reprompts=int(doc["max_reprompts"]),
        sample_period_floor=float(doc["sample_period_floor"]),
        thresholds=Thresholds(float(doc["thresholds"]["low"]), float(doc["thresholds"]["high"])),
        validator=ValidatorMode(
            kind=doc["validator"]["kind"],
            horizon=float(doc["validator"]["horizon"]),
            envelope=_envelope_from_doc(doc["validator"]["envelope"]),
        ),
        monitor=MonitorMode(kind=doc["monitor"]["kind"], margin=float(doc["monitor"]["margin"])),
        clock_mode=doc["clock_mode"],
        initial_action=HeaterAction(doc["initial_action"]),
        safe_action_policy=doc["safe_action_policy"],
    ).validate()


def config_digest(config: RunConfig) -> str:
    payload = dumps_record(run_config_to_doc(config)).encode("utf-8")
    return "sha256:" + hashlib.sha256(payload).hexdigest()


def attempt_to_doc(attempt: AttemptRecord) -> dict:
    return {
        "attempt_index": attempt.attempt_index,
        "raw_response": attempt.raw_response,
        "parsed": attempt.parsed.value if attempt.parsed else None,
        "passed": attempt.passed,
        "expected": attempt.expected.value if attempt.expected else None,
        "reason": attempt.reason,
        "error": attempt.error,
        "latency": float(attempt.latency),
    }


def attempt_from_doc(doc: dict) -> AttemptRecord:
    return AttemptRecord(
        attempt_index=int(doc["attempt_index"]),
        raw_response=doc["raw_response"],
        parsed=HeaterAction(doc["parsed"]) if doc["parsed"] else None,
        passed=bool(doc["passed"]),
        expected=HeaterAction(doc["expected"]) if doc["expected"] else None,
        reason=doc["reason"],
        error=doc["error"],
        latency=float(doc["latency"]),
    )


def episode_to_doc(record: EpisodeRecord) -> dict:
    return {
        "kind": "episode",
        "index": record.index,
        "t_start": float(record.t_start),
        "t_sensor": float(record.t_sensor),
        "prev_action": record.prev_action.value,
        "attempts": [attempt_to_doc(a) for a in record.attempts],
        "applied": record.applied.value,
        "override": record.override,
        "t_end": float(record.t_end),
    }


def episode_from_doc(doc: dict) -> EpisodeRecord:
    return EpisodeRecord(
        index=int(doc["index"]),
        t_start=float(doc["t_start"]),
        t_sensor=float(doc["t_sensor"]),
        prev_action=HeaterAction(doc["prev_action"]),
        attempts=tuple(attempt_from_doc(a) for a in doc["attempts"]),
        applied=HeaterAction(doc["applied"]),
        override=bool(doc["override"]),
        t_end=float(doc["t_end"]),
    )


class RunLogWriter:
    """Streams a run to disk: header first, then one episode line per
    completed episode, flushed immediately so partial runs stay readable."""

    def __init__(self, path: str | Path, config: RunConfig):
        self._fh = open(path, "w", encoding="utf-8")
        header = {
            "kind": "header",
            "format": LOG_FORMAT,
            "config": run_config_to_doc(config),
            "config_digest": config_digest(config),
        }
        self._fh.write(dumps_record(header) + "\n")
        self._fh.flush()

    def write_episode(self, record: EpisodeRecord) -> None:
        self._fh.write(dumps_record(episode_to_doc(record)) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_run_log(path: str | Path) -> tuple[RunConfig, list[EpisodeRecord]]:
    """Parse a run log back into its config and episode records."""
    config: RunConfig | None = None
    episodes: list[EpisodeRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = loads_record(line)
            except ValueError as exc:
                raise LogFormatError(f"bad log line: {exc}", line_number=lineno) from exc
            kind = doc.get("kind")
            if config is None:
                if kind != "header":
                    raise LogFormatError("first log record must be the header", line_number=lineno)
                try:
                    config = run_config_from_doc(doc["config"])
                except (KeyError, TypeError, ValueError, InvalidInput) as exc:
                    raise LogFormatError(f"bad header config: {exc}", line_number=lineno) from exc
                continue
            if kind != "episode":
                raise LogFormatError(f"unexpected record kind {kind!r}", line_number=lineno)
            try:
                episodes.append(episode_from_doc(doc))
            except (KeyError, TypeError, ValueError) as exc:
                raise LogFormatError(f"bad episode record: {exc}", line_number=lineno) from exc
    if config is None:
        raise LogFormatError("log is empty", line_number=0)
    return config, episodes
