"""Run-log metrics: decision accuracy counters and band-keeping control
performance, plus report rendering in table, csv and machine formats.

Control figures use a zero-order hold: each episode's sampled temperature is
taken to govern the plant until the next episode's sample, which is exactly
how the held heater action and the stale sensor reading behave between
decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .agents import Thresholds
from .errors import LogFormatError
from .jsonio import dumps_record, loads_record, round_half_away
from .orchestrator import EpisodeRecord

TABLE = "table"
CSV = "csv"
MACHINE = "machine"

CSV_COLUMNS = (
    "samples",
    "passes",
    "fails",
    "pass_after_reprompts",
    "overrides",
    "accuracy_first_pass_pct",
    "accuracy_with_reprompts_pct",
    "avg_deviation_c",
    "time_above_s",
    "time_below_s",
    "time_outside_s",
    "midpoint_c",
)


@dataclass(frozen=True)
class AccuracyMetrics:
    """Decision accuracy counters; percentages are pre-rounded to 2 decimals
    (ties away from zero)."""

    samples: int
    passes: int
    fails: int
    pass_after_reprompts: int
    overrides: int
    accuracy_first_pass: float
    accuracy_with_reprompts: float


@dataclass(frozen=True)
class ControlMetrics:
    """Band-keeping figures: seconds spent outside the band and the
    time-weighted mean deviation from its midpoint."""

    avg_deviation: float
    time_above: float
    time_below: float
    time_outside: float
    midpoint: float


@dataclass(frozen=True)
class RunMetrics:
    accuracy: AccuracyMetrics
    control: ControlMetrics


def accuracy_metrics(episodes: list[EpisodeRecord]) -> AccuracyMetrics:
    """Accuracy counters over a run log.

    A pass is an episode whose first attempt validated; a reprompt rescue is
    a pass at any later attempt; everything else ended in an override.
    """
    if not episodes:
        raise LogFormatError("cannot compute accuracy over an empty log")
    samples = len(episodes)
    passes = 0
    pass_after_reprompts = 0
    overrides = 0
    for episode in episodes:
        if not episode.attempts:
            raise LogFormatError(f"episode {episode.index} has no attempts")
        if episode.attempts[0].passed:
            passes += 1
        elif any(a.passed for a in episode.attempts[1:]):
            pass_after_reprompts += 1
        else:
            overrides += 1
    fails = samples - passes
    return AccuracyMetrics(
        samples=samples,
        passes=passes,
        fails=fails,
        pass_after_reprompts=pass_after_reprompts,
        overrides=overrides,
        accuracy_first_pass=round_half_away(100.0 * passes / samples, 2),
        accuracy_with_reprompts=round_half_away(
            100.0 * (passes + pass_after_reprompts) / samples, 2
        ),
    )


def control_metrics(
    episodes: list[EpisodeRecord], thresholds: Thresholds, run_duration: float
) -> ControlMetrics:
    """Zero-order-hold control performance over [first sample, run_duration]."""
    if not episodes:
        raise LogFormatError("cannot compute control metrics over an empty log")
    midpoint = thresholds.midpoint
    time_above = 0.0
    time_below = 0.0
    weighted_dev = 0.0
    total = 0.0
    previous_start = None
    for i, episode in enumerate(episodes):
        if previous_start is not None and episode.t_start <= previous_start:
            raise LogFormatError(
                f"episode timestamps are not strictly increasing at index {episode.index}"
            )
        previous_start = episode.t_start
        t_next = episodes[i + 1].t_start if i + 1 < len(episodes) else run_duration
        width = max(0.0, t_next - episode.t_start)
        if episode.t_sensor > thresholds.high:
            time_above += width
        elif episode.t_sensor < thresholds.low:
            time_below += width
        weighted_dev += abs(episode.t_sensor - midpoint) * width
        total += width
    return ControlMetrics(
        avg_deviation=weighted_dev / total if total > 0 else 0.0,
        time_above=time_above,
        time_below=time_below,
        time_outside=time_above + time_below,
        midpoint=midpoint,
    )


def run_metrics(
    episodes: list[EpisodeRecord], thresholds: Thresholds, run_duration: float
) -> RunMetrics:
    return RunMetrics(
        accuracy=accuracy_metrics(episodes),
        control=control_metrics(episodes, thresholds, run_duration),
    )


def _table(m: RunMetrics) -> str:
    rows = [
        ("Samples", str(m.accuracy.samples)),
        ("Passes", str(m.accuracy.passes)),
        ("Fails", str(m.accuracy.fails)),
        ("Pass after reprompts", str(m.accuracy.pass_after_reprompts)),
        ("Overrides", str(m.accuracy.overrides)),
        ("Accuracy- first pass (%)", f"{m.accuracy.accuracy_first_pass:.2f}"),
        ("Accuracy - reprompts (%)", f"{m.accuracy.accuracy_with_reprompts:.2f}"),
        ("Average deviation (degC)", f"{m.control.avg_deviation:.2f}"),
        ("Time above band (s)", f"{m.control.time_above:.2f}"),
        ("Time below band (s)", f"{m.control.time_below:.2f}"),
        ("Time outside range (s)", f"{m.control.time_outside:.2f}"),
        ("Band midpoint (degC)", f"{m.control.midpoint:.2f}"),
    ]
    width = max(len(label) for label, _ in rows)
    lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
    return "\n".join(lines)


def _csv(m: RunMetrics) -> str:
    values = (
        str(m.accuracy.samples),
        str(m.accuracy.passes),
        str(m.accuracy.fails),
        str(m.accuracy.pass_after_reprompts),
        str(m.accuracy.overrides),
        f"{m.accuracy.accuracy_first_pass:.2f}",
        f"{m.accuracy.accuracy_with_reprompts:.2f}",
        f"{m.control.avg_deviation:.2f}",
        f"{m.control.time_above:.2f}",
        f"{m.control.time_below:.2f}",
        f"{m.control.time_outside:.2f}",
        f"{m.control.midpoint:.2f}",
    )
    return ",".join(CSV_COLUMNS) + "\n" + ",".join(values)


def _machine(m: RunMetrics) -> str:
    doc = {
        "accuracy": {
            "samples": m.accuracy.samples,
            "passes": m.accuracy.passes,
            "fails": m.accuracy.fails,
            "pass_after_reprompts": m.accuracy.pass_after_reprompts,
            "overrides": m.accuracy.overrides,
            "accuracy_first_pass": m.accuracy.accuracy_first_pass,
            "accuracy_with_reprompts": m.accuracy.accuracy_with_reprompts,
        },
        "control": {
            "avg_deviation": m.control.avg_deviation,
            "time_above": m.control.time_above,
            "time_below": m.control.time_below,
            "time_outside": m.control.time_outside,
            "midpoint": m.control.midpoint,
        },
    }
    return dumps_record(doc)


def report(m: RunMetrics, fmt: str = TABLE) -> str:
    """Render both metric blocks in the requested format."""
    if fmt == TABLE:
        return _table(m)
    if fmt == CSV:
        return _csv(m)
    if fmt == MACHINE:
        return _machine(m)
    raise LogFormatError(f"unknown report format {fmt!r}")


def parse_machine_report(text: str) -> RunMetrics:
    """Inverse of the machine format; used to round-trip reports in tests."""
    doc = loads_record(text.strip())
    acc = doc["accuracy"]
    ctl = doc["control"]
    return RunMetrics(
        accuracy=AccuracyMetrics(
            samples=int(acc["samples"]),
            passes=int(acc["passes"]),
            fails=int(acc["fails"]),
            pass_after_reprompts=int(acc["pass_after_reprompts"]),
            overrides=int(acc["overrides"]),
            accuracy_first_pass=float(acc["accuracy_first_pass"]),
            accuracy_with_reprompts=float(acc["accuracy_with_reprompts"]),
        ),
        control=ControlMetrics(
            avg_deviation=float(ctl["avg_deviation"]),
            time_above=float(ctl["time_above"]),
            time_below=float(ctl["time_below"]),
            time_outside=float(ctl["time_outside"]),
            midpoint=float(ctl["midpoint"]),
        ),
    )


def points_dump(episodes: list[EpisodeRecord]) -> str:
    """One `t,temperature,action` line per episode, for external plotting."""
    return "\n".join(
        f"{e.t_start:.3f},{e.t_sensor:.3f},{e.applied.value}" for e in episodes
    )
