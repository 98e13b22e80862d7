"""Interaction controller driving the robot from the two online classifiers.

A five-state machine consumes one intention label (REST or MOTION) per
sample, plus the stopping decision while evidence is being gathered, and
emits at most one robot command per step.  Debounce counts of consecutive
identical labels gate every exit so single-sample classifier flips cannot
move the robot.
"""

from dataclasses import dataclass, replace

import numpy as np

from .accumulate import ABORT, STOP, StopDecision
from .dsp import MOTION, REST

HOME = "HOME"
EVIDENCE = "EVIDENCE_ACCUMULATION"
SEND = "SEND_COMMAND"
ON_TARGET = "ON_TARGET"
BACK = "BACK_MOVEMENT"

STATES = (HOME, EVIDENCE, SEND, ON_TARGET, BACK)

GO_TO_TARGET = "GO_TO_TARGET"
GO_HOME = "GO_HOME"

# (old state, new state) -> trigger label used in transition logs.
TRIGGERS = {
    (HOME, EVIDENCE): "motion_onset",
    (EVIDENCE, SEND): "stop_rule",
    (EVIDENCE, HOME): "rest_debounce",
    (EVIDENCE, ON_TARGET): "decision_timeout",
    (SEND, ON_TARGET): "dispatch",
    (ON_TARGET, BACK): "motion_debounce",
    (BACK, HOME): "rest_debounce",
}


@dataclass(frozen=True)
class FsmConfig:
    """Debounce and timeout lengths in samples."""

    x_debounce: int   # consecutive identical labels required to leave a state
    y_timeout: int    # accumulation samples before giving up on a decision

    def __post_init__(self):
        if int(self.x_debounce) != self.x_debounce or self.x_debounce < 1:
            raise ValueError("x_debounce must be an integer >= 1")
        if int(self.y_timeout) != self.y_timeout or self.y_timeout < 1:
            raise ValueError("y_timeout must be an integer >= 1")


@dataclass(frozen=True)
class RobotCommand:
    kind: str                    # GO_TO_TARGET | GO_HOME
    direction: int | None = None  # 1-based class, GO_TO_TARGET only
    timestamp: float = float("nan")

    def __post_init__(self):
        if self.kind not in (GO_TO_TARGET, GO_HOME):
            raise ValueError("unknown command kind %r" % (self.kind,))
        if self.kind == GO_TO_TARGET:
            if self.direction is None or self.direction < 1:
                raise ValueError("GO_TO_TARGET needs a direction >= 1")
        elif self.direction is not None:
            raise ValueError("GO_HOME carries no direction")


@dataclass(frozen=True)
class ControllerState:
    """Immutable controller snapshot between samples."""

    state: str = HOME
    rest_run: int = 0     # consecutive REST labels seen in this state
    motion_run: int = 0   # consecutive MOTION labels seen in this state
    ea_samples: int = 0   # samples spent accumulating evidence
    pending: int | None = None   # direction awaiting dispatch
    armed: bool = False   # ON_TARGET has seen REST, motion debounce live

    def __post_init__(self):
        if self.state not in STATES:
            raise ValueError("unknown state %r" % (self.state,))
        if min(self.rest_run, self.motion_run, self.ea_samples) < 0:
            raise ValueError("counters must be non-negative")
        if (self.pending is not None) != (self.state == SEND):
            raise ValueError("pending direction exists exactly in SEND_COMMAND")
        if self.armed and self.state != ON_TARGET:
            raise ValueError("armed flag is meaningful only in ON_TARGET")


def reset(cs: ControllerState | None = None) -> ControllerState:
    """Fresh controller in HOME; idempotent."""
    return ControllerState()


def fsm_step(cs, intention, stop_result, cfg, timestamp=float("nan")):
    """Advance the controller by one classified sample.

    Total over its inputs: any (state, intention, stop decision) combination
    yields a successor state and at most one command, never an error.  The
    stopping decision is read only while accumulating evidence and is
    ignored elsewhere.  Debounce counters restart from zero after every
    transition, so each state requires fresh evidence to leave.

    Returns (next ControllerState, RobotCommand or None).
    """
    if intention not in (REST, MOTION):
        raise ValueError("intention must be REST or MOTION")
    rest_run = cs.rest_run + 1 if intention == REST else 0
    motion_run = cs.motion_run + 1 if intention == MOTION else 0

    if cs.state == HOME:
        if intention == MOTION:
            return ControllerState(state=EVIDENCE), None
        return replace(cs, rest_run=rest_run, motion_run=motion_run), None

    if cs.state == EVIDENCE:
        spent = cs.ea_samples + 1
        if isinstance(stop_result, StopDecision) and stop_result.action == STOP:
            return ControllerState(state=SEND, pending=stop_result.prediction), None
        if rest_run >= cfg.x_debounce:
            return ControllerState(state=HOME), None
        aborted = isinstance(stop_result, StopDecision) and stop_result.action == ABORT
        if aborted or spent >= cfg.y_timeout:
            return ControllerState(state=ON_TARGET), None
        return replace(cs, rest_run=rest_run, motion_run=motion_run,
                       ea_samples=spent), None

    if cs.state == SEND:
        cmd = RobotCommand(GO_TO_TARGET, cs.pending, timestamp)
        return ControllerState(state=ON_TARGET), cmd

    if cs.state == ON_TARGET:
        # The reach that produced the command is usually still in flight, so
        # the motion debounce only arms once the arm has come to rest.
        armed = cs.armed or intention == REST
        if armed and motion_run >= cfg.x_debounce:
            return ControllerState(state=BACK), RobotCommand(GO_HOME, None, timestamp)
        return replace(cs, rest_run=rest_run, motion_run=motion_run, armed=armed), None

    # BACK_MOVEMENT
    if rest_run >= cfg.x_debounce:
        return ControllerState(state=HOME), None
    return replace(cs, rest_run=rest_run, motion_run=motion_run), None


def transition_trigger(old_state, new_state):
    """Log label for an observed state change, None if the pair is illegal."""
    return TRIGGERS.get((old_state, new_state))


def log_line(timestamp, old_state, new_state, command=None):
    """One transition as `time old -> new (trigger) [command]`."""
    trigger = transition_trigger(old_state, new_state) or "unknown"
    line = "%.3f %s -> %s (%s)" % (timestamp, old_state, new_state, trigger)
    if command is not None:
        tail = command.kind
        if command.direction is not None:
            tail += " %d" % command.direction
        line += " " + tail
    return line


def derive_config(segments, fraction_x=0.25, fraction_y=2.0):
    """Debounce and timeout from labelled rest/motion segments.

    The debounce is a fraction of the mean rest-segment length and the
    decision timeout a multiple of the mean motion-segment length, both
    rounded and clamped to at least one sample.
    """
    if fraction_x <= 0 or fraction_y <= 0:
        raise ValueError("fractions must be positive")
    rest_lengths = [len(s) for s in segments if s.state == REST]
    motion_lengths = [len(s) for s in segments if s.state == MOTION]
    if not rest_lengths:
        raise ValueError("no rest segments to derive the debounce from")
    if not motion_lengths:
        raise ValueError("no motion segments to derive the timeout from")
    x = max(1, int(round(fraction_x * float(np.mean(rest_lengths)))))
    y = max(1, int(round(fraction_y * float(np.mean(motion_lengths)))))
    return FsmConfig(x_debounce=x, y_timeout=y)
