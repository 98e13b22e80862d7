"""Live session engine: one 100 Hz frame in, a batch of events out.

Per frame the engine advances the causal velocity filter, updates the
rest/motion posterior, accumulates direction evidence while the controller
is collecting it, steps the controller, and emits an event for every
observable change.  Event timestamps come from frame timestamps, never the
wall clock, so replaying a recorded session reproduces the exact event
sequence; per-frame processing time is tracked separately on the engine.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import accumulate, fsm, intention, mixture, reduce
from .data import N_CHANNELS
from .dsp import REST, VelocityTracker

SNAPSHOT = "snapshot"
INTENTION = "intention"
EVIDENCE_EVENT = "evidence"
TRANSITION = "transition"
COMMAND = "command"
ABORT_EVENT = "abort"
ERROR = "error"


@dataclass(frozen=True)
class EngineEvent:
    kind: str
    t: float
    payload: dict = field(default_factory=dict)


class SessionEngine:
    """Streaming inference for one session, driven by a model bundle."""

    def __init__(self, bundle, fs=None):
        if bundle.reducer.input_dim != N_CHANNELS:
            raise ValueError(
                "bundle expects %d input channels, frames carry %d"
                % (bundle.reducer.input_dim, N_CHANNELS))
        self.bundle = bundle
        self.fs = float(fs if fs is not None
                        else bundle.provenance.get("fs", 100.0))
        self.tracker = VelocityTracker(self.fs)
        self.reset()

    def reset(self):
        self.tracker.reset()
        self.belief = intention.initial_belief(self.bundle.hmm)
        self.label = REST
        self.acc = None
        self.cs = fsm.reset()
        self.last_t = -np.inf
        self.started = False
        self.latencies = []

    def snapshot(self, t):
        """Current externally visible state, broadcast before first data."""
        return EngineEvent(SNAPSHOT, t, {
            "fsm": self.cs.state,
            "intention": self.label,
            "n_classes": self.bundle.n_classes,
            "th_r": self.bundle.stopping.th_r,
            "th_s": self.bundle.stopping.th_s,
        })

    def _frame_channels(self, frame):
        row = np.concatenate([frame.gyro_arm, frame.gyro_forearm,
                              frame.accel_arm, frame.accel_forearm,
                              frame.emg])
        if row.shape != (N_CHANNELS,):
            raise ValueError("frame does not carry %d channels" % N_CHANNELS)
        return row

    def ingest(self, frame):
        """Process one frame; returns the events it produced, in causal order."""
        t_start = time.perf_counter()
        if frame.t <= self.last_t:
            return [EngineEvent(ERROR, frame.t, {
                "reason": "out-of-order frame",
                "last_t": float(self.last_t)})]
        events = []
        if not self.started:
            events.append(self.snapshot(frame.t))
            self.started = True

        x = self.tracker.step(frame.gyro_arm, frame.gyro_forearm)
        self.belief = intention.forward_step(self.bundle.hmm, self.belief, x)
        label = intention.predict_intention(self.belief)
        if label != self.label:
            events.append(EngineEvent(INTENTION, frame.t, {
                "label": label,
                "p_motion": float(self.belief.p[1])}))
            self.label = label

        stop = None
        if self.cs.state == fsm.EVIDENCE:
            features = reduce.transform(self.bundle.reducer,
                                        self._frame_channels(frame))
            rho = mixture.normalize_over_classes(
                mixture.class_log_pdf(self.bundle.direction, features))
            self.acc = accumulate.accumulate_step(self.acc, rho)
            stop = accumulate.should_stop(self.acc, self.bundle.stopping)
            events.append(EngineEvent(EVIDENCE_EVENT, frame.t, {
                "alpha_norm": self.acc.normalized.tolist(),
                "c_r": accumulate.ratio_criterion(self.acc),
                "c_s": accumulate.sum_criterion(self.acc),
                "t": self.acc.t,
                "prediction": accumulate.current_prediction(self.acc),
            }))
            if stop.action == accumulate.ABORT:
                events.append(EngineEvent(ABORT_EVENT, frame.t,
                                          {"t": self.acc.t}))

        new_cs, command = fsm.fsm_step(self.cs, label, stop, self.bundle.fsm,
                                       timestamp=frame.t)
        if new_cs.state != self.cs.state:
            events.append(EngineEvent(TRANSITION, frame.t, {
                "from": self.cs.state,
                "to": new_cs.state,
                "trigger": fsm.transition_trigger(self.cs.state, new_cs.state),
            }))
            if new_cs.state == fsm.EVIDENCE:
                self.acc = accumulate.fresh_state(self.bundle.n_classes,
                                                  onset=frame.t)
            elif self.cs.state == fsm.EVIDENCE:
                self.acc = None
        if command is not None:
            events.append(EngineEvent(COMMAND, frame.t, {
                "kind": command.kind,
                "direction": command.direction}))
        self.cs = new_cs
        self.last_t = frame.t
        self.latencies.append(time.perf_counter() - t_start)
        return events


def _sample_index(t, fs):
    return int(round(t * fs))


def classify_transitions(transitions, truth_state, truth_direction,
                         x_debounce, fs, window_s=0.25):
    """Split transition events into consistent and erroneous ones.

    A transition is consistent when the operator activity it claims to
    react to is present in the ground truth near the event, allowing the
    debounce delay plus a symmetric tolerance window.
    """
    n = len(truth_state)
    win = int(round(window_s * fs))
    onsets = np.flatnonzero(np.diff(truth_state, prepend=0) == 1)
    backward = (truth_state == 1) & (truth_direction == 0)
    erroneous = []
    for event in transitions:
        idx = _sample_index(event.t, fs)
        lo, hi = max(0, idx - win), min(n, idx + win + 1)
        lo_deb = max(0, idx - x_debounce - win)
        trigger = event.payload["trigger"]
        if trigger == "motion_onset":
            ok = np.any((onsets >= lo) & (onsets < hi))
        elif trigger in ("stop_rule", "dispatch", "decision_timeout"):
            ok = np.any(truth_direction[lo_deb:hi] > 0)
        elif trigger == "motion_debounce":
            ok = np.any(backward[lo_deb:hi])
        elif trigger == "rest_debounce":
            ok = np.any(truth_state[lo:hi] == 0)
        else:
            ok = False
        if not ok:
            erroneous.append(event)
    return erroneous


def _match_trial(truth, idx):
    for tr in truth.trials:
        if tr.fwd_onset <= idx < tr.bwd_onset:
            return tr
    return None


def replay(engine, session, truth=None, speed=None):
    """Push a whole session through a fresh engine run.

    Returns (events, metrics).  Without ground truth the metrics cover
    timing and event counts only.  A finite `speed` sleeps between frames
    to pace a demonstration at that multiple of real time; by default the
    replay runs flat out and stays deterministic either way.
    """
    engine.reset()
    events = []
    labels = np.empty(len(session), dtype=object)
    prev_t = None
    for i, frame in enumerate(session.iter_frames()):
        if speed is not None and prev_t is not None:
            time.sleep(max(0.0, (frame.t - prev_t) / speed))
        prev_t = frame.t
        events.extend(engine.ingest(frame))
        labels[i] = engine.label

    transitions = [e for e in events if e.kind == TRANSITION]
    commands = [e for e in events if e.kind == COMMAND]
    go_commands = [e for e in commands
                   if e.payload["kind"] == fsm.GO_TO_TARGET]
    latencies = np.asarray(engine.latencies)
    entered, abandoned = 0, 0
    for a, b in zip(transitions, transitions[1:]):
        if a.payload["to"] == fsm.EVIDENCE:
            entered += 1
            if b.payload["from"] == fsm.EVIDENCE and b.payload["to"] == fsm.HOME:
                abandoned += 1
    entered += sum(1 for e in transitions[-1:]
                   if e.payload["to"] == fsm.EVIDENCE)

    metrics = {
        "n_frames": len(session),
        "n_events": len(events),
        "n_transitions": len(transitions),
        "n_commands": len(commands),
        "n_go_to_target": len(go_commands),
        "accumulations_entered": entered,
        "accumulations_abandoned": abandoned,
        "latency_ms_mean": float(latencies.mean() * 1e3) if latencies.size else 0.0,
        "latency_ms_p99": float(np.percentile(latencies, 99) * 1e3)
        if latencies.size else 0.0,
    }
    if truth is None:
        return events, metrics

    state = truth.state_array(len(session))
    direction = truth.direction_array(len(session))
    predicted = np.array([1 if l != REST else 0 for l in labels])
    metrics["intention_accuracy"] = float(np.mean(predicted == state))

    erroneous = classify_transitions(transitions, state, direction,
                                     engine.bundle.fsm.x_debounce, engine.fs)
    metrics["n_erroneous_transitions"] = len(erroneous)
    metrics["erroneous_transition_rate"] = (
        len(erroneous) / len(transitions) if transitions else 0.0)

    matched, stop_times, stop_pcts = [], [], []
    for event in go_commands:
        idx = _sample_index(event.t, engine.fs)
        tr = _match_trial(truth, idx)
        if tr is None:
            matched.append(False)
            continue
        matched.append(event.payload["direction"] == tr.direction)
        stop_times.append((idx - tr.fwd_onset) / engine.fs)
        stop_pcts.append(min(1.0, (idx - tr.fwd_onset)
                             / (tr.fwd_offset - tr.fwd_onset)))
    metrics["command_accuracy"] = (
        float(np.mean(matched)) if matched else float("nan"))
    metrics["mean_stop_time_s"] = (
        float(np.mean(stop_times)) if stop_times else float("nan"))
    metrics["mean_stop_pct"] = (
        float(np.mean(stop_pcts)) if stop_pcts else float("nan"))
    return events, metrics
