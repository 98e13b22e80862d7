"""Digital filtering, the velocity-magnitude observable, EMG envelopes and
offline motion/rest segmentation.

Batch paths (training, segmentation) use zero-phase forward-backward
filtering; streaming paths apply the same coefficients in a single causal
pass so that the live pipeline never looks ahead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal


@dataclass(frozen=True)
class FilterSpec:
    """A designed digital filter as cascaded second-order sections."""

    kind: str                # "band-pass" | "low-pass" | "moving-average"
    order: int
    cutoffs: tuple           # Hz, (low, high) or (cutoff,)
    sample_rate: float       # Hz
    sos: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.sos)):
            raise ValueError("filter coefficients must be finite")
        for c in self.cutoffs:
            if not 0.0 < c < self.sample_rate / 2.0:
                raise ValueError(
                    f"cutoff {c} Hz outside (0, {self.sample_rate / 2}) Hz"
                )
        if self.kind == "band-pass" and self.order % 2 != 0:
            raise ValueError("band-pass designs need an even order")

    @property
    def n_sections(self):
        return self.sos.shape[0]


def _check_stable(sos):
    # poles of each biquad must lie strictly inside the unit circle
    for section in sos:
        poles = np.roots(section[3:])
        if np.any(np.abs(poles) >= 1.0):
            raise ValueError("unstable filter design (pole on/outside unit circle)")


def design_bandpass(low, high, order, fs):
    """Butterworth band-pass of the given overall order, as SOS.

    `order` counts the overall filter order, so a 4th-order band-pass uses
    two poles per band edge (scipy's N=2).
    """
    if not (0.0 < low < high < fs / 2.0):
        raise ValueError(f"need 0 < low < high < fs/2, got ({low}, {high}) at fs={fs}")
    if order % 2 != 0 or order < 2:
        raise ValueError("band-pass order must be even and >= 2")
    sos = signal.butter(order // 2, [low, high], btype="bandpass", fs=fs, output="sos")
    _check_stable(sos)
    return FilterSpec("band-pass", order, (float(low), float(high)), float(fs), sos)


def design_lowpass(cutoff, order, fs):
    """Butterworth low-pass, as SOS."""
    if not (0.0 < cutoff < fs / 2.0):
        raise ValueError(f"cutoff must lie in (0, fs/2), got {cutoff} at fs={fs}")
    sos = signal.butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    _check_stable(sos)
    return FilterSpec("low-pass", order, (float(cutoff),), float(fs), sos)


def frequency_response(spec: FilterSpec, freqs_hz):
    """|H(e^{jw})| evaluated directly from the section polynomials.

    Independent of the time-domain filtering path; used by tests as the
    magnitude-response oracle.
    """
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / spec.sample_rate
    z = np.exp(-1j * w)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in spec.sos:
        h *= (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
    return np.abs(h)


# edge transients are considered settled once an initial-condition error
# has decayed by this factor
_PAD_DECAY = 1e-4


def _min_length(spec: FilterSpec):
    return 3 * (spec.order + 1)


def _padlen(spec: FilterSpec, n):
    """Reflection padding long enough for the slowest pole to ring down.

    A pole of magnitude p leaves a boundary transient that decays as p^k,
    so log(decay)/log(p) samples of padding push it out of the returned
    window.  Slow poles (a 0.01 Hz corner settles over minutes) can demand
    more padding than the series holds; the reflection can supply at most
    n - 1 samples, so the pad is capped there.
    """
    pmax = 0.0
    for section in spec.sos:
        roots = np.roots(section[3:])
        if roots.size:
            pmax = max(pmax, float(np.abs(roots).max()))
    if pmax <= 0.0:
        ring = 0
    else:
        ring = int(np.ceil(np.log(_PAD_DECAY) / np.log(pmax)))
    return int(min(max(ring, _min_length(spec)), n - 1))


def filtfilt(spec: FilterSpec, x):
    """Zero-phase forward-backward filtering with even reflection padding.

    Even reflection keeps the extension in-distribution for the signals
    this package filters: magnitudes rest at a positive floor with
    positive excursions, which odd reflection would invert below the
    floor and feed to the slow poles as unphysical boundary content.
    """
    x = np.asarray(x, dtype=float)
    need = _min_length(spec)
    if x.shape[-1] <= need:
        raise ValueError(
            f"series of length {x.shape[-1]} too short to pad (need > {need})"
        )
    return signal.sosfiltfilt(
        spec.sos, x, padtype="even", padlen=_padlen(spec, x.shape[-1])
    )


class SosState:
    """Single-owner streaming filter state for one scalar channel.

    By default produces sample-for-sample the output of a single causal
    `sosfilt` pass with zero initial conditions.  With `prime=True` the
    state is initialized at the first sample to the steady-state response
    for an input held at that value, so a stream that begins on a nonzero
    floor does not see its own DC level as a step; a high-pass then reads
    a resting stream as zero from the first sample instead of emitting a
    slowly decaying startup transient.
    """

    def __init__(self, spec: FilterSpec, prime=False):
        self.spec = spec
        self.prime = bool(prime)
        self.zi = np.zeros((spec.n_sections, 2))
        self._primed = False

    def _maybe_prime(self, x0):
        if self.prime and not self._primed:
            self.zi = signal.sosfilt_zi(self.spec.sos) * float(x0)
        self._primed = True

    def step(self, x_t):
        self._maybe_prime(x_t)
        y, self.zi = signal.sosfilt(self.spec.sos, np.asarray([x_t], dtype=float), zi=self.zi)
        return float(y[0])

    def process(self, x):
        x = np.asarray(x, dtype=float)
        if x.size:
            self._maybe_prime(x[0])
        y, self.zi = signal.sosfilt(self.spec.sos, x, zi=self.zi)
        return y

    def reset(self):
        self.zi[:] = 0.0
        self._primed = False


def causal_filter(spec: FilterSpec, x):
    """One forward pass over a whole series, zero initial state."""
    return signal.sosfilt(spec.sos, np.asarray(x, dtype=float))


# The observable driving the intention HMM: per-sensor angular-velocity
# magnitude, band-passed 0.01-3 Hz, summed over arm and forearm.
INTENTION_BAND = (0.01, 3.0)
INTENTION_ORDER = 4


def intention_filter(fs):
    return design_bandpass(INTENTION_BAND[0], INTENTION_BAND[1], INTENTION_ORDER, fs)


class VelocityTracker:
    """Streaming velocity-magnitude observable (causal band-pass per sensor).

    The per-sensor filters prime on the first sample: magnitudes rest at a
    positive noise floor, and an unprimed high-pass would turn that floor
    into a startup step that reads as minutes of phantom motion.
    """

    def __init__(self, fs):
        spec = intention_filter(fs)
        self._arm = SosState(spec, prime=True)
        self._forearm = SosState(spec, prime=True)

    def step(self, gyro_arm, gyro_forearm):
        a = self._arm.step(np.linalg.norm(gyro_arm))
        f = self._forearm.step(np.linalg.norm(gyro_forearm))
        return a + f

    def reset(self):
        self._arm.reset()
        self._forearm.reset()


def velocity_magnitude_batch(gyro_arm, gyro_forearm, fs):
    """Zero-phase velocity observable for a whole session.

    gyro_* are (N, 3) arrays; output is the summed filtered magnitudes.
    """
    spec = intention_filter(fs)
    arm = filtfilt(spec, np.linalg.norm(np.asarray(gyro_arm, dtype=float), axis=1))
    fore = filtfilt(spec, np.linalg.norm(np.asarray(gyro_forearm, dtype=float), axis=1))
    return arm + fore


def velocity_magnitude_causal(gyro_arm, gyro_forearm, fs):
    """Causal velocity observable for a whole session.

    Sample-for-sample identical to streaming the frames through a
    `VelocityTracker`; models that will serve a live stream are trained
    on this trace so the emission statistics match what they will see.
    """
    spec = intention_filter(fs)
    arm, fore = SosState(spec, prime=True), SosState(spec, prime=True)
    a = arm.process(np.linalg.norm(np.asarray(gyro_arm, dtype=float), axis=1))
    f = fore.process(np.linalg.norm(np.asarray(gyro_forearm, dtype=float), axis=1))
    return a + f


def emg_envelope(raw, fs, causal=False):
    """Full-wave rectification + 2nd-order low-pass at 2 Hz, clamped >= 0."""
    spec = design_lowpass(2.0, 2, fs)
    rect = np.abs(np.asarray(raw, dtype=float))
    out = causal_filter(spec, rect) if causal else filtfilt(spec, rect)
    return np.maximum(out, 0.0)


REST = "REST"
MOTION = "MOTION"


@dataclass
class SegmentInterval:
    start: int                  # inclusive sample index
    end: int                    # exclusive sample index
    state: str                  # REST | MOTION
    motion_role: str = "none"   # forward | backward | none
    direction: int | None = None

    def __len__(self):
        return self.end - self.start


def _runs(mask):
    """Maximal runs of True in a boolean array as (start, end) pairs."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = list(edges[~mask[edges]] + 1)
    ends = list(edges[mask[edges]] + 1)
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        ends.append(mask.size)
    return list(zip(starts, ends))


def _refine_edge(raw, anchor, limit, fs, side, scale):
    """Pull a stage-1 crossing back to where the raw trace leaves rest.

    The mean + 6*std crossing sits partway up the movement ramp, and the
    zero-phase filter additionally smears the ramp onset backward, so the
    filtered trace cannot localize the boundary.  The unfiltered magnitude
    sum can: it rests at the noise floor and departs exactly at movement
    onset.  Rest statistics come from a window far enough from the crossing
    to be ramp-free; the edge walks toward the rest side until the raw trace
    falls back to the departure level.  The floor on `delta` covers the
    noiseless case where the rest statistics collapse to zero.
    """
    near = int(round(0.6 * fs))
    far = int(round(1.6 * fs))
    walk = int(round(1.0 * fs))
    if side == "onset":
        win_lo, win_hi = max(anchor - far, limit), anchor - near
        floor = max(limit, anchor - walk)
    else:
        win_lo, win_hi = anchor + near, min(anchor + far, limit)
        floor = min(limit, anchor + walk)
    if win_hi - win_lo < 20:
        return anchor
    rest = raw[win_lo:win_hi]
    delta = float(rest.mean()) + max(3.0 * float(rest.std()), 1e-4 * scale)
    i = anchor
    if side == "onset":
        while i > floor and raw[i - 1] > delta:
            i -= 1
    else:
        while i < floor and raw[i] > delta:
            i += 1
    return i


def segment_session(gyro_arm, gyro_forearm, fs, labels=None):
    """Two-stage offline motion/rest segmentation.

    Stage 1 band-passes the summed angular-velocity magnitude (zero-phase)
    and thresholds it at the mean plus six standard deviations of the first
    and last second of the session, where the operator is known to rest.
    Stage 2 runs a 1 s moving average over the stage-1 binary trace and keeps
    only regions where it exceeds the fixed 0.1 level, i.e. bursts covering
    at least 10 % of the trailing second.  Burst boundaries are then taken
    from the stage-1 crossings and pulled back to the local baseline
    departure, so onsets are not delayed by the climb to the 6-sigma level.

    Motion intervals alternate forward/backward anchored at the session
    start.  `labels` (per-sample direction, 0 = none) tags forward motions.
    """
    speed = np.linalg.norm(np.asarray(gyro_arm, dtype=float), axis=1) + np.linalg.norm(
        np.asarray(gyro_forearm, dtype=float), axis=1
    )
    n = speed.size
    win = int(round(fs))
    if n < 2 * win + 2:
        raise ValueError("session shorter than the two 1 s rest bookends")

    spec = intention_filter(fs)
    filtered = filtfilt(spec, speed)

    bookends = np.concatenate([filtered[:win], filtered[-win:]])
    th1 = bookends.mean() + 6.0 * bookends.std()
    b1 = filtered > th1

    # causal 1 s moving average of the binary trace
    ma = np.convolve(b1.astype(float), np.ones(win) / win)[:n]
    b2 = ma > 0.1

    # keep stage-1 bursts validated by a stage-2 region; bursts validated by
    # the same region merge into one interval
    regions = _runs(b2)
    motions = []
    for rs, re in _runs(b1):
        region_idx = next(
            (i for i, (gs, ge) in enumerate(regions) if rs < ge and re > gs), None
        )
        if region_idx is None:
            continue
        if motions and motions[-1][2] == region_idx:
            motions[-1] = (motions[-1][0], re, region_idx)
        else:
            motions.append((rs, re, region_idx))
    motions = [(s, e) for s, e, _ in motions]

    if not motions:
        if labels is not None and np.any(np.asarray(labels) > 0):
            raise ValueError("labeled session but no MOTION found")
        return [SegmentInterval(0, n, REST)]

    scale = float(speed.max())
    refined = []
    prev_end = 0
    for k, (ms, me) in enumerate(motions):
        nxt = motions[k + 1][0] if k + 1 < len(motions) else n
        s = _refine_edge(speed, ms, prev_end, fs, "onset", scale)
        e = _refine_edge(speed, me, nxt, fs, "offset", scale)
        e = max(e, s + 1)
        refined.append((s, e))
        prev_end = e
    motions = refined

    intervals = []
    cursor = 0
    for i, (ms, me) in enumerate(motions):
        if ms > cursor:
            intervals.append(SegmentInterval(cursor, ms, REST))
        role = "forward" if i % 2 == 0 else "backward"
        direction = None
        if labels is not None and role == "forward":
            seg = np.asarray(labels)[ms:me]
            seg = seg[seg > 0]
            if seg.size:
                vals, counts = np.unique(seg, return_counts=True)
                direction = int(vals[np.argmax(counts)])
        intervals.append(SegmentInterval(ms, me, MOTION, role, direction))
        cursor = me
    if cursor < n:
        intervals.append(SegmentInterval(cursor, n, REST))
    return intervals
