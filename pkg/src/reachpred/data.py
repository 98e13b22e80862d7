"""Session container and the on-disk dataset format.

A dataset is a CSV file with one 100 Hz sample per line in a fixed header
order; an optional ``<name>.truth.csv`` sidecar carries per-trial ground
truth (direction label plus forward/backward onset/offset indices).
Floats are written with shortest round-trip formatting so a save/load
cycle is lossless.
"""

from __future__ import annotations

import os
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

GYRO_ARM = slice(0, 3)
GYRO_FOREARM = slice(3, 6)
ACCEL_ARM = slice(6, 9)
ACCEL_FOREARM = slice(9, 12)
N_IMU = 12
N_EMG = 16
N_CHANNELS = N_IMU + N_EMG

IMU_COLUMNS = [
    f"{sensor}_{axis}"
    for sensor in ("gyro_arm", "gyro_forearm", "accel_arm", "accel_forearm")
    for axis in "xyz"
]
EMG_COLUMNS = [f"emg_{i:02d}" for i in range(N_EMG)]
DATASET_COLUMNS = ["t"] + IMU_COLUMNS + EMG_COLUMNS + ["state", "direction", "trial_id"]

# state: -1 unknown, 0 rest, 1 motion; direction: -1 unknown, 0 none, 1..L
SampleFrame = namedtuple(
    "SampleFrame",
    "t gyro_arm gyro_forearm accel_arm accel_forearm emg state direction trial_id",
)


@dataclass
class Session:
    """A recorded or generated multi-channel session (struct of arrays)."""

    t: np.ndarray          # (N,) seconds, monotone
    imu: np.ndarray        # (N, 12) gyro arm/forearm, accel arm/forearm
    emg: np.ndarray        # (N, 16) non-negative envelopes
    state: np.ndarray      # (N,) int
    direction: np.ndarray  # (N,) int
    trial_id: np.ndarray   # (N,) int
    fs: float = 100.0

    def __post_init__(self):
        n = len(self.t)
        if not (self.imu.shape == (n, N_IMU) and self.emg.shape == (n, N_EMG)):
            raise ValueError("channel arrays do not match the declared layout")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def gyro_arm(self):
        return self.imu[:, GYRO_ARM]

    @property
    def gyro_forearm(self):
        return self.imu[:, GYRO_FOREARM]

    @property
    def accel_arm(self):
        return self.imu[:, ACCEL_ARM]

    @property
    def accel_forearm(self):
        return self.imu[:, ACCEL_FOREARM]

    def channels(self):
        """(N, 28) matrix in the fixed channel order: 12 IMU then 16 EMG."""
        return np.hstack([self.imu, self.emg])

    def frame(self, i):
        return SampleFrame(
            float(self.t[i]),
            self.imu[i, GYRO_ARM],
            self.imu[i, GYRO_FOREARM],
            self.imu[i, ACCEL_ARM],
            self.imu[i, ACCEL_FOREARM],
            self.emg[i],
            int(self.state[i]),
            int(self.direction[i]),
            int(self.trial_id[i]),
        )

    def iter_frames(self):
        for i in range(len(self)):
            yield self.frame(i)


@dataclass
class TrialTruth:
    trial_id: int
    direction: int
    fwd_onset: int
    fwd_offset: int
    bwd_onset: int
    bwd_offset: int


@dataclass
class GroundTruth:
    """Exact per-trial truth emitted by the generator (test oracle)."""

    trials: list = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def state_array(self, n):
        """Per-sample 0/1 rest/motion truth."""
        state = np.zeros(n, dtype=int)
        for tr in self.trials:
            state[tr.fwd_onset : tr.fwd_offset] = 1
            state[tr.bwd_onset : tr.bwd_offset] = 1
        return state

    def direction_array(self, n):
        """Per-sample direction label (forward motions only, 0 elsewhere)."""
        direction = np.zeros(n, dtype=int)
        for tr in self.trials:
            direction[tr.fwd_onset : tr.fwd_offset] = tr.direction
        return direction

    def labels(self):
        return np.array([tr.direction for tr in self.trials], dtype=int)


def truth_path(dataset_path):
    base, ext = os.path.splitext(str(dataset_path))
    return base + ".truth" + (ext or ".csv")


def save_dataset(session: Session, path, truth: GroundTruth | None = None):
    """Write a session (and optional truth sidecar) atomically."""
    float_cols = [session.t] + [session.imu[:, j] for j in range(N_IMU)] + [
        session.emg[:, j] for j in range(N_EMG)
    ]
    formatted = [[repr(float(v)) for v in c] for c in float_cols]
    formatted += [
        [str(int(v)) for v in c]
        for c in (session.state, session.direction, session.trial_id)
    ]
    body = "\n".join(",".join(row) for row in zip(*formatted))
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(",".join(DATASET_COLUMNS) + "\n" + body + "\n")
    os.replace(tmp, path)
    if truth is not None:
        save_truth(truth, truth_path(path))


def save_truth(truth: GroundTruth, path):
    lines = ["trial_id,direction,fwd_onset,fwd_offset,bwd_onset,bwd_offset"]
    for tr in truth.trials:
        lines.append(
            f"{tr.trial_id},{tr.direction},{tr.fwd_onset},{tr.fwd_offset},"
            f"{tr.bwd_onset},{tr.bwd_offset}"
        )
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _first_malformed_line(path, expected_fields):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if len(line.split(",")) != expected_fields:
                return lineno
    return None


def load_dataset(path, fs=100.0):
    """Load a dataset file, returning (Session, GroundTruth | None)."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except Exception as exc:
        lineno = _first_malformed_line(path, len(DATASET_COLUMNS))
        raise ValueError(f"malformed dataset {path} (line {lineno}): {exc}") from exc
    if list(df.columns) != DATASET_COLUMNS:
        raise ValueError(f"unexpected dataset header in {path}")
    if df.isna().any().any():
        lineno = int(np.flatnonzero(df.isna().any(axis=1))[0]) + 2  # + header
        raise ValueError(f"malformed dataset {path}: incomplete record at line {lineno}")
    t = df["t"].to_numpy(dtype=float)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError(f"non-monotone timestamps in {path}")
    session = Session(
        t=t,
        imu=df[IMU_COLUMNS].to_numpy(dtype=float),
        emg=df[EMG_COLUMNS].to_numpy(dtype=float),
        state=df["state"].to_numpy(dtype=int),
        direction=df["direction"].to_numpy(dtype=int),
        trial_id=df["trial_id"].to_numpy(dtype=int),
        fs=fs,
    )
    truth = None
    sidecar = truth_path(path)
    if os.path.exists(sidecar):
        truth = load_truth(sidecar)
    return session, truth


def load_truth(path):
    df = pd.read_csv(path)
    truth = GroundTruth()
    for row in df.itertuples(index=False):
        truth.trials.append(
            TrialTruth(
                int(row.trial_id),
                int(row.direction),
                int(row.fwd_onset),
                int(row.fwd_offset),
                int(row.bwd_onset),
                int(row.bwd_offset),
            )
        )
    return truth
