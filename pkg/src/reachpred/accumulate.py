"""Evidence accumulation over a reach and the dynamic stopping rule.

Per-sample class evidence (a simplex vector from the direction model) is
summed from movement onset.  Two criteria decide when enough has been seen:
a ratio criterion on the two strongest classes and a sum criterion on the
accumulated mass, which grows by exactly 1 per sample, so its threshold is
a per-movement sample budget.  A grid search over both thresholds, replayed
on held-out trials, picks the fastest configuration that keeps the target
accuracy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

STOP = "stop"
CONTINUE = "continue"
ABORT = "abort"

# tuning grids: ratio thresholds in coarse steps plus a strict top value,
# sum thresholds spanning 0.05 s to 1.5 s of evidence at 100 Hz
DEFAULT_TH_R_GRID = tuple(np.round(np.arange(50, 96, 5) / 100.0, 2)) + (0.99,)
DEFAULT_TH_S_GRID = tuple(float(v) for v in range(5, 151, 5))


@dataclass(frozen=True)
class AccumulatorState:
    alpha: np.ndarray   # (L,) raw evidence sums
    t: int = 0          # samples accumulated since onset
    onset: float = float("nan")   # timestamp of the first sample, caller-defined

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "t", int(self.t))
        if self.alpha.ndim != 1 or self.alpha.size < 1:
            raise ValueError("alpha must be a 1-D class vector")
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha < 0):
            raise ValueError("alpha must be non-negative and finite")
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.t == 0 and self.alpha.any():
            raise ValueError("no evidence may precede the first step")
        if self.t > 0 and not self.alpha.any():
            raise ValueError("accumulated evidence cannot be all zero")

    @property
    def n_classes(self):
        return self.alpha.size

    @property
    def normalized(self):
        """Evidence shares on the class simplex; needs at least one step."""
        if self.t < 1:
            raise ValueError("no evidence accumulated yet")
        return self.alpha / self.alpha.sum()


@dataclass(frozen=True)
class StoppingConfig:
    th_r: float                    # ratio threshold in [0, 1)
    th_s: float                    # sum threshold, samples of evidence
    timeout: float = float("inf")  # abort after this many samples
    target_accuracy: float = 0.95  # accuracy floor used during tuning
    target_met: bool = True        # False when tuning could not reach it

    def __post_init__(self):
        if not 0.0 <= self.th_r < 1.0:
            raise ValueError("ratio threshold must lie in [0, 1)")
        if self.th_s <= 0:
            raise ValueError("sum threshold must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class StopDecision:
    action: str               # STOP | CONTINUE | ABORT
    prediction: int | None = None   # class index, set only for STOP


@dataclass(frozen=True)
class TrialEvidence:
    """One motion's per-sample simplex evidence with its true class."""
    label: int
    rho: np.ndarray   # (T, L) rows on the class simplex
    fs: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        object.__setattr__(self, "label", int(self.label))
        if self.rho.ndim != 2 or self.rho.shape[0] < 1 or self.rho.shape[1] < 2:
            raise ValueError("rho must be (T, L) with T >= 1 and L >= 2")
        if np.any(self.rho < 0) or np.any(np.abs(self.rho.sum(axis=1) - 1) > 1e-6):
            raise ValueError("rho rows must lie on the simplex")
        if not 1 <= self.label <= self.rho.shape[1]:
            raise ValueError("label out of class range")
        if self.fs <= 0:
            raise ValueError("sample rate must be positive")


def fresh_state(n_classes, onset=float("nan")):
    if n_classes < 1:
        raise ValueError("need at least one class")
    return AccumulatorState(alpha=np.zeros(int(n_classes)), t=0, onset=onset)


def accumulate_step(state: AccumulatorState, rho, simplex=True) -> AccumulatorState:
    """Add one sample of class evidence; returns the successor state.

    rho must lie on the simplex (checked) unless simplex=False, which admits
    raw non-negative densities for the unnormalized reading of the sum
    criterion.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != state.alpha.shape:
        raise ValueError("evidence dimension mismatch")
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise ValueError("evidence must be non-negative and finite")
    if simplex and abs(rho.sum() - 1.0) > 1e-9:
        raise ValueError("evidence must lie on the simplex")
    alpha = state.alpha + rho
    if simplex:
        # each step adds exactly unit mass, so the sum criterion counts samples
        assert abs(alpha.sum() - state.alpha.sum() - 1.0) < 1e-9
    return AccumulatorState(alpha=alpha, t=state.t + 1, onset=state.onset)


def current_prediction(state: AccumulatorState) -> int:
    """Class with the largest evidence share; ties go to the lowest index."""
    if state.t < 1:
        raise ValueError("no evidence accumulated yet")
    return int(np.argmax(state.normalized)) + 1


def ratio_criterion(state: AccumulatorState) -> float:
    """1 - k2/k1 over the two largest evidence shares, in [0, 1]."""
    if state.t < 1:
        raise ValueError("no evidence accumulated yet")
    if state.n_classes < 2:
        raise ValueError("ratio needs at least two classes")
    top2 = np.partition(state.normalized, -2)[-2:]
    return float(1.0 - top2[0] / top2[1])


def sum_criterion(state: AccumulatorState) -> float:
    """Total accumulated evidence mass; exactly t for simplex input."""
    return float(state.alpha.sum())


def should_stop(state: AccumulatorState, cfg: StoppingConfig) -> StopDecision:
    """Stop once either criterion clears its threshold, abort past timeout."""
    if state.t >= 1 and (
        ratio_criterion(state) > cfg.th_r or sum_criterion(state) > cfg.th_s
    ):
        return StopDecision(action=STOP, prediction=current_prediction(state))
    if state.t > cfg.timeout:
        return StopDecision(action=ABORT)
    return StopDecision(action=CONTINUE)


def replay_trial(rho, cfg: StoppingConfig, fs=100.0):
    """Sequential reference replay of one evidence trace.

    Returns (outcome, prediction, t): outcome "stop" when a criterion fired,
    "abort" on timeout, "end" when the trace ran out first, in which case
    the final evidence decides the prediction.
    """
    rho = np.asarray(rho, dtype=float)
    state = fresh_state(rho.shape[1])
    for row in rho:
        state = accumulate_step(state, row)
        decision = should_stop(state, cfg)
        if decision.action == STOP:
            return STOP, decision.prediction, state.t
        if decision.action == ABORT:
            return ABORT, None, state.t
    return "end", current_prediction(state), state.t


def stratified_kfold(labels, k=5, seed=0):
    """Split trial indices into k folds, class proportions kept within 1.

    Per class the indices are shuffled and dealt round-robin, so every
    fold's count for a class differs from any other fold's by at most one
    trial.  Returns a list of k index arrays.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size < 1:
        raise ValueError("labels must be a 1-D trial list")
    if k < 1:
        raise ValueError("need at least one fold")
    rng = np.random.default_rng([int(seed), 401, int(k)])
    folds = [[] for _ in range(k)]
    for cl in np.unique(labels):
        idx = np.flatnonzero(labels == cl)
        if idx.size < k:
            raise ValueError("class %r has fewer trials than folds" % (cl,))
        rng.shuffle(idx)
        for pos, trial in enumerate(idx):
            folds[pos % k].append(int(trial))
    return [np.sort(np.asarray(fold, dtype=int)) for fold in folds]


def _trial_profiles(trial: TrialEvidence):
    """Per-sample ratio criterion, total mass and prediction along a trace.

    Computed with the same float operations as the sequential replay so a
    grid cell and a step-by-step run decide identically at the thresholds.
    """
    alpha = np.cumsum(trial.rho, axis=0)
    mass = alpha.sum(axis=1)
    shares = alpha / mass[:, None]
    top2 = np.partition(shares, -2, axis=1)[:, -2:]
    cr = 1.0 - top2[:, 0] / top2[:, 1]
    preds = np.argmax(shares, axis=1) + 1
    return cr, mass, preds


def _replay_cell(cr, mass, preds, label, th_r, th_s, timeout):
    """Stop sample and correctness for one grid cell on one trace.

    Mirrors the sequential rule: after step t the trial stops when the
    ratio crosses th_r or the mass crosses th_s, aborts when t exceeds the
    timeout, and a trace that runs out decides with its final evidence.
    """
    n = cr.size
    hits = np.flatnonzero(cr > th_r)
    t_ratio = hits[0] + 1 if hits.size else np.inf
    idx = int(np.searchsorted(mass, th_s, side="right"))
    t_sum = idx + 1 if idx < n else np.inf
    t_stop = min(t_ratio, t_sum)
    t_abort = np.floor(timeout) + 1.0 if np.isfinite(timeout) else np.inf
    if t_stop <= min(t_abort, n):
        t = int(t_stop)
        return t, preds[t - 1] == label
    if t_abort <= n:
        return int(t_abort), False
    return n, preds[n - 1] == label


def grid_search(trials, th_r_grid=DEFAULT_TH_R_GRID, th_s_grid=DEFAULT_TH_S_GRID,
                target_accuracy=0.95, timeout=float("inf")):
    """Threshold pair meeting the accuracy target in the least mean time.

    Every (th_r, th_s) cell replays all trials; the frontier table records
    one row per cell with its mean accuracy, accuracy spread, mean stopping
    time in seconds and as a fraction of the trajectory.  Among cells at or
    above the target the one with minimal mean time wins; ties prefer the
    larger th_r, then the smaller th_s.  When no cell reaches the target
    the best-accuracy cell is returned flagged unmet.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("no trials to tune on")
    if not len(th_r_grid) or not len(th_s_grid):
        raise ValueError("threshold grids must be non-empty")
    profiles = [_trial_profiles(tr) for tr in trials]
    frontier = []
    for th_r in th_r_grid:
        for th_s in th_s_grid:
            times_s, pct, correct = [], [], []
            for trial, (cr, mass, preds) in zip(trials, profiles):
                t, ok = _replay_cell(cr, mass, preds, trial.label,
                                     th_r, th_s, timeout)
                times_s.append(t / trial.fs)
                pct.append(t / cr.size)
                correct.append(bool(ok))
            acc = float(np.mean(correct))
            frontier.append({
                "th_r": float(th_r),
                "th_s": float(th_s),
                "mean_accuracy": acc,
                "std_accuracy": float(np.std(correct)),
                "mean_time_s": float(np.mean(times_s)),
                "mean_pct_trajectory": float(np.mean(pct)),
                "meets_target": acc >= target_accuracy,
            })
    feasible = [row for row in frontier if row["meets_target"]]
    met = bool(feasible)
    if not met:
        warnings.warn("no threshold cell met the accuracy target")
        best_acc = max(row["mean_accuracy"] for row in frontier)
        feasible = [row for row in frontier if row["mean_accuracy"] == best_acc]
    best = min(feasible, key=lambda r: (r["mean_time_s"], -r["th_r"], r["th_s"]))
    cfg = StoppingConfig(
        th_r=best["th_r"], th_s=best["th_s"], timeout=timeout,
        target_accuracy=target_accuracy, target_met=met,
    )
    return cfg, frontier
