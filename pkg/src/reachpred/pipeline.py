"""From a labelled session to a deployable model bundle.

Training fits the two prediction threads (rest/motion HMM on the velocity
observable, reducer + per-class mixtures on the 28-channel frames), tunes
the stopping thresholds by stratified cross-validation over trials, and
derives the controller debounce counts from the ground-truth segment
lengths.  Evaluation reproduces the accuracy-over-trajectory curves and
the threshold frontier on held-out folds only.
"""

from dataclasses import replace

import numpy as np

from . import accumulate, dsp, intention, mixture, reduce
from .accumulate import StoppingConfig, TrialEvidence
from .fsm import FsmConfig, derive_config
from .store import ModelBundle

EVAL_FRACTIONS = tuple(np.round(np.arange(1, 11) * 0.1, 1))


def truth_segments(truth, n):
    """Alternating rest/motion intervals reconstructed from trial truth."""
    trials = sorted(truth.trials, key=lambda tr: tr.fwd_onset)
    if not trials:
        raise ValueError("ground truth holds no trials")
    segments = []
    cursor = 0
    for tr in trials:
        for onset, offset, role in ((tr.fwd_onset, tr.fwd_offset, "forward"),
                                    (tr.bwd_onset, tr.bwd_offset, "backward")):
            if onset < cursor or offset <= onset or offset > n:
                raise ValueError("trial intervals must be ordered and in range")
            if onset > cursor:
                segments.append(dsp.SegmentInterval(cursor, onset, dsp.REST))
            segments.append(dsp.SegmentInterval(
                onset, offset, dsp.MOTION, motion_role=role,
                direction=tr.direction if role == "forward" else None))
            cursor = offset
    if cursor < n:
        segments.append(dsp.SegmentInterval(cursor, n, dsp.REST))
    return segments


def forward_trials(session, truth):
    """Per-trial (label, (T, 28) frames) for every forward reach."""
    channels = session.channels()
    out = []
    for tr in sorted(truth.trials, key=lambda t: t.fwd_onset):
        out.append((tr.direction, channels[tr.fwd_onset:tr.fwd_offset]))
    if not out:
        raise ValueError("ground truth holds no trials")
    return out


def train_intention(session, tol=1e-3, max_iter=50):
    """Fit the rest/motion HMM on the session's velocity observable.

    The observable is filtered causally, exactly as the live engine
    computes it, so the emission model is trained on the features it will
    be served; the zero-phase trace would rest at a different baseline.
    """
    x = dsp.velocity_magnitude_causal(session.gyro_arm, session.gyro_forearm,
                                      session.fs)
    return intention.baum_welch([x], tol=tol, max_iter=max_iter)


def fit_direction(frames, labels, variant="fda", seed=0,
                  k_candidates=(1, 2, 3, 4, 5)):
    """Reducer plus per-class mixtures on pooled forward-motion frames."""
    reducer = reduce.fit_variant(variant, frames, labels=labels, seed=seed)
    features = reduce.transform(reducer, frames)
    model = mixture.fit_direction_model(features, labels,
                                        k_candidates=k_candidates, seed=seed)
    return reducer, model


def trial_evidence(reducer, model, frames, label, fs):
    """Per-sample class evidence for one reach through a trained model."""
    features = reduce.transform(reducer, frames)
    rho = mixture.normalize_over_classes(mixture.class_log_pdf(model, features))
    return TrialEvidence(label=label, rho=rho, fs=fs)


def cv_evidence(session, truth, variant="fda", n_folds=5, seed=0,
                k_candidates=(1, 2, 3, 4, 5)):
    """Out-of-fold evidence traces for every trial.

    Each fold's reducer and mixtures are fit on the remaining folds only,
    so the returned traces are valid held-out material for threshold
    tuning and accuracy curves.  Trials keep their session order.
    """
    trials = forward_trials(session, truth)
    labels = np.array([label for label, _ in trials])
    folds = accumulate.stratified_kfold(labels, k=n_folds, seed=seed)
    evidence = [None] * len(trials)
    for test_idx in folds:
        test = set(int(i) for i in test_idx)
        train_frames = np.vstack([f for i, (_, f) in enumerate(trials)
                                  if i not in test])
        train_labels = np.concatenate([
            np.full(len(f), label) for i, (label, f) in enumerate(trials)
            if i not in test])
        reducer, model = fit_direction(train_frames, train_labels,
                                       variant=variant, seed=seed,
                                       k_candidates=k_candidates)
        for i in test:
            label, frames = trials[i]
            evidence[i] = trial_evidence(reducer, model, frames, label,
                                         session.fs)
    return evidence


def prediction_at_fraction(rho, fraction):
    """Accumulated argmax after the leading `fraction` of a trace."""
    t_q = max(1, int(round(fraction * rho.shape[0])))
    alpha = rho[:t_q].sum(axis=0)
    return int(np.argmax(alpha)) + 1


def accuracy_curve(evidence, fractions=EVAL_FRACTIONS):
    """Held-out accuracy at each trajectory fraction."""
    fractions = np.asarray(fractions, dtype=float)
    correct = np.zeros((len(evidence), fractions.size))
    for i, trial in enumerate(evidence):
        for j, q in enumerate(fractions):
            correct[i, j] = prediction_at_fraction(trial.rho, q) == trial.label
    return correct.mean(axis=0)


def offline_accuracy_at(session, truth, variant="fda", fraction=0.30,
                        n_folds=5, seed=0, k_candidates=(1, 2, 3, 4, 5)):
    """Cross-validated accuracy after the first `fraction` of each reach."""
    evidence = cv_evidence(session, truth, variant=variant, n_folds=n_folds,
                           seed=seed, k_candidates=k_candidates)
    return float(accuracy_curve(evidence, fractions=(fraction,))[0])


def eval_curves(session, truth, variants=reduce.VARIANTS,
                fractions=EVAL_FRACTIONS, n_folds=5, seed=0,
                k_candidates=(1, 2, 3, 4, 5)):
    """Accuracy-over-trajectory table for each reducer variant."""
    out = {}
    for variant in variants:
        evidence = cv_evidence(session, truth, variant=variant,
                               n_folds=n_folds, seed=seed,
                               k_candidates=k_candidates)
        out[variant] = accuracy_curve(evidence, fractions=fractions)
    return {"fractions": np.asarray(fractions, dtype=float), "accuracy": out}


def stopping_timeout(truth, multiple=2.0, percentile=90.0):
    """Abort horizon in samples: a multiple of the long end of reach lengths."""
    durations = [tr.fwd_offset - tr.fwd_onset for tr in truth.trials]
    if not durations:
        raise ValueError("ground truth holds no trials")
    return float(multiple * np.percentile(durations, percentile))


def tune_stopping(session, truth, variant="fda", target_accuracy=0.95,
                  n_folds=5, seed=0, th_r_grid=None, th_s_grid=None,
                  k_candidates=(1, 2, 3, 4, 5), evidence=None):
    """Grid-search stopping thresholds on out-of-fold evidence."""
    if evidence is None:
        evidence = cv_evidence(session, truth, variant=variant,
                               n_folds=n_folds, seed=seed,
                               k_candidates=k_candidates)
    timeout = stopping_timeout(truth)
    kwargs = {"target_accuracy": target_accuracy, "timeout": timeout}
    if th_r_grid is not None:
        kwargs["th_r_grid"] = th_r_grid
    if th_s_grid is not None:
        kwargs["th_s_grid"] = th_s_grid
    return accumulate.grid_search(evidence, **kwargs)


def fit_bundle(session, truth, variant="fda", seed=0, target_accuracy=0.95,
               n_folds=5, k_candidates=(1, 2, 3, 4, 5), th_r_grid=None,
               th_s_grid=None, fraction_x=0.25, fraction_y=2.0,
               provenance=None):
    """Train every component and assemble a deployable bundle.

    Thresholds are tuned on held-out folds; the shipped reducer and
    mixtures are refit on all trials.  Returns (bundle, frontier).
    """
    hmm = train_intention(session)

    trials = forward_trials(session, truth)
    frames = np.vstack([f for _, f in trials])
    labels = np.concatenate([np.full(len(f), label) for label, f in trials])
    reducer, model = fit_direction(frames, labels, variant=variant, seed=seed,
                                   k_candidates=k_candidates)

    stopping, frontier = tune_stopping(
        session, truth, variant=variant, target_accuracy=target_accuracy,
        n_folds=n_folds, seed=seed, th_r_grid=th_r_grid, th_s_grid=th_s_grid,
        k_candidates=k_candidates)
    model = replace(model, th_r=stopping.th_r, th_s=stopping.th_s)

    fsm_cfg = derive_config(truth_segments(truth, len(session)),
                            fraction_x=fraction_x, fraction_y=fraction_y)

    meta = {
        "variant": variant,
        "seed": seed,
        "n_classes": model.n_classes,
        "n_trials": len(trials),
        "fs": session.fs,
        "target_accuracy": target_accuracy,
        "timeout_samples": stopping.timeout,
    }
    if provenance:
        meta.update(provenance)

    bundle = ModelBundle(hmm=hmm, reducer=reducer, direction=model,
                         stopping=stopping, fsm=fsm_cfg, provenance=meta)
    return bundle, frontier
