"""Evidence accumulation and stopping rules against direct-summation oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachpred import accumulate as acc


def simplex_rows(seed, t, n_classes, bias_class=None, strength=0.0):
    """Random simplex rows, optionally biased toward one class."""
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 1.0, (t, n_classes))
    if bias_class is not None:
        logits[:, bias_class - 1] += strength
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def state_from(alpha, t=1):
    return acc.AccumulatorState(alpha=np.asarray(alpha, dtype=float), t=t)


class TestAccumulator:
    def test_first_step_sets_everything(self):
        state = acc.accumulate_step(acc.fresh_state(4), [1.0, 0.0, 0.0, 0.0])
        assert state.t == 1
        assert np.allclose(state.normalized, [1.0, 0.0, 0.0, 0.0])
        assert acc.sum_criterion(state) == pytest.approx(1.0, abs=1e-12)

    def test_two_uniform_steps_stay_uniform(self):
        state = acc.fresh_state(4)
        for _ in range(2):
            state = acc.accumulate_step(state, [0.25] * 4)
        assert np.allclose(state.normalized, 0.25)
        assert state.alpha.sum() == pytest.approx(2.0, abs=1e-12)

    def test_matches_direct_summation(self):
        rows = simplex_rows(0, 10, 4)
        state = acc.fresh_state(4)
        for row in rows:
            state = acc.accumulate_step(state, row)
        assert np.allclose(state.alpha, rows.sum(axis=0), atol=1e-12)
        oracle = rows.sum(axis=0) / rows.sum()
        assert np.allclose(state.normalized, oracle, atol=1e-12)

    def test_evidence_sums_never_decrease(self):
        rows = simplex_rows(1, 25, 5)
        state = acc.fresh_state(5)
        for row in rows:
            nxt = acc.accumulate_step(state, row)
            assert np.all(nxt.alpha >= state.alpha - 1e-15)
            state = nxt

    def test_off_simplex_rejected(self):
        state = acc.fresh_state(3)
        with pytest.raises(ValueError, match="simplex"):
            acc.accumulate_step(state, [0.5, 0.2, 0.2])
        with pytest.raises(ValueError, match="non-negative"):
            acc.accumulate_step(state, [1.2, -0.1, -0.1])
        with pytest.raises(ValueError, match="dimension"):
            acc.accumulate_step(state, [0.5, 0.5])

    def test_raw_density_mode(self):
        state = acc.fresh_state(3)
        state = acc.accumulate_step(state, [0.2, 0.1, 0.1], simplex=False)
        assert acc.sum_criterion(state) == pytest.approx(0.4)
        assert state.t == 1

    def test_state_validation(self):
        with pytest.raises(ValueError, match="precede"):
            acc.AccumulatorState(alpha=np.ones(3), t=0)
        with pytest.raises(ValueError, match="zero"):
            acc.AccumulatorState(alpha=np.zeros(3), t=2)
        with pytest.raises(ValueError, match="no evidence"):
            _ = acc.fresh_state(3).normalized


class TestPrediction:
    def test_argmax_share_wins(self):
        assert acc.current_prediction(state_from([0.1, 0.6, 0.2, 0.1])) == 2

    def test_tie_goes_to_lowest_class(self):
        assert acc.current_prediction(state_from([0.25] * 4)) == 1

    def test_needs_evidence(self):
        with pytest.raises(ValueError, match="no evidence"):
            acc.current_prediction(acc.fresh_state(4))

    def test_invariant_to_positive_rescaling(self):
        alpha = np.array([0.2, 0.5, 0.3])
        assert acc.current_prediction(state_from(alpha)) == \
            acc.current_prediction(state_from(3.7 * alpha))


class TestRatioCriterion:
    def test_uniform_gives_zero(self):
        assert acc.ratio_criterion(state_from([0.25] * 4)) == 0.0

    def test_pure_evidence_gives_one(self):
        assert acc.ratio_criterion(state_from([1.0, 0.0, 0.0, 0.0])) == 1.0

    def test_hand_arithmetic(self):
        value = acc.ratio_criterion(state_from([0.5, 0.25, 0.15, 0.10]))
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_preconditions(self):
        with pytest.raises(ValueError, match="no evidence"):
            acc.ratio_criterion(acc.fresh_state(4))
        with pytest.raises(ValueError, match="two classes"):
            acc.ratio_criterion(state_from([1.0]))


class TestSumCriterion:
    def test_fresh_state_is_zero(self):
        assert acc.sum_criterion(acc.fresh_state(4)) == 0.0

    def test_counts_samples_exactly(self):
        rows = simplex_rows(2, 50, 4)
        state = acc.fresh_state(4)
        for step, row in enumerate(rows, start=1):
            state = acc.accumulate_step(state, row)
            assert acc.sum_criterion(state) == pytest.approx(step, abs=1e-9)

    def test_matches_independent_resum(self):
        rows = simplex_rows(3, 50, 3)
        state = acc.fresh_state(3)
        for row in rows:
            state = acc.accumulate_step(state, row)
        assert acc.sum_criterion(state) == pytest.approx(float(rows.sum()), abs=1e-12)


class TestShouldStop:
    def test_ratio_criterion_fires(self):
        cfg = acc.StoppingConfig(th_r=0.95, th_s=1000.0)
        decision = acc.should_stop(state_from([0.98, 0.01, 0.005, 0.005]), cfg)
        assert decision.action == acc.STOP and decision.prediction == 1

    def test_sum_criterion_fires_on_sample_budget(self):
        cfg = acc.StoppingConfig(th_r=0.95, th_s=95.0)
        rho = np.full((96, 4), 0.25)
        outcome, pred, t = acc.replay_trial(rho, cfg)
        assert (outcome, pred, t) == (acc.STOP, 1, 96)

    def test_timeout_aborts(self):
        cfg = acc.StoppingConfig(th_r=0.999, th_s=1000.0, timeout=50)
        rho = np.tile([[0.6, 0.4], [0.4, 0.6]], (30, 1))
        outcome, pred, t = acc.replay_trial(rho, cfg)
        assert (outcome, pred, t) == (acc.ABORT, None, 51)

    def test_low_evidence_continues(self):
        cfg = acc.StoppingConfig(th_r=0.9, th_s=10.0)
        decision = acc.should_stop(state_from([0.3, 0.3, 0.2, 0.2]), cfg)
        assert decision.action == acc.CONTINUE and decision.prediction is None

    def test_stop_checked_before_abort(self):
        cfg = acc.StoppingConfig(th_r=0.99, th_s=10.0, timeout=10)
        rho = np.full((20, 4), 0.25)
        outcome, _, t = acc.replay_trial(rho, cfg)
        assert (outcome, t) == (acc.STOP, 11)

    def test_trace_end_forces_final_prediction(self):
        cfg = acc.StoppingConfig(th_r=0.999, th_s=1000.0)
        rho = simplex_rows(4, 30, 4, bias_class=3, strength=2.0)
        outcome, pred, t = acc.replay_trial(rho, cfg)
        assert (outcome, t) == ("end", 30)
        assert pred == 3

    def test_config_validation(self):
        with pytest.raises(ValueError, match="ratio"):
            acc.StoppingConfig(th_r=1.0, th_s=5.0)
        with pytest.raises(ValueError, match="sum"):
            acc.StoppingConfig(th_r=0.5, th_s=0.0)
        with pytest.raises(ValueError, match="timeout"):
            acc.StoppingConfig(th_r=0.5, th_s=5.0, timeout=0)


class TestStratifiedKfold:
    def test_balanced_trials_split_evenly(self):
        labels = np.repeat([1, 2, 3, 4], 20)
        folds = acc.stratified_kfold(labels, k=5, seed=0)
        assert len(folds) == 5
        for fold in folds:
            assert fold.size == 16
            counts = np.bincount(labels[fold], minlength=5)[1:]
            assert np.all(counts == 4)

    def test_folds_partition_the_trials(self):
        labels = np.repeat([1, 2, 3], [21, 13, 17])
        folds = acc.stratified_kfold(labels, k=4, seed=1)
        joined = np.concatenate(folds)
        assert np.array_equal(np.sort(joined), np.arange(labels.size))

    def test_proportions_within_one_trial(self):
        labels = np.repeat([1, 2], [23, 11])
        folds = acc.stratified_kfold(labels, k=5, seed=2)
        for cl in (1, 2):
            counts = [int(np.sum(labels[f] == cl)) for f in folds]
            assert max(counts) - min(counts) <= 1

    def test_single_fold_is_everything(self):
        labels = np.repeat([1, 2], 6)
        folds = acc.stratified_kfold(labels, k=1, seed=3)
        assert len(folds) == 1
        assert np.array_equal(folds[0], np.arange(12))

    def test_seed_determinism(self):
        labels = np.repeat([1, 2, 3, 4], 20)
        a = acc.stratified_kfold(labels, k=5, seed=9)
        b = acc.stratified_kfold(labels, k=5, seed=9)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
        c = acc.stratified_kfold(labels, k=5, seed=10)
        assert not all(np.array_equal(u, v) for u, v in zip(a, c))

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer trials"):
            acc.stratified_kfold(np.repeat([1, 2], [20, 4]), k=5)


def biased_trials(seed, n_trials, n_classes=4, length=100, strength=1.2, fs=100.0):
    rng = np.random.default_rng(seed)
    trials = []
    for i in range(n_trials):
        label = int(rng.integers(1, n_classes + 1))
        rho = simplex_rows(seed * 1000 + i, length, n_classes,
                           bias_class=label, strength=strength)
        trials.append(acc.TrialEvidence(label=label, rho=rho, fs=fs))
    return trials


class TestGridSearch:
    def test_degenerate_grid_returns_its_cell(self):
        trials = biased_trials(0, 10)
        cfg, frontier = acc.grid_search(trials, th_r_grid=(0.8,), th_s_grid=(40.0,),
                                        target_accuracy=0.0)
        assert (cfg.th_r, cfg.th_s) == (0.8, 40.0)
        assert len(frontier) == 1

    def test_selected_cell_meets_target_on_clean_evidence(self):
        trials = biased_trials(1, 40, strength=1.5)
        cfg, frontier = acc.grid_search(trials, target_accuracy=0.95)
        assert cfg.target_met
        row = next(r for r in frontier
                   if r["th_r"] == cfg.th_r and r["th_s"] == cfg.th_s)
        assert row["mean_accuracy"] >= 0.95
        # the full grid is reported, including the coarse reference cell
        assert len(frontier) == len(acc.DEFAULT_TH_R_GRID) * len(acc.DEFAULT_TH_S_GRID)
        assert any(r["th_r"] == 0.95 and r["th_s"] == 95.0 for r in frontier)

    def test_grid_cells_match_sequential_replay(self):
        trials = biased_trials(2, 12, length=60)
        th_r_grid, th_s_grid = (0.6, 0.9), (10.0, 30.0, 55.0)
        _, frontier = acc.grid_search(trials, th_r_grid, th_s_grid, timeout=45)
        for row in frontier:
            cfg = acc.StoppingConfig(th_r=row["th_r"], th_s=row["th_s"], timeout=45)
            times, correct = [], []
            for trial in trials:
                outcome, pred, t = acc.replay_trial(trial.rho, cfg, fs=trial.fs)
                times.append(t / trial.fs)
                correct.append(outcome != acc.ABORT and pred == trial.label)
            assert row["mean_time_s"] == pytest.approx(np.mean(times), abs=1e-12)
            assert row["mean_accuracy"] == pytest.approx(np.mean(correct), abs=1e-12)

    def test_mean_stop_time_monotone_in_both_thresholds(self):
        trials = biased_trials(3, 15, strength=0.8)
        _, frontier = acc.grid_search(trials)
        by_rs = {(r["th_r"], r["th_s"]): r["mean_time_s"] for r in frontier}
        for th_r in acc.DEFAULT_TH_R_GRID:
            times = [by_rs[(th_r, th_s)] for th_s in acc.DEFAULT_TH_S_GRID]
            assert np.all(np.diff(times) >= -1e-12)
        for th_s in acc.DEFAULT_TH_S_GRID:
            times = [by_rs[(th_r, th_s)] for th_r in acc.DEFAULT_TH_R_GRID]
            assert np.all(np.diff(times) >= -1e-12)

    def test_tie_prefers_stricter_ratio_then_smaller_budget(self):
        rho = np.zeros((30, 4))
        rho[:, 0] = 1.0
        trials = [acc.TrialEvidence(label=1, rho=rho)]
        cfg, _ = acc.grid_search(trials)
        assert cfg.th_r == 0.99
        assert cfg.th_s == 5.0

    def test_unreachable_target_flags_config(self):
        rng = np.random.default_rng(7)
        trials = []
        for i in range(20):
            rho = simplex_rows(500 + i, 80, 4)
            trials.append(acc.TrialEvidence(label=int(rng.integers(1, 5)), rho=rho))
        with pytest.warns(UserWarning, match="target"):
            cfg, frontier = acc.grid_search(trials, target_accuracy=0.95)
        assert not cfg.target_met
        best = max(r["mean_accuracy"] for r in frontier)
        row = next(r for r in frontier
                   if r["th_r"] == cfg.th_r and r["th_s"] == cfg.th_s)
        assert row["mean_accuracy"] == best

    def test_replay_is_repeatable(self):
        trial = biased_trials(4, 1)[0]
        cfg = acc.StoppingConfig(th_r=0.9, th_s=60.0)
        first = acc.replay_trial(trial.rho, cfg)
        second = acc.replay_trial(trial.rho, cfg)
        assert first == second

    def test_evidence_rows_validated(self):
        with pytest.raises(ValueError, match="simplex"):
            acc.TrialEvidence(label=1, rho=np.full((5, 4), 0.3))
        with pytest.raises(ValueError, match="label"):
            acc.TrialEvidence(label=5, rho=np.full((5, 4), 0.25))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(2, 6))
def test_sum_criterion_counts_steps(seed, t, n_classes):
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(n_classes), size=t)
    state = acc.fresh_state(n_classes)
    for row in rows:
        state = acc.accumulate_step(state, row)
    assert acc.sum_criterion(state) == pytest.approx(t, abs=1e-9)
    assert state.t == t


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_stopping_monotone_in_ratio_evidence(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 50))
    a = state_from(t * rng.dirichlet(np.ones(4)), t=t)
    b = state_from(t * rng.dirichlet(np.ones(4)), t=t)
    if acc.ratio_criterion(a) > acc.ratio_criterion(b):
        a, b = b, a
    cfg = acc.StoppingConfig(
        th_r=float(rng.uniform(0.0, 0.99)), th_s=float(rng.uniform(1.0, 60.0))
    )
    if acc.should_stop(a, cfg).action == acc.STOP:
        assert acc.should_stop(b, cfg).action == acc.STOP
