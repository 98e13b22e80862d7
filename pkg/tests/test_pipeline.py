"""Training orchestration: segments from truth, CV evidence, bundle assembly."""

import numpy as np
import pytest

from reachpred import pipeline
from reachpred.accumulate import TrialEvidence
from reachpred.data import GroundTruth, TrialTruth
from reachpred.dsp import MOTION, REST
from reachpred.intention import filter_sequence
from reachpred.store import bundles_equal, load_bundle, save_bundle
from reachpred.synth import SynthConfig, gen_session


@pytest.fixture(scope="module")
def small_session():
    session, truth = gen_session(SynthConfig(reps=5, seed=11))
    return session, truth


@pytest.fixture(scope="module")
def small_evidence(small_session):
    session, truth = small_session
    return pipeline.cv_evidence(session, truth, variant="fda", seed=3)


def toy_truth():
    return GroundTruth(trials=[
        TrialTruth(0, 2, 100, 220, 300, 420),
        TrialTruth(1, 1, 600, 700, 820, 940),
    ])


class TestTruthSegments:
    def test_alternating_cover(self):
        segments = pipeline.truth_segments(toy_truth(), 1000)
        assert segments[0].start == 0 and segments[-1].end == 1000
        for a, b in zip(segments, segments[1:]):
            assert a.end == b.start
        states = [s.state for s in segments]
        assert states == [REST, MOTION, REST, MOTION,
                          REST, MOTION, REST, MOTION, REST]

    def test_roles_and_directions(self):
        segments = pipeline.truth_segments(toy_truth(), 1000)
        motion = [s for s in segments if s.state == MOTION]
        assert [s.motion_role for s in motion] == ["forward", "backward"] * 2
        assert [s.direction for s in motion] == [2, None, 1, None]

    def test_out_of_range_rejected(self):
        truth = GroundTruth(trials=[TrialTruth(0, 1, 100, 220, 300, 420)])
        with pytest.raises(ValueError):
            pipeline.truth_segments(truth, 400)
        with pytest.raises(ValueError):
            pipeline.truth_segments(GroundTruth(), 400)

    def test_matches_generator_state_column(self, small_session):
        session, truth = small_session
        segments = pipeline.truth_segments(truth, len(session))
        rebuilt = np.zeros(len(session), dtype=int)
        for s in segments:
            if s.state == MOTION:
                rebuilt[s.start:s.end] = 1
        assert np.array_equal(rebuilt, session.state)


class TestForwardTrials:
    def test_frames_are_exact_slices(self, small_session):
        session, truth = small_session
        trials = pipeline.forward_trials(session, truth)
        assert len(trials) == len(truth)
        channels = session.channels()
        tr = truth.trials[3]
        label, frames = trials[3]
        assert label == tr.direction
        assert np.array_equal(frames, channels[tr.fwd_onset:tr.fwd_offset])


class TestIntentionTraining:
    def test_trained_filter_tracks_truth(self, small_session):
        session, truth = small_session
        model = pipeline.train_intention(session)
        assert model.means[0] < model.means[1]
        from reachpred.dsp import velocity_magnitude_causal
        x = velocity_magnitude_causal(session.gyro_arm, session.gyro_forearm,
                                      session.fs)
        posteriors, _ = filter_sequence(model, x)
        predicted = (posteriors[:, 1] > posteriors[:, 0]).astype(int)
        agreement = np.mean(predicted == session.state)
        assert agreement > 0.9


class TestCvEvidence:
    def test_one_trace_per_trial_in_order(self, small_session, small_evidence):
        session, truth = small_session
        assert len(small_evidence) == len(truth)
        for trial, tr in zip(small_evidence, truth.trials):
            assert isinstance(trial, TrialEvidence)
            assert trial.label == tr.direction
            assert trial.rho.shape == (tr.fwd_offset - tr.fwd_onset, 4)
            assert np.allclose(trial.rho.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic(self, small_session, small_evidence):
        session, truth = small_session
        again = pipeline.cv_evidence(session, truth, variant="fda", seed=3)
        for a, b in zip(small_evidence, again):
            assert np.array_equal(a.rho, b.rho)


class TestPredictions:
    def test_prediction_at_fraction_uses_leading_window(self):
        rho = np.zeros((10, 3))
        rho[:4, 0] = 1.0    # leading 40% favors class 1
        rho[4:, 2] = 1.0    # the rest favors class 3
        assert pipeline.prediction_at_fraction(rho, 0.4) == 1
        assert pipeline.prediction_at_fraction(rho, 1.0) == 3
        assert pipeline.prediction_at_fraction(rho, 0.01) == 1

    def test_accuracy_curve_counts_matches(self):
        right = TrialEvidence(label=1, rho=np.tile([0.9, 0.1], (10, 1)))
        wrong = TrialEvidence(label=2, rho=np.tile([0.9, 0.1], (10, 1)))
        curve = pipeline.accuracy_curve([right, wrong], fractions=(0.5, 1.0))
        assert np.array_equal(curve, [0.5, 0.5])

    def test_offline_accuracy_matches_curve(self, small_session, small_evidence):
        session, truth = small_session
        acc = pipeline.offline_accuracy_at(session, truth, variant="fda",
                                           fraction=0.5, seed=3)
        assert acc == pipeline.accuracy_curve(small_evidence,
                                              fractions=(0.5,))[0]

    def test_eval_curves_shapes(self, small_session):
        session, truth = small_session
        out = pipeline.eval_curves(session, truth, variants=("fda",),
                                   fractions=(0.3, 0.8), seed=3)
        assert np.array_equal(out["fractions"], [0.3, 0.8])
        assert out["accuracy"]["fda"].shape == (2,)
        assert np.all(out["accuracy"]["fda"] >= 0.25)


class TestStoppingTimeout:
    def test_ninetieth_percentile_doubled(self):
        trials = [TrialTruth(i, 1, 0, 100, 200, 300) for i in range(9)]
        trials.append(TrialTruth(9, 1, 0, 200, 300, 400))
        horizon = pipeline.stopping_timeout(GroundTruth(trials=trials))
        assert horizon == pytest.approx(220.0)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            pipeline.stopping_timeout(GroundTruth())


class TestTuneStopping:
    def test_reuses_supplied_evidence(self, small_session, small_evidence):
        session, truth = small_session
        cfg, frontier = pipeline.tune_stopping(
            session, truth, target_accuracy=0.8,
            th_r_grid=(0.8, 0.95), th_s_grid=(10.0, 40.0),
            evidence=small_evidence)
        assert len(frontier) == 4
        assert cfg.th_r in (0.8, 0.95) and cfg.th_s in (10.0, 40.0)
        assert cfg.timeout == pipeline.stopping_timeout(truth)
        assert cfg.target_met


class TestFitBundle:
    def test_bundle_is_consistent_and_persistable(self, small_session, tmp_path):
        session, truth = small_session
        bundle, frontier = pipeline.fit_bundle(
            session, truth, variant="fda", seed=3, target_accuracy=0.8,
            th_r_grid=(0.8, 0.9, 0.95), th_s_grid=(10.0, 20.0, 40.0),
            provenance={"dataset_sha256": "00" * 32})
        assert bundle.reducer.variant == "fda"
        assert bundle.reducer.n_features == 3      # one less than the classes
        assert bundle.n_classes == 4
        assert bundle.direction.th_r == bundle.stopping.th_r
        assert bundle.direction.th_s == bundle.stopping.th_s
        assert bundle.fsm.x_debounce >= 1 and bundle.fsm.y_timeout >= 1
        # timeout doubles the long end of the observed reach lengths
        durations = [tr.fwd_offset - tr.fwd_onset for tr in truth.trials]
        assert bundle.stopping.timeout > max(durations)
        assert bundle.provenance["variant"] == "fda"
        assert bundle.provenance["dataset_sha256"] == "00" * 32
        assert len(frontier) == 9

        path = tmp_path / "bundle.json"
        save_bundle(bundle, path)
        assert bundles_equal(bundle, load_bundle(path))
