import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errexplain.config import ModelConfig, TrainConfig
from errexplain.dataset import annotate, assign_groups, build_vocab, make_folds
from errexplain.errors import UsageError
from errexplain.phrases import CLASSES
from errexplain.pipeline import (
    Prediction,
    ResponseRecord,
    build_report,
    predict_class,
    read_responses,
    run_summary,
    study_metrics,
    train_all_folds,
    train_fold,
)
from errexplain.world import FAILING_SCENARIOS, EpisodeConfig, run_episode


def tiny_dataset(per_scenario=2, n_folds=3):
    per_episode = []
    for scenario in FAILING_SCENARIOS:
        for j in range(per_scenario):
            episode_id = f"{scenario.value}-{j}"
            episode = run_episode(
                EpisodeConfig(seed=j, object="cup", goal_place="dining table", scenario=scenario)
            )
            per_episode.append(
                (episode_id, scenario.value, annotate(episode, "cb", episode_id=episode_id))
            )
    return assign_groups(per_episode, "episode", n_folds)


SMALL_MODEL = ModelConfig(
    encoder_hidden=6, entity_embed=6, object_embed=4, word_embed=6, attention_dim=4
)


class TestPredictClass:
    def test_cb_occluded(self):
        phrase = "could not detect the desired object because the desired object is occluded"
        assert predict_class(phrase) == "occluded"

    def test_success_phrase(self):
        assert predict_class("robot has segmented objects in the scene") == "correct"

    def test_one_word_off_is_malformed(self):
        assert predict_class("robot has segmented object in the scene") == "malformed"


class TestBuildReport:
    def test_perfect_predictor_is_diagonal(self):
        preds = [Prediction(c, c, True) for c in CLASSES for _ in range(3)]
        report = build_report(preds)
        assert report.accuracy == 1.0
        assert report.exact_match_accuracy == 1.0
        for i in range(7):
            assert report.matrix[i][i] == 3
            assert sum(report.matrix[i]) == 3
        assert report.malformed_count == 0

    def test_constant_correct_predictor(self):
        preds = [Prediction("too_far", "correct", False) for _ in range(3)]
        preds += [Prediction("correct", "correct", True) for _ in range(7)]
        report = build_report(preds)
        assert report.accuracy == pytest.approx(0.7)
        assert report.per_class["too_far"]["recall"] == 0.0

    def test_malformed_counts_against_true_class(self):
        preds = [
            Prediction("occluded", "occluded", True),
            Prediction("occluded", "malformed", False),
        ]
        report = build_report(preds)
        assert report.malformed_count == 1
        assert sum(report.matrix[3]) == 1  # only the well-formed prediction
        assert report.per_class["occluded"]["support"] == 2
        assert report.per_class["occluded"]["recall"] == 0.5
        assert report.accuracy == 0.5

    def test_row_sums_match_wellformed_supports(self):
        rng = np.random.default_rng(0)
        preds = []
        for _ in range(200):
            true = CLASSES[rng.integers(0, 7)]
            pred = CLASSES[rng.integers(0, 7)] if rng.random() > 0.1 else "malformed"
            preds.append(Prediction(true, pred, pred == true))
        report = build_report(preds)
        total = sum(sum(row) for row in report.matrix)
        assert total + report.malformed_count == 200
        trace = sum(report.matrix[i][i] for i in range(7))
        assert report.accuracy == trace / 200

    def test_within_type_sibling_bookkeeping(self):
        preds = [
            Prediction("too_far", "close_together", False),
            Prediction("not_present", "occluded", False),
            Prediction("occluded", "correct", False),
            Prediction("mislocalized", "controller", False),  # navigation: not tracked
        ]
        report = build_report(preds)
        assert report.n_failing == 4
        assert report.n_failing_misclassified == 4
        assert report.within_type_misclassified == 3
        assert report.within_type_sibling == 2

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            build_report([])

    def test_render_mentions_all_classes(self):
        preds = [Prediction(c, c, True) for c in CLASSES]
        text = build_report(preds).render()
        for c in CLASSES:
            assert c in text


class TestTrainFold:
    def test_patience_zero_stops_at_first_non_improvement(self):
        # a large step size makes the validation loss fluctuate quickly
        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        cfg = TrainConfig(learning_rate=0.05, max_epochs=200, patience=0, batch_size=8)
        result = train_fold(plan.folds[0], examples, vocab, SMALL_MODEL, cfg, master_seed=1)
        assert result.run.stop_reason == "early_stop"
        assert result.run.stopped_epoch < 200
        # stopped exactly at the first epoch whose val loss did not improve
        run = result.run
        best_so_far = float("inf")
        for epoch, v in enumerate(run.val_losses, start=1):
            if v >= best_so_far:
                assert epoch == run.stopped_epoch
                break
            best_so_far = v

    def test_histories_are_deterministic(self):
        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        cfg = TrainConfig(max_epochs=5, batch_size=8)
        a = train_fold(plan.folds[1], examples, vocab, SMALL_MODEL, cfg, master_seed=2)
        b = train_fold(plan.folds[1], examples, vocab, SMALL_MODEL, cfg, master_seed=2)
        assert a.run.train_losses == b.run.train_losses
        assert a.run.val_losses == b.run.val_losses
        np.testing.assert_array_equal(a.params.out_w, b.params.out_w)

    def test_best_epoch_minimizes_validation_loss(self):
        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        cfg = TrainConfig(max_epochs=12, patience=20, batch_size=8)
        result = train_fold(plan.folds[0], examples, vocab, SMALL_MODEL, cfg, master_seed=3)
        run = result.run
        best = run.val_losses[run.best_epoch - 1]
        assert all(best <= v for v in run.val_losses[: run.best_epoch - 1])

    def test_scaler_fitted_on_training_groups_only(self):
        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        cfg = TrainConfig(max_epochs=1, batch_size=8)
        result = train_fold(plan.folds[0], examples, vocab, SMALL_MODEL, cfg, master_seed=4)
        from errexplain.features import FeatureScaler
        from errexplain.pipeline import encode_example

        train_inputs = [
            encode_example(ex, vocab)[0]
            for ex in examples
            if ex.group in plan.folds[0].train_groups
        ]
        expected = FeatureScaler.fit(train_inputs)
        np.testing.assert_array_equal(result.scaler.mean, expected.mean)
        np.testing.assert_array_equal(result.scaler.std, expected.std)

    def test_parallel_fold_training_matches_serial(self):
        from errexplain.config import RunConfig

        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        base = RunConfig(
            seed=5,
            model=SMALL_MODEL,
            train=TrainConfig(max_epochs=2, batch_size=8, threads=1),
        )
        serial = train_all_folds(plan, examples, vocab, base)
        parallel = train_all_folds(
            plan, examples, vocab,
            RunConfig(seed=5, model=SMALL_MODEL,
                      train=TrainConfig(max_epochs=2, batch_size=8, threads=3)),
        )
        for a, b in zip(serial, parallel):
            assert a.run.val_losses == b.run.val_losses
            np.testing.assert_array_equal(a.params.out_w, b.params.out_w)


class TestRunSummary:
    def test_median_best_epoch(self):
        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        cfg = TrainConfig(max_epochs=3, batch_size=8)
        results = [
            train_fold(f, examples, vocab, SMALL_MODEL, cfg, master_seed=6)
            for f in plan.folds
        ]
        summary = run_summary(results)
        assert len(summary["folds"]) == len(plan.folds)
        assert 1 <= summary["median_best_epoch"] <= 3


class TestStudyMetrics:
    def test_nine_of_twelve_solutions(self):
        records = [
            ResponseRecord("p1", str(i), action_correct=True, solution_correct=i < 9)
            for i in range(12)
        ]
        metrics = study_metrics(records)
        assert metrics["pooled"]["sol_pct"] == 0.75
        assert metrics["pooled"]["aid_pct"] == 1.0
        assert metrics["per_participant"]["p1"]["sol_pct"] == 0.75

    def test_all_correct_actions(self):
        records = [
            ResponseRecord("p1", "1", True, False),
            ResponseRecord("p2", "1", True, True),
        ]
        metrics = study_metrics(records)
        assert metrics["pooled"]["aid_pct"] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            study_metrics([])

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
    @settings(max_examples=50, deadline=None)
    def test_pooled_ratios_are_means(self, flags):
        records = [
            ResponseRecord("p", str(i), action_correct=a, solution_correct=s)
            for i, (a, s) in enumerate(flags)
        ]
        metrics = study_metrics(records)
        assert metrics["pooled"]["sol_pct"] == pytest.approx(
            sum(s for _, s in flags) / len(flags)
        )
        assert metrics["pooled"]["aid_pct"] == pytest.approx(
            sum(a for a, _ in flags) / len(flags)
        )

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text(
            "participant,trial,action_correct,solution_correct\n"
            "p1,t1,1,1\np1,t2,true,0\np2,t1,no,yes\n"
        )
        records = read_responses(str(path))
        assert len(records) == 3
        assert records[1].action_correct is True
        assert records[1].solution_correct is False
        assert records[2].action_correct is False

    def test_csv_bad_header_rejected(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(UsageError):
            read_responses(str(path))

    def test_csv_bad_boolean_rejected(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text(
            "participant,trial,action_correct,solution_correct\np1,t1,maybe,1\n"
        )
        with pytest.raises(UsageError):
            read_responses(str(path))


class TestAttendToInitVariant:
    def test_variant_trains_and_decodes(self):
        from errexplain.model import greedy_decode, pack
        from errexplain.pipeline import encode_example

        examples = tiny_dataset()
        vocab = build_vocab(examples)
        plan = make_folds(examples)
        model_cfg = ModelConfig(
            encoder_hidden=6, entity_embed=6, object_embed=4, word_embed=6,
            attention_dim=4, attend_to_init=True,
        )
        cfg = TrainConfig(max_epochs=2, batch_size=8)
        result = train_fold(plan.folds[0], examples, vocab, model_cfg, cfg, master_seed=7)
        assert result.params.attn_k0 is not None
        inputs, _ = encode_example(examples[0], vocab)
        phrase = greedy_decode(
            result.scaler.transform(inputs), result.params, vocab.tokens, 24
        )
        assert isinstance(phrase, str)
