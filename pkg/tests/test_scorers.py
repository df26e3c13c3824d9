import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from fluorgen.dataset import Task, TaskDataset
from fluorgen.fingerprints import FEATURE_DIM, SOLVENT_DIM, SolventFeatures
from fluorgen.scorers import (
    Head,
    MlpModel,
    PropertyScorer,
    ScorerError,
    ScorerKind,
    TrainConfig,
    forward_batch,
    load_model,
    loss_and_grads,
    mae,
    mlp_forward,
    mlp_train,
    roc_auc,
    run_cv,
    save_model,
    score_property,
)
from fluorgen.smiles import parse_smiles

WATER = SolventFeatures(0.681, 0.997, 1.062, 0.025)


def make_model(input_dim=6, hidden=4, head=Head.LINEAR, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return MlpModel(
        w1=rng.normal(0, scale, (hidden, input_dim)),
        b1=rng.normal(0, scale, hidden),
        w2=rng.normal(0, scale, hidden),
        b2=float(rng.normal(0, scale)),
        head=head,
        norm_mean=np.zeros(SOLVENT_DIM),
        norm_std=np.ones(SOLVENT_DIM),
    )


def zero_model(input_dim=6, hidden=3, head=Head.SIGMOID, b2=0.0):
    return MlpModel(
        w1=np.zeros((hidden, input_dim)),
        b1=np.zeros(hidden),
        w2=np.zeros(hidden),
        b2=b2,
        head=head,
        norm_mean=np.zeros(SOLVENT_DIM),
        norm_std=np.ones(SOLVENT_DIM),
    )


def random_batch(n, input_dim, seed):
    rng = np.random.default_rng(seed)
    features = (rng.random((n, input_dim)) < 0.3).astype(float)
    features[:, -SOLVENT_DIM:] = rng.normal(0.5, 0.3, (n, SOLVENT_DIM))
    return features


class TestForward:
    def test_zero_weights_sigmoid_gives_half(self):
        model = zero_model()
        fv = np.ones(6)
        assert mlp_forward(model, fv) == pytest.approx(0.5)

    def test_zero_weights_linear_gives_bias(self):
        model = zero_model(head=Head.LINEAR, b2=450.0)
        assert mlp_forward(model, np.ones(6)) == pytest.approx(450.0)

    def test_single_path_arithmetic(self):
        model = zero_model(head=Head.LINEAR)
        model.w1[0, 0] = 1.0
        model.w2[0] = 1.0
        fv = np.zeros(6)
        fv[0] = 1.0
        assert mlp_forward(model, fv) == pytest.approx(1.0)

    def test_relu_blocks_negative_path(self):
        model = zero_model(head=Head.LINEAR)
        model.w1[0, 0] = -1.0
        model.w2[0] = 1.0
        fv = np.zeros(6)
        fv[0] = 1.0
        assert mlp_forward(model, fv) == pytest.approx(0.0)

    def test_sigmoid_output_in_unit_interval(self):
        model = make_model(head=Head.SIGMOID, scale=3.0)
        batch = random_batch(50, 6, seed=1)
        out = forward_batch(model, batch)
        assert np.all((out > 0) & (out < 1))

    def test_dimension_mismatch(self):
        model = make_model(input_dim=6)
        with pytest.raises(ScorerError, match="features"):
            mlp_forward(model, np.ones(7))

    def test_solvent_normalization_applied(self):
        model = zero_model(head=Head.LINEAR, hidden=1)
        model.w1[0, -1] = 1.0
        model.w2[0] = 1.0
        model.norm_mean[:] = [0, 0, 0, 2.0]
        model.norm_std[:] = [1, 1, 1, 4.0]
        fv = np.zeros(6)
        fv[-1] = 10.0
        assert mlp_forward(model, fv) == pytest.approx((10.0 - 2.0) / 4.0)


class TestGradients:
    def finite_difference(self, model, features, labels):
        eps = 1e-4
        grads = {}
        params = {"w1": model.w1, "b1": model.b1, "w2": model.w2}
        for name, arr in params.items():
            grad = np.zeros_like(arr)
            flat = arr.ravel()
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up, _ = loss_and_grads(model, features, labels)
                flat[i] = old - eps
                down, _ = loss_and_grads(model, features, labels)
                flat[i] = old
                grad.ravel()[i] = (up - down) / (2 * eps)
            grads[name] = grad
        old = model.b2
        model.b2 = old + eps
        up, _ = loss_and_grads(model, features, labels)
        model.b2 = old - eps
        down, _ = loss_and_grads(model, features, labels)
        model.b2 = old
        grads["b2"] = (up - down) / (2 * eps)
        return grads

    @pytest.mark.parametrize("head", [Head.SIGMOID, Head.LINEAR])
    def test_analytic_matches_finite_differences(self, head):
        model = make_model(input_dim=8, hidden=5, head=head, seed=3)
        features = random_batch(5, 8, seed=4)
        labels = (
            np.array([0, 1, 1, 0, 1], dtype=float)
            if head is Head.SIGMOID
            else np.array([0.2, -1.0, 0.7, 2.0, 0.0])
        )
        _, analytic = loss_and_grads(model, features, labels)
        numeric = self.finite_difference(model, features, labels)
        for key in ("w1", "b1", "w2", "b2"):
            a = np.asarray(analytic[key], dtype=float)
            f = np.asarray(numeric[key], dtype=float)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
            assert np.max(np.abs(a - f) / denom) < 1e-4

    def test_gradient_descends(self):
        model = make_model(input_dim=6, hidden=4, head=Head.LINEAR, seed=5)
        features = random_batch(20, 6, seed=6)
        labels = np.linspace(-1, 1, 20)
        loss0, grads = loss_and_grads(model, features, labels)
        for key, grad in grads.items():
            current = getattr(model, key)
            setattr(model, key, current - 0.01 * grad)
        loss1, _ = loss_and_grads(model, features, labels)
        assert loss1 < loss0


class TestTraining:
    def separable_set(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        features = (rng.random((n, 20)) < 0.2).astype(float)
        features[:, -SOLVENT_DIM:] = rng.normal(0, 1, (n, SOLVENT_DIM))
        labels = features[:, 0].copy()
        return features, labels

    def test_separable_classification_fits(self):
        features, labels = self.separable_set()
        config = TrainConfig(hidden_dim=16, epochs=80, learning_rate=0.3, seed=1)
        result = mlp_train(features, labels, Head.SIGMOID, config)
        auc = roc_auc(forward_batch(result.model, features), labels)
        assert auc >= 0.99

    def test_constant_regression_converges(self):
        rng = np.random.default_rng(2)
        features = (rng.random((40, 12)) < 0.3).astype(float)
        labels = np.full(40, 3.0)
        config = TrainConfig(hidden_dim=8, epochs=300, learning_rate=0.1, patience=300, seed=2)
        result = mlp_train(features, labels, Head.LINEAR, config)
        predictions = forward_batch(result.model, features)
        assert np.max(np.abs(predictions - 3.0)) < 1e-3

    def test_training_is_deterministic(self):
        features, labels = self.separable_set(n=60, seed=3)
        config = TrainConfig(hidden_dim=8, epochs=10, seed=7)
        a = mlp_train(features, labels, Head.SIGMOID, config)
        b = mlp_train(features, labels, Head.SIGMOID, config)
        assert np.array_equal(a.model.w1, b.model.w1)
        assert np.array_equal(a.model.w2, b.model.w2)
        assert a.model.b2 == b.model.b2
        assert a.train_losses == b.train_losses

    def test_seed_changes_outcome(self):
        features, labels = self.separable_set(n=60, seed=3)
        a = mlp_train(features, labels, Head.SIGMOID, TrainConfig(hidden_dim=8, epochs=5, seed=1))
        b = mlp_train(features, labels, Head.SIGMOID, TrainConfig(hidden_dim=8, epochs=5, seed=2))
        assert not np.array_equal(a.model.w1, b.model.w1)

    def test_best_validation_checkpoint_returned(self):
        rng = np.random.default_rng(4)
        features = (rng.random((30, 10)) < 0.4).astype(float)
        labels = rng.random(30)
        val_features = (rng.random((10, 10)) < 0.4).astype(float)
        val_labels = rng.random(10)
        config = TrainConfig(hidden_dim=6, epochs=50, learning_rate=0.5, patience=50, seed=4)
        result = mlp_train(
            features, labels, Head.LINEAR, config,
            val_features=val_features, val_labels=val_labels,
        )
        final_val, _ = loss_and_grads(result.model, val_features, val_labels)
        assert final_val == pytest.approx(min(result.val_losses))
        assert result.best_epoch == int(np.argmin(result.val_losses))

    def test_early_stop_cuts_epochs(self):
        # Validation labels anti-correlated with training: fitting the
        # training set makes validation worse, so patience must trigger.
        features, labels = self.separable_set(n=40, seed=5)
        val_features, val_labels = self.separable_set(n=20, seed=50)
        config = TrainConfig(hidden_dim=4, epochs=500, learning_rate=2.0, patience=3, seed=5)
        result = mlp_train(
            features, labels, Head.SIGMOID, config,
            val_features=val_features, val_labels=1.0 - val_labels,
        )
        assert len(result.train_losses) < 500

    def test_divergence_reported(self):
        rng = np.random.default_rng(6)
        features = rng.normal(0, 1, (20, 8))
        labels = rng.normal(0, 1e6, 20)
        config = TrainConfig(hidden_dim=8, epochs=10, learning_rate=100.0, seed=6)
        with np.errstate(all="ignore"), pytest.raises(ScorerError, match="diverged"):
            mlp_train(features, labels, Head.LINEAR, config)

    def test_normalization_from_training_columns(self):
        features, labels = self.separable_set(n=50, seed=8)
        config = TrainConfig(hidden_dim=4, epochs=2, seed=8)
        result = mlp_train(features, labels, Head.SIGMOID, config)
        solvent = features[:, -SOLVENT_DIM:]
        assert np.allclose(result.model.norm_mean, solvent.mean(axis=0))
        assert np.allclose(result.model.norm_std, solvent.std(axis=0))

    def test_length_mismatch(self):
        with pytest.raises(ScorerError, match="differ in length"):
            mlp_train(np.zeros((3, 5)), np.zeros(4), Head.LINEAR, TrainConfig())


class TestMetrics:
    def test_perfect_ranking(self):
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_inverted_ranking(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_ties_count_half(self):
        assert roc_auc([0.5, 0.5, 0.2], [1, 0, 0]) == pytest.approx(0.75)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(9)
        scores = rng.random(50)
        labels = (rng.random(50) < 0.4).astype(int)
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(5 * scores), labels) == pytest.approx(base)
        assert roc_auc(scores * 1000 - 7, labels) == pytest.approx(base)

    def test_single_class_rejected(self):
        with pytest.raises(ScorerError, match="both classes"):
            roc_auc([0.1, 0.9], [1, 1])

    def test_mae_cases(self):
        assert mae([1.0, 3.0], [2.0, 2.0]) == pytest.approx(1.0)
        assert mae([5.0, 5.0], [5.0, 5.0]) == 0.0
        assert mae([6.0, 6.0], [5.0, 5.0]) == pytest.approx(1.0)
        with pytest.raises(ScorerError):
            mae([1.0], [1.0, 2.0])


class TestPropertyScorers:
    def test_sp2_size_scorer(self):
        scorer = PropertyScorer(kind=ScorerKind.SP2_SIZE)
        benzene = parse_smiles("c1ccccc1")
        assert score_property(scorer, benzene, WATER) == 6.0

    def test_model_backed_scorer(self):
        model = zero_model(input_dim=FEATURE_DIM, hidden=2)
        scorer = PropertyScorer(kind=ScorerKind.PLQY_PROB, model=model)
        value = score_property(scorer, parse_smiles("CCO"), WATER)
        assert value == pytest.approx(0.5)

    def test_missing_model_rejected(self):
        with pytest.raises(ScorerError, match="needs a trained model"):
            PropertyScorer(kind=ScorerKind.ABS_NM)

    def test_probability_stays_in_unit_interval(self):
        model = make_model(input_dim=FEATURE_DIM, hidden=5, head=Head.SIGMOID, seed=11, scale=2.0)
        scorer = PropertyScorer(kind=ScorerKind.PLQY_PROB, model=model)
        for smiles in ("c1ccccc1", "CC(=O)O", "c1ccc2ccccc2c1"):
            value = score_property(scorer, parse_smiles(smiles), WATER)
            assert 0.0 < value < 1.0


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = make_model(input_dim=10, hidden=4, head=Head.SIGMOID, seed=12)
        path = str(tmp_path / "model.npz")
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.w1, model.w1)
        assert np.array_equal(loaded.w2, model.w2)
        assert loaded.b2 == model.b2
        assert loaded.head is Head.SIGMOID
        batch = random_batch(7, 10, seed=13)
        assert np.array_equal(forward_batch(loaded, batch), forward_batch(model, batch))

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_text("not a checkpoint")
        with pytest.raises(ScorerError, match="cannot read"):
            load_model(str(path))

    def test_version_checked(self, tmp_path):
        path = str(tmp_path / "model.npz")
        np.savez(path, version=np.int64(99), w1=np.zeros((1, 1)))
        with pytest.raises(ScorerError, match="version"):
            load_model(path)


class TestCrossValidation:
    def build_dataset(self, n=120, seed=14):
        rng = np.random.default_rng(seed)
        features = (rng.random((n, FEATURE_DIM)) < 0.02).astype(float)
        features[:, 3] = (rng.random(n) < 0.5).astype(float)
        features[:, -SOLVENT_DIM:] = rng.normal(0.5, 0.2, (n, SOLVENT_DIM))
        labels = features[:, 3].copy()
        return TaskDataset(
            task=Task.PLQY_CLASS,
            features=features,
            labels=labels,
            smiles=tuple(f"mol{i}" for i in range(n)),
            solvents=tuple(SolventFeatures(*features[i, -SOLVENT_DIM:]) for i in range(n)),
        )

    def test_cv_on_separable_data(self):
        dataset = self.build_dataset()
        config = TrainConfig(hidden_dim=8, epochs=40, learning_rate=0.5, seed=15)
        report = run_cv(dataset, config, folds=10, split_seed=0)
        assert len(report.fold_metrics) == 10
        assert report.mean > 0.9
        assert report.metric_name == "roc_auc"

    def test_report_format(self, tmp_path):
        import re

        dataset = self.build_dataset(n=60)
        config = TrainConfig(hidden_dim=4, epochs=5, seed=16)
        report = run_cv(dataset, config, folds=10, split_seed=1)
        assert re.fullmatch(r"roc_auc = \d\.\d{3} ± \d\.\d{3}", report.summary())
        path = tmp_path / "cv.tsv"
        report.write(str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "task\tplqy_class"
        assert lines[-1].startswith("summary\t")
        assert len(lines) == 13
