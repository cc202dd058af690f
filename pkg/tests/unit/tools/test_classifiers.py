import pytest
import numpy as np
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent / "src"))

from drowsinet.errors import ContractViolationError, UnknownModelError
from drowsinet.tools.classifiers import (
    AUTOENCODER_FILE,
    CHECKPOINT_FILE,
    TrainedModel,
    fit_model,
    parse_run,
    run_name,
)
from drowsinet.tools.dataset import fit_normalizer, normalize_sample_set
from drowsinet.tools.forest import RandomForest
from tests.conftest import make_sample_set


@pytest.fixture
def splits():
    train = make_sample_set((20, 12, 8), "train", seed=1)
    val = make_sample_set((6, 4, 4), "val", ("P004",), seed=2)
    return train, val, fit_normalizer(train)


class TestRunNames:
    """Test run name parsing."""

    def test_plain_and_smote_runs(self):
        assert parse_run("conv2d-raw") == ("conv2d-raw", False)
        assert parse_run("conv2d-raw+smote") == ("conv2d-raw", True)
        assert run_name("conv2d-raw", True) == "conv2d-raw+smote"
        assert run_name("rf-baseline", False) == "rf-baseline"

    def test_unknown_model(self):
        with pytest.raises(UnknownModelError, match="resnet"):
            parse_run("resnet+smote")


class TestFitModel:
    """Test training runs end to end on small splits."""

    def test_forest_run(self, splits, run_config):
        train, val, normalizer = splits
        model, log = fit_model("rf-baseline", train, val, run_config, normalizer)
        assert isinstance(model.estimator, RandomForest)
        assert log["class_counts"] == [20, 12, 8]
        assert log["forest"]["n_trees"] == run_config.forest.n_trees
        scores = model.predict_scores(val)
        assert scores.shape == (len(val), 3)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0)

    def test_forest_ignores_the_normalizer(self, splits, run_config):
        train, val, normalizer = splits
        with_normalizer, _ = fit_model("rf-baseline", train, val, run_config, normalizer)
        without, _ = fit_model("rf-baseline", train, val, run_config, None)
        assert with_normalizer.normalizer is None
        np.testing.assert_array_equal(with_normalizer.predict_scores(val), without.predict_scores(val))

    def test_forest_refuses_normalized_grids(self, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("rf-baseline", train, val, run_config, normalizer)
        with pytest.raises(ContractViolationError):
            model.predict_scores(normalize_sample_set(normalizer, val))
        with pytest.raises(ContractViolationError):
            fit_model("rf-baseline", normalize_sample_set(normalizer, train), val, run_config)

    def test_networks_accept_either_grid_space(self, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("mlp-raw", train, val, run_config, normalizer)
        np.testing.assert_array_equal(model.predict_scores(normalize_sample_set(normalizer, val)),
                                      model.predict_scores(val))

    def test_smote_run_balances_training(self, splits, run_config):
        train, val, normalizer = splits
        _, log = fit_model("mlp-raw+smote", train, val, run_config, normalizer)
        assert log["smote"] is True
        assert log["class_counts_after_smote"] == [20, 20, 20]
        assert log["synthetic_samples"] == 20
        assert len(log["history"]["train_loss"]) == run_config.train.epochs

    def test_stats_run_scales_features(self, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("mlp-stats", train, val, run_config, normalizer)
        assert model.feature_scaler is not None
        assert model.inputs(train.grids).shape == (len(train), 108)

    def test_encoder_run_keeps_autoencoder_history(self, splits, run_config):
        train, val, normalizer = splits
        model, log = fit_model("mlp-enc", train, val, run_config, normalizer)
        assert model.encoder is not None
        assert len(log["autoencoder"]["train_loss"]) == run_config.autoencoder_train.epochs

    def test_unknown_run(self, splits, run_config):
        train, val, normalizer = splits
        with pytest.raises(UnknownModelError):
            fit_model("svm", train, val, run_config, normalizer)


class TestPersistence:
    """Test saving and reloading trained runs."""

    def test_network_round_trip(self, tmp_path, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("conv1d-raw", train, val, run_config, normalizer)
        run_dir = tmp_path / "conv1d-raw"
        written = model.save(run_dir, run_config.model_dump(mode="json"))
        assert [p.name for p in written] == [CHECKPOINT_FILE]
        restored = TrainedModel.load(run_dir)
        assert restored.run == "conv1d-raw"
        np.testing.assert_array_equal(restored.predict_scores(val), model.predict_scores(val))

    def test_encoder_checkpoint_saved_alongside(self, tmp_path, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("mlp-enc", train, val, run_config, normalizer)
        run_dir = tmp_path / "mlp-enc"
        written = model.save(run_dir, run_config.model_dump(mode="json"))
        assert [p.name for p in written] == [AUTOENCODER_FILE, CHECKPOINT_FILE]
        restored = TrainedModel.load(run_dir)
        np.testing.assert_array_equal(restored.predict_scores(val), model.predict_scores(val))

    def test_forest_round_trip(self, tmp_path, splits, run_config):
        train, val, normalizer = splits
        model, _ = fit_model("rf-baseline", train, val, run_config, normalizer)
        model.save(tmp_path / "rf-baseline")
        restored = TrainedModel.load(tmp_path / "rf-baseline")
        np.testing.assert_array_equal(restored.predict_scores(val), model.predict_scores(val))
