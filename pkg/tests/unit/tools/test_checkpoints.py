import json
import pytest
import numpy as np
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent / "src"))

from drowsinet.errors import ConfigurationError, ShapeError
from drowsinet.models.config import ForestConfig, TrainConfig
from drowsinet.models.state import ChannelNormalizer
from drowsinet.tools.checkpoints import (
    FORMAT_VERSION,
    forest_from_checkpoint,
    load_checkpoint,
    network_from_checkpoint,
    normalizer_from_header,
    save_forest,
    save_network,
    tensor_from_dict,
    tensor_to_dict,
)
from drowsinet.tools.featurize import featurize_grids
from drowsinet.tools.forest import fit_forest
from drowsinet.tools.networks import build_model, predict_scores, train_classifier


@pytest.fixture
def normalizer():
    return ChannelNormalizer(mean=[0.5] * 18, std=[2.0] * 18)


class TestTensors:
    """Test tensor serialization."""

    def test_full_precision(self):
        value = np.array([[1.0 / 3.0, np.pi], [np.e, -1e-300]])
        name, restored = tensor_from_dict(json.loads(json.dumps(tensor_to_dict("w", value))))
        assert name == "w"
        np.testing.assert_array_equal(restored, value)

    def test_size_mismatch(self):
        with pytest.raises(ConfigurationError):
            tensor_from_dict({"name": "w", "shape": [2, 2], "values": [1.0, 2.0, 3.0]})


class TestNetworkCheckpoints:
    """Test saving and restoring trained networks."""

    def test_restored_network_predicts_identically(self, tmp_path, sample_set, normalizer):
        network, _ = train_classifier(build_model("conv2d-raw"), sample_set.grids[:16], sample_set.labels[:16],
                                      config=TrainConfig(epochs=1, batch_size=8))
        path = save_network(tmp_path / "checkpoint.json", network, seed=0, normalizer=normalizer,
                            config={"note": "test"})
        payload = load_checkpoint(path)
        assert payload["format_version"] == FORMAT_VERSION
        assert payload["kind"] == "network"
        assert payload["config"] == {"note": "test"}
        restored = network_from_checkpoint(payload)
        np.testing.assert_array_equal(
            predict_scores(restored, sample_set.grids[:4]), predict_scores(network, sample_set.grids[:4])
        )
        assert normalizer_from_header(payload) == normalizer
        assert normalizer_from_header(payload, "feature_scaler") is None

    def test_tensor_set_must_match(self, tmp_path, sample_set):
        network, _ = train_classifier(build_model("mlp-raw"), sample_set.grids[:6], sample_set.labels[:6],
                                      config=TrainConfig(epochs=1))
        payload = load_checkpoint(save_network(tmp_path / "c.json", network))
        payload["tensors"] = payload["tensors"][:-1]
        with pytest.raises(ShapeError):
            network_from_checkpoint(payload)

    def test_version_checked(self, tmp_path):
        path = tmp_path / "old.json"
        path.write_text(json.dumps({"format_version": 0}))
        with pytest.raises(ConfigurationError, match="version"):
            load_checkpoint(path)

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_checkpoint(tmp_path / "absent.json")


class TestForestCheckpoints:
    """Test saving and restoring forests."""

    def test_round_trip(self, tmp_path, sample_set, normalizer):
        features = featurize_grids(sample_set.grids)
        forest = fit_forest(features, ForestConfig(n_trees=3), labels=sample_set.labels)
        payload = load_checkpoint(save_forest(tmp_path / "forest.json", forest, normalizer))
        assert payload["kind"] == "forest"
        assert payload["model"] == "rf-baseline"
        restored = forest_from_checkpoint(payload)
        np.testing.assert_array_equal(restored.predict_proba(features), forest.predict_proba(features))
