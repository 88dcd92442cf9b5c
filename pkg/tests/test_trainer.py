"""
Tests for datasets, training, evaluation and the transferability study.
"""

import logging

import numpy as np
import pytest

from ecnn import trainer
from ecnn.attacks import AttackConfig, AttackFamily
from ecnn.codebook import CodeMatrix
from ecnn.errors import InvalidArgumentError, ParseError, TrainingDivergedError
from ecnn.model import (
    EcnnModel,
    LossConfig,
    ModelGradients,
    diversity_term,
    encode,
    joint_loss_gradients,
    predict,
)
from ecnn.trainer import (
    SYNTHETIC_KINDS,
    Dataset,
    TrainConfig,
    adversarial_train,
    branch_predictions,
    build_model,
    evaluate,
    load_csv,
    load_model,
    make_synthetic,
    off_diagonal_mean,
    save_csv,
    save_model,
    scale_unit,
    train,
    transfer_frame,
    transfer_matrix,
)
from tests.fixtures.test_data import TINY_TRAINING


class TestDatasets:
    """Test cases for synthetic and CSV datasets."""

    @pytest.mark.parametrize("kind", SYNTHETIC_KINDS)
    def test_synthetic_is_balanced_and_bounded(self, kind: str) -> None:
        """Test class balance and the unit box for every generator."""
        data = make_synthetic(kind, 4, 30, 0.05, seed=2)
        assert data.size == 120
        assert data.class_counts().tolist() == [30, 30, 30, 30]
        assert data.X.min() >= 0.0 and data.X.max() <= 1.0
        assert data.lower.tolist() == [0.0, 0.0]

    def test_synthetic_is_seeded(self) -> None:
        """Test that the same seed draws the same data."""
        first = make_synthetic("rings", 3, 10, 0.05, seed=4)
        second = make_synthetic("rings", 3, 10, 0.05, seed=4)
        np.testing.assert_array_equal(first.X, second.X)
        np.testing.assert_array_equal(first.y, second.y)

    def test_unknown_kind(self) -> None:
        """Test that unknown generators are rejected."""
        with pytest.raises(InvalidArgumentError):
            make_synthetic("spirals", 3, 10, 0.05, seed=0)

    def test_dataset_validation(self) -> None:
        """Test label range and feature bounds."""
        with pytest.raises(InvalidArgumentError):
            Dataset(np.zeros((2, 2)), np.array([0, 3]), 3, 0.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            Dataset(np.full((1, 2), 2.0), np.array([0]), 1, 0.0, 1.0)

    def test_csv_round_trip(self, blobs: Dataset, tmp_path) -> None:
        """Test that saved features reload unchanged."""
        path = save_csv(blobs, tmp_path / "blobs.csv")
        loaded = load_csv(path, num_classes=4)
        np.testing.assert_array_equal(loaded.X, blobs.X)
        np.testing.assert_array_equal(loaded.y, blobs.y)

    def test_csv_reads_the_shortest_repr_exactly(self, tmp_path) -> None:
        """Test that 17-digit cells parse to the very same doubles."""
        values = np.array([[0.1 + 0.2, 1.0 / 3.0], [0.7082352941176471, 2.0 / 7.0]])
        data = Dataset(values, np.array([0, 1]), 2, 0.0, 1.0)
        loaded = load_csv(save_csv(data, tmp_path / "exact.csv"))
        assert loaded.X.tolist() == values.tolist()

    def test_csv_scaling(self, tmp_path) -> None:
        """Test min-max scaling to [0, 1]."""
        path = tmp_path / "raw.csv"
        path.write_text("a,b,label\n10,5,0\n20,5,1\n30,5,1\n")
        data = load_csv(path, scale=True)
        assert data.X[:, 0].tolist() == [0.0, 0.5, 1.0]
        assert data.X[:, 1].tolist() == [0.0, 0.0, 0.0]
        assert data.num_classes == 2

    def test_scale_unit_uses_declared_bounds(self) -> None:
        """Test that scaling maps the declared bounds, not the data range, to [0, 1]."""
        X = np.array([[1.0, 3.0], [2.0, 3.0]])
        data = Dataset(X, np.array([0, 1]), 2, [0.0, 3.0], [4.0, 3.0])
        scaled = scale_unit(data)
        np.testing.assert_allclose(scaled.X, [[0.25, 0.0], [0.5, 0.0]])
        assert scaled.lower.tolist() == [0.0, 0.0]
        assert scaled.upper.tolist() == [1.0, 1.0]

    @pytest.mark.parametrize(
        "text,row",
        [
            ("x0,label\n0.1,0\nabc,1\n", 2),
            ("x0,label\n0.1,0\n0.2,1.5\n", 2),
            ("x0,label\n0.1,-1\n", 1),
        ],
    )
    def test_csv_errors_name_the_row(self, tmp_path, text: str, row: int) -> None:
        """Test that bad cells and labels report their data row."""
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(ParseError) as excinfo:
            load_csv(path)
        assert excinfo.value.row == row

    def test_csv_missing_label_column(self, tmp_path) -> None:
        """Test that the label column must exist."""
        path = tmp_path / "bad.csv"
        path.write_text("x0,x1\n0.1,0.2\n")
        with pytest.raises(ParseError):
            load_csv(path, label_column="label")


class TestModelFiles:
    """Test cases for building and storing models."""

    def test_build_shapes(self, ternary_matrix: CodeMatrix) -> None:
        """Test the desk-scale architecture."""
        model = build_model(3, ternary_matrix, feature_dim=5, front_sizes=(7, 6))
        assert model.input_dim == 3
        assert len(model.branches) == 3
        assert model.shared_head is not None
        assert model.shared_head.output_dim == 3

    def test_build_is_seeded(self, example_matrix: CodeMatrix) -> None:
        """Test that initial weights follow the seed."""
        first = build_model(2, example_matrix, seed=1).parameters()
        second = build_model(2, example_matrix, seed=1).parameters()
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_save_and_load(self, small_model: EcnnModel, tmp_path) -> None:
        """Test that a stored model predicts identically."""
        path = save_model(small_model, tmp_path / "model.json")
        x = np.random.default_rng(1).uniform(size=(8, 2))
        np.testing.assert_array_equal(predict(load_model(path), x), predict(small_model, x))

    def test_malformed_model_file(self, tmp_path) -> None:
        """Test that a broken checkpoint raises ParseError."""
        path = tmp_path / "model.json"
        path.write_text("[1, 2")
        with pytest.raises(ParseError):
            load_model(path)


class TestTrainConfig:
    """Test cases for optimiser settings."""

    def test_step_decay(self) -> None:
        """Test that the rate halves once per third of training."""
        cfg = TrainConfig(epochs=9, learning_rate=0.08, decay_factor=0.5)
        rates = [cfg.learning_rate_at(e) for e in range(9)]
        assert rates == [0.08] * 3 + [0.04] * 3 + [0.02] * 3

    @pytest.mark.parametrize(
        "kwargs",
        [{"epochs": 0}, {"learning_rate": 0.0}, {"momentum": 1.0}, {"decay_factor": 1.5}],
    )
    def test_invalid_settings(self, kwargs) -> None:
        """Test that out-of-range settings are rejected."""
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**kwargs)

    def test_nested_dict_round_trip(self) -> None:
        """Test that loss and attack settings survive to_dict/from_dict."""
        cfg = TrainConfig(
            loss=LossConfig(gamma=0.1),
            adversarial=AttackConfig(epsilon=0.05, iterations=3),
            **TINY_TRAINING,
        )
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestTraining:
    """Test cases for SGD on the joint loss."""

    def test_loss_decreases(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that training lowers the joint loss on separable blobs."""
        cfg = TrainConfig(epochs=15, batch_size=16, learning_rate=0.05, momentum=0.9)
        result = train(small_model, blobs, cfg)
        assert len(result.history) == 15
        assert result.history[-1] < result.history[0]
        assert result.model.is_finite()

    def test_input_model_untouched(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that train works on a copy."""
        before = [p.copy() for p in small_model.parameters()]
        train(small_model, blobs, TrainConfig(**TINY_TRAINING))
        for saved, current in zip(before, small_model.parameters()):
            np.testing.assert_array_equal(saved, current)

    def test_deterministic(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that the seed fixes the whole run."""
        cfg = TrainConfig(seed=4, **TINY_TRAINING)
        assert train(small_model, blobs, cfg).history == train(small_model, blobs, cfg).history

    def test_history_frame(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test the per-epoch log."""
        frame = train(small_model, blobs, TrainConfig(**TINY_TRAINING)).history_frame()
        assert list(frame.columns) == ["epoch", "loss", "learning_rate"]
        assert frame["epoch"].tolist() == [1, 2, 3]

    def test_divergence_is_reported(self, mocker, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that a non-finite loss stops training with a hint."""
        mocker.patch(
            "ecnn.trainer.joint_loss_gradients",
            return_value=(float("nan"), ModelGradients([], np.zeros(2))),
        )
        with pytest.raises(TrainingDivergedError, match="learning rate"):
            train(small_model, blobs, TrainConfig(**TINY_TRAINING))

    def test_batch_larger_than_dataset(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that the batch must fit in the dataset."""
        with pytest.raises(InvalidArgumentError):
            train(small_model, blobs, TrainConfig(batch_size=500))

    def test_feature_width_must_match(self, small_model: EcnnModel) -> None:
        """Test that the model input width must match the data."""
        data = make_synthetic("blobs", 4, 10, 0.05, seed=0, feature_dim=3)
        with pytest.raises(InvalidArgumentError):
            train(small_model, data, TrainConfig(batch_size=8))

    def test_adversarial_training_uses_pgd(
        self, caplog, small_model: EcnnModel, blobs: Dataset
    ) -> None:
        """Test that other attack families are replaced by PGD with a warning."""
        attack = AttackConfig(family=AttackFamily.FGSM, epsilon=0.05, iterations=2)
        cfg = TrainConfig(adversarial=attack, epochs=1, batch_size=16)
        with caplog.at_level(logging.WARNING, logger="ecnn.trainer"):
            result = train(small_model, blobs, cfg)
        assert len(result.history) == 1
        assert "ignoring family fgsm" in caplog.text

    def test_adversarial_half_reaches_the_update(
        self, mocker, small_model: EcnnModel, blobs: Dataset
    ) -> None:
        """Test that every step sees clean and PGD samples 1:1 and both shape the gradient."""
        spy = mocker.spy(trainer, "joint_loss_gradients")
        attack = AttackConfig(epsilon=0.05, step_alpha=0.01, iterations=2)
        train(small_model, blobs, TrainConfig(adversarial=attack, epochs=1, batch_size=16))
        assert spy.call_count == 5
        _, xb, yb, loss_cfg = spy.call_args_list[0].args
        clean, crafted = xb[:16], xb[16:]
        assert xb.shape == (32, 2)
        np.testing.assert_array_equal(yb[:16], yb[16:])
        assert np.any(crafted != clean)
        assert np.max(np.abs(crafted - clean)) <= 0.05 + 1e-12
        clean_only = joint_loss_gradients(small_model, clean, yb[:16], loss_cfg)[1].params
        mixed = joint_loss_gradients(small_model, xb, yb, loss_cfg)[1].params
        assert any(not np.allclose(a, b) for a, b in zip(clean_only, mixed))

    def test_diversity_raises_branch_entropy(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that the entropy term keeps trained branch outputs less confident."""
        base = {"epochs": 10, "batch_size": 16, "learning_rate": 0.05, "seed": 1}
        plain = train(small_model, blobs, TrainConfig(loss=LossConfig(gamma=0.0), **base))
        diverse = train(small_model, blobs, TrainConfig(loss=LossConfig(gamma=1.0), **base))
        entropy = [diversity_term(encode(r.model, blobs.X)) for r in (plain, diverse)]
        assert entropy[1] > entropy[0]

    def test_adversarial_training_needs_attack(
        self, small_model: EcnnModel, blobs: Dataset
    ) -> None:
        """Test that adversarial_train requires an attack config."""
        with pytest.raises(InvalidArgumentError):
            adversarial_train(small_model, blobs, TrainConfig(**TINY_TRAINING))


class TestEvaluation:
    """Test cases for accuracy reports and transferability."""

    def test_clean_report(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test accuracy, per-class breakdown and confusion counts."""
        report = evaluate(small_model, blobs)
        expected = float(np.mean(predict(small_model, blobs.X) == blobs.y))
        assert report.accuracy == pytest.approx(expected)
        assert report.confusion.sum() == blobs.size
        assert report.confusion.sum(axis=1).tolist() == [20, 20, 20, 20]
        assert len(report.per_class_accuracy) == 4
        assert report.attack is None

    def test_zero_budget_attack_matches_clean(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test that an epsilon-0 attack leaves the accuracy unchanged."""
        clean = evaluate(small_model, blobs)
        attacked = evaluate(small_model, blobs, AttackConfig(epsilon=0.0, iterations=2))
        assert attacked.accuracy == clean.accuracy
        assert attacked.attack == "pgd"

    def test_branch_predictions(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test one meta-class per sample and branch."""
        meta = branch_predictions(small_model, blobs.X)
        assert meta.shape == (blobs.size, 6)
        assert set(np.unique(meta)) <= {0, 1}

    def test_transfer_matrix(self, small_model: EcnnModel, blobs: Dataset) -> None:
        """Test the shape, range and CSV frame of the transfer study."""
        cfg = AttackConfig(epsilon=0.05, step_alpha=0.02, iterations=2)
        matrix = transfer_matrix(small_model, blobs.subset(range(12)), cfg)
        assert matrix.shape == (6, 6)
        assert np.all((matrix >= 0.0) & (matrix <= 1.0))
        frame = transfer_frame(matrix)
        assert frame.index.name == "substitute"
        assert list(frame.columns)[0] == "branch_0"

    def test_off_diagonal_mean(self) -> None:
        """Test the mean over entries off the diagonal."""
        assert off_diagonal_mean(np.array([[1.0, 2.0], [3.0, 4.0]])) == 2.5


if __name__ == "__main__":
    pytest.main([__file__])
