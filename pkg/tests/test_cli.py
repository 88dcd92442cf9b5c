"""
Tests for the ecnn command line.
"""

from pathlib import Path

import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from ecnn import __version__
from ecnn.cli import main
from ecnn.codebook import CodeMatrix, load_matrix, save_matrix
from ecnn.lemmalab import Lemma4Report, Lemma4Row
from ecnn.model import EcnnModel
from ecnn.trainer import save_model

QUICK_DESIGN = ["--num-temperatures", "5", "--steps-per-temperature", "20"]
QUICK_DATA = ["--samples-per-class", "5", "--threads", "1"]


def read_yaml(path: Path) -> dict:
    return yaml.safe_load(path.read_text())


@pytest.mark.integration
class TestDesignCommand:
    """Test cases for `ecnn design`."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.runner = CliRunner()

    def test_version(self) -> None:
        """Test the version flag."""
        result = self.runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_design_writes_artifacts(self, output_dir: Path) -> None:
        """Test that design writes the matrix, report and manifest."""
        args = ["design", "--classes", "4", "--length", "5", "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args + QUICK_DESIGN)
        assert result.exit_code == 0, result.output
        matrix = load_matrix(output_dir / "matrix.json")
        assert (matrix.num_classes, matrix.code_length) == (4, 5)
        report = read_yaml(output_dir / "design_report.yaml")
        assert report["min_hamming"] >= 1
        manifest = read_yaml(output_dir / "manifest.yaml")
        assert manifest["command"] == "design"
        assert manifest["parameters"]["classes"] == 4

    def test_missing_classes_is_a_usage_error(self, output_dir: Path) -> None:
        """Test that design needs --classes."""
        args = ["design", "--length", "5", "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 2
        assert "--classes" in result.output

    def test_infeasible_dimensions_are_a_usage_error(self, output_dir: Path) -> None:
        """Test that 5 classes cannot fit in 2 binary symbols."""
        args = ["design", "--classes", "5", "--length", "2", "--output-dir", str(output_dir)]
        assert self.runner.invoke(main, args).exit_code == 2

    def test_config_file_and_flag_precedence(self, tmp_path: Path, output_dir: Path) -> None:
        """Test that the config file fills options and flags override it."""
        config = tmp_path / "run.yaml"
        config.write_text(
            "classes: 3\nlength: 3\nseed: 3\nnum-temperatures: 5\nsteps-per-temperature: 20\n"
        )
        args = ["design", "--config", str(config), "--seed", "5", "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        manifest = read_yaml(output_dir / "manifest.yaml")
        assert manifest["seed"] == 5
        assert manifest["parameters"]["classes"] == 3
        assert manifest["inputs"]["config"] == str(config)

    def test_manifest_replays_the_run(self, tmp_path: Path) -> None:
        """Test that --config manifest.yaml reproduces the matrix."""
        first, second = tmp_path / "first", tmp_path / "second"
        args = ["design", "--classes", "4", "--length", "6", "--seed", "11"] + QUICK_DESIGN
        assert self.runner.invoke(main, args + ["--output-dir", str(first)]).exit_code == 0
        replay = ["design", "--config", str(first / "manifest.yaml"), "--output-dir", str(second)]
        assert self.runner.invoke(main, replay).exit_code == 0
        assert load_matrix(first / "matrix.json") == load_matrix(second / "matrix.json")

    def test_mirror_doubles_the_columns(self, output_dir: Path) -> None:
        """Test that --mirror appends the complemented columns."""
        args = ["design", "--classes", "4", "--length", "3", "--mirror"] + QUICK_DESIGN
        result = self.runner.invoke(main, args + ["--output-dir", str(output_dir)])
        assert result.exit_code == 0, result.output
        assert load_matrix(output_dir / "matrix.json").code_length == 6
        assert "mirror" in read_yaml(output_dir / "design_report.yaml")

    def test_mirror_records_the_emitted_length(self, output_dir: Path) -> None:
        """Test that the report and manifest give the mirrored code length."""
        args = ["design", "--classes", "4", "--length", "3", "--mirror"] + QUICK_DESIGN
        result = self.runner.invoke(main, args + ["--output-dir", str(output_dir)])
        assert result.exit_code == 0, result.output
        report = read_yaml(output_dir / "design_report.yaml")
        assert report["code_length"] == 6
        assert report["mirror"]["designed_code_length"] == 3
        manifest = read_yaml(output_dir / "manifest.yaml")
        assert manifest["results"]["code_length"] == 6
        assert manifest["parameters"]["length"] == 3


@pytest.mark.integration
class TestModelCommands:
    """Test cases for `ecnn train`, `attack`, `eval` and `transfer`."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.runner = CliRunner()

    @pytest.fixture
    def matrix_file(self, tmp_path: Path, four_class_matrix: CodeMatrix) -> Path:
        path = tmp_path / "matrix.json"
        save_matrix(four_class_matrix, path)
        return path

    @pytest.fixture
    def model_file(self, tmp_path: Path, small_model: EcnnModel) -> Path:
        return save_model(small_model, tmp_path / "model.json")

    def test_train(self, matrix_file: Path, output_dir: Path) -> None:
        """Test that train writes a checkpoint, history and report."""
        args = [
            "train",
            "--matrix", str(matrix_file),
            "--epochs", "2",
            "--batch-size", "8",
            "--front-sizes", "8",
            "--feature-dim", "4",
            "--gamma", "0.1",
            "--output-dir", str(output_dir),
        ]
        result = self.runner.invoke(main, args + QUICK_DATA)
        assert result.exit_code == 0, result.output
        assert (output_dir / "model.json").exists()
        history = pd.read_csv(output_dir / "history.csv")
        assert history["epoch"].tolist() == [1, 2]
        report = read_yaml(output_dir / "train_report.yaml")
        assert 0.0 <= report["training_accuracy"] <= 1.0

    def test_train_needs_a_matrix(self, output_dir: Path) -> None:
        """Test that --matrix is required."""
        result = self.runner.invoke(main, ["train", "--output-dir", str(output_dir)])
        assert result.exit_code == 2

    def test_missing_matrix_file(self, tmp_path: Path, output_dir: Path) -> None:
        """Test that an absent file is a runtime error naming the path."""
        missing = tmp_path / "nope.json"
        args = ["train", "--matrix", str(missing), "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 1
        assert "not found" in result.output

    def test_malformed_matrix_file(self, tmp_path: Path, output_dir: Path) -> None:
        """Test that a broken matrix file exits with status 1."""
        broken = tmp_path / "broken.json"
        broken.write_text('{"num_classes": 2}')
        args = ["train", "--matrix", str(broken), "--output-dir", str(output_dir)]
        assert self.runner.invoke(main, args).exit_code == 1

    def test_attack(self, model_file: Path, output_dir: Path) -> None:
        """Test one CSV row per sample and the summary report."""
        args = [
            "attack",
            "--model", str(model_file),
            "--family", "fgsm",
            "--epsilon", "0.05",
            "--output-dir", str(output_dir),
        ]
        result = self.runner.invoke(main, args + QUICK_DATA)
        assert result.exit_code == 0, result.output
        records = pd.read_csv(output_dir / "attack.csv")
        assert len(records) == 20
        assert set(records["attack_family"]) == {"fgsm"}
        report = read_yaml(output_dir / "attack_report.yaml")
        assert report["max_linf"] <= 0.05 + 1e-12
        assert set(report) >= {"clean_accuracy", "adversarial_accuracy", "success_rate"}

    def test_attack_limit(self, model_file: Path, output_dir: Path) -> None:
        """Test that --limit attacks only the first samples."""
        args = ["attack", "--model", str(model_file), "--limit", "3", "--iterations", "2"]
        result = self.runner.invoke(main, args + QUICK_DATA + ["--output-dir", str(output_dir)])
        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(output_dir / "attack.csv")) == 3

    def test_eval(self, model_file: Path, output_dir: Path) -> None:
        """Test the clean evaluation report."""
        args = ["eval", "--model", str(model_file), "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args + QUICK_DATA)
        assert result.exit_code == 0, result.output
        report = read_yaml(output_dir / "eval_report.yaml")
        assert report["samples"] == 20
        assert len(report["per_class_accuracy"]) == 4
        assert report["attack"] is None

    def test_transfer_with_checkpoint(self, model_file: Path, output_dir: Path) -> None:
        """Test the transfer matrix CSV and its off-diagonal mean."""
        args = [
            "transfer",
            "--model", str(model_file),
            "--iterations", "2",
            "--samples-per-class", "3",
            "--threads", "1",
            "--output-dir", str(output_dir),
        ]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(output_dir / "transfer.csv", index_col=0)
        assert frame.shape == (6, 6)
        report = read_yaml(output_dir / "transfer_report.yaml")
        assert 0.0 <= report["off_diagonal_mean"] <= 1.0


@pytest.mark.integration
class TestVerifyCommand:
    """Test cases for `ecnn verify`."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.runner = CliRunner()

    def test_lemma5(self, output_dir: Path) -> None:
        """Test the mutual information check for M = 10, q = 2."""
        args = ["verify", "--lemma", "5", "--classes", "10", "--alphabet", "2"]
        result = self.runner.invoke(main, args + ["--output-dir", str(output_dir)])
        assert result.exit_code == 0, result.output
        report = read_yaml(output_dir / "lemma5_report.yaml")
        assert report["passed"] is True
        assert len(report["rows"]) == 1

    def test_lemma1_with_few_trials(self, output_dir: Path) -> None:
        """Test the exact-fit check with its default dimensions."""
        args = ["verify", "--lemma", "1", "--trials", "2", "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        assert read_yaml(output_dir / "lemma1_report.yaml")["trials"] == 2

    def test_lemma4_custom_gammas(self, output_dir: Path) -> None:
        """Test that repeated --gamma flags set the grid."""
        args = ["verify", "--lemma", "4", "--gamma", "0.1", "--gamma", "0.3"]
        result = self.runner.invoke(main, args + ["--output-dir", str(output_dir)])
        assert result.exit_code == 0, result.output
        rows = read_yaml(output_dir / "lemma4_report.yaml")["rows"]
        assert [row["gamma"] for row in rows] == [0.1, 0.3]

    def test_failed_check_exits_one(self, mocker, output_dir: Path) -> None:
        """Test that a failing lemma check sets exit status 1."""
        failing = Lemma4Report(rows=[Lemma4Row(0.1, 0.9, 0.5, 0.4, 10.0, 0.0)])
        mocker.patch("ecnn.cli.verify_lemma4", return_value=failing)
        args = ["verify", "--lemma", "4", "--output-dir", str(output_dir)]
        result = self.runner.invoke(main, args)
        assert result.exit_code == 1
        assert read_yaml(output_dir / "lemma4_report.yaml")["passed"] is False

    @pytest.mark.parametrize("args", [[], ["--lemma", "6"]])
    def test_lemma_choice_is_validated(self, output_dir: Path, args) -> None:
        """Test that a missing or out-of-range lemma is a usage error."""
        result = self.runner.invoke(main, ["verify", "--output-dir", str(output_dir)] + args)
        assert result.exit_code == 2


if __name__ == "__main__":
    pytest.main([__file__])
