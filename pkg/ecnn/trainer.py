"""
Training and Evaluation

Datasets (synthetic or CSV), the desk-scale ECNN architecture, mini-batch
SGD with momentum on the joint loss, adversarial training, evaluation and
the branch-to-branch transferability study.
"""

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ecnn.attacks import (
    AttackConfig,
    AttackFamily,
    BranchScores,
    attack_dataset,
    pgd,
    random_start,
)
from ecnn.codebook import CodeMatrix
from ecnn.config import from_mapping, to_plain
from ecnn.errors import InvalidArgumentError, ParseError, TrainingDivergedError
from ecnn.model import (
    EcnnModel,
    LossConfig,
    branch_probabilities,
    encode,
    joint_loss_gradients,
    meta_labels,
    predict,
)
from ecnn.netcore import DenseNet
from ecnn.seeding import substream

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("blobs", "rings", "grid")


@dataclass
class Dataset:
    """Feature matrix X (K, d), labels y (K,) and per-feature bounds."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        width = self.X.shape[1]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (width,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (width,)).copy()
        if len(self.y) != len(self.X):
            raise InvalidArgumentError(f"{len(self.X)} samples but {len(self.y)} labels")
        if np.any(self.y < 0) or np.any(self.y >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        if np.any(self.X < self.lower) or np.any(self.X > self.upper):
            raise InvalidArgumentError("features fall outside the declared bounds")

    @property
    def size(self) -> int:
        return int(len(self.y))

    @property
    def feature_dim(self) -> int:
        return int(self.X.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        index = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[index], self.y[index], self.num_classes, self.lower, self.upper)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


def make_synthetic(
    kind: str,
    num_classes: int,
    samples_per_class: int,
    noise_sigma: float,
    seed: int,
    feature_dim: int = 2,
) -> Dataset:
    """
    Seeded toy dataset in the unit box.

    Args:
        kind: ``blobs`` (Gaussian clusters on a circle), ``rings``
            (concentric circles) or ``grid`` (one cell per class)
        num_classes: Number of classes M
        samples_per_class: Samples drawn for every class
        noise_sigma: Standard deviation of the isotropic Gaussian noise
        seed: Run seed; the ``data`` sub-stream is used
        feature_dim: Width of the feature vectors (>= 2)

    Returns:
        Dataset with exactly balanced, shuffled labels and bounds [0, 1]
    """
    if kind not in SYNTHETIC_KINDS:
        raise InvalidArgumentError(f"unknown dataset kind '{kind}', use {SYNTHETIC_KINDS}")
    if num_classes < 1 or samples_per_class < 1 or feature_dim < 2 or noise_sigma < 0:
        raise InvalidArgumentError("invalid synthetic dataset dimensions")
    rng = substream(seed, "data")
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    X = np.full((len(labels), feature_dim), 0.5)

    if kind == "blobs":
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        X[:, 0] += 0.3 * np.cos(angles)[labels]
        X[:, 1] += 0.3 * np.sin(angles)[labels]
    elif kind == "rings":
        radii = 0.1 + 0.3 * np.arange(num_classes) / max(1, num_classes - 1)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=len(labels))
        X[:, 0] += radii[labels] * np.cos(theta)
        X[:, 1] += radii[labels] * np.sin(theta)
    else:
        side = int(math.ceil(math.sqrt(num_classes)))
        cells = np.arange(num_classes)
        X[:, 0] = ((cells % side + 0.5) / side)[labels]
        X[:, 1] = ((cells // side + 0.5) / side)[labels]

    if noise_sigma > 0:
        X = X + rng.normal(0.0, noise_sigma, size=X.shape)
    X = np.clip(X, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return Dataset(X[order], labels[order], num_classes, 0.0, 1.0)


def scale_unit(dataset: Dataset) -> Dataset:
    """Min-max scale every feature to [0, 1] (constant features map to 0)."""
    span = dataset.upper - dataset.lower
    safe = np.where(span > 0, span, 1.0)
    X = np.clip((dataset.X - dataset.lower) / safe, 0.0, 1.0)
    X[:, span <= 0] = 0.0
    return Dataset(X, dataset.y, dataset.num_classes, 0.0, 1.0)


def _parse_column(column: pd.Series) -> pd.Series:
    """Exact float parse; bad cells become NaN so the caller can name the row."""
    try:
        return column.astype(np.float64)
    except ValueError:
        return pd.to_numeric(column, errors="coerce")


def load_csv(
    path: Path,
    label_column: str = "label",
    scale: bool = False,
    num_classes: Optional[int] = None,
) -> Dataset:
    """
    Read a numeric CSV with one integer label column.

    Raises:
        ParseError: malformed rows, non-numeric cells, bad labels or a
            missing label column; the message names the 1-based data row
    """
    path = Path(path)
    source = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV: {exc}", source=source) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("empty CSV file", source=source) from exc

    if label_column not in frame.columns:
        raise ParseError(f"unknown label column '{label_column}'", source=source)
    feature_columns = [c for c in frame.columns if c != label_column]
    if not feature_columns:
        raise ParseError("no feature columns", source=source)
    if frame.empty:
        raise ParseError("no data rows", source=source)

    numeric = frame.apply(_parse_column)
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        cells = [c for c in frame.columns if pd.isna(numeric.iloc[row][c])]
        raise ParseError(f"non-numeric or missing cells in {cells}", source=source, row=row + 1)

    labels = numeric[label_column].to_numpy(dtype=np.float64)
    integral = (labels == np.round(labels)) & (labels >= 0)
    if not integral.all():
        row = int(np.argmin(integral))
        raise ParseError(
            f"label {labels[row]!r} is not a non-negative integer", source=source, row=row + 1
        )
    y = labels.astype(np.int64)
    X = numeric[feature_columns].to_numpy(dtype=np.float64)
    classes = int(num_classes) if num_classes is not None else int(y.max()) + 1
    if y.max() >= classes:
        row = int(np.argmax(y >= classes))
        raise ParseError(f"label {y[row]} >= {classes} classes", source=source, row=row + 1)

    dataset = Dataset(X, y, classes, X.min(axis=0), X.max(axis=0))
    logger.info("Loaded %d samples with %d features from %s", dataset.size, X.shape[1], path)
    return scale_unit(dataset) if scale else dataset


def save_csv(dataset: Dataset, path: Path, label_column: str = "label") -> Path:
    """Write features as x0..x{d-1} followed by the label column."""
    frame = pd.DataFrame(dataset.X, columns=[f"x{i}" for i in range(dataset.feature_dim)])
    frame[label_column] = dataset.y
    frame.to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def build_model(
    input_dim: int,
    code_matrix: CodeMatrix,
    feature_dim: int = 8,
    front_sizes: Sequence[int] = (32, 32),
    share_head: bool = True,
    seed: int = 0,
) -> EcnnModel:
    """
    Desk-scale ECNN: g1 = dense-relu stack, g2_n = one dense-relu layer to
    ``feature_dim`` features, phi = linear head (1 logit, or q for q-ary).
    """
    rng = substream(seed, "init")
    sizes = [input_dim, *front_sizes]
    front = DenseNet.initialize(sizes, ["relu"] * (len(sizes) - 1), rng)
    width = sizes[-1]
    branches = [
        DenseNet.initialize([width, feature_dim], ["relu"], rng)
        for _ in range(code_matrix.code_length)
    ]
    outputs = code_matrix.alphabet if code_matrix.alphabet > 2 else 1
    if share_head:
        head = DenseNet.initialize([feature_dim, outputs], ["identity"], rng)
        return EcnnModel(front, branches, head, code_matrix, feature_dim)
    heads = [
        DenseNet.initialize([feature_dim, outputs], ["identity"], rng)
        for _ in range(code_matrix.code_length)
    ]
    return EcnnModel(front, branches, None, code_matrix, feature_dim, branch_heads=heads)


def save_model(model: EcnnModel, path: Path) -> Path:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")
    return Path(path)


def load_model(path: Path) -> EcnnModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed model checkpoint: {exc}", source=str(path)) from exc
    return EcnnModel.from_dict(payload, source=str(path))


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings; ``adversarial`` switches on 1:1 adversarial batches."""

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    adversarial: Optional[AttackConfig] = None
    seed: int = 0
    decay_factor: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise InvalidArgumentError("learning_rate must be > 0 and momentum in [0, 1)")
        if not 0 < self.decay_factor <= 1:
            raise InvalidArgumentError("decay_factor must lie in (0, 1]")

    def learning_rate_at(self, epoch: int) -> float:
        """Base rate scaled by decay_factor once per third of training."""
        period = max(1, self.epochs // 3)
        return self.learning_rate * self.decay_factor ** (epoch // period)

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        if isinstance(data.get("loss"), dict):
            data["loss"] = LossConfig.from_dict(data["loss"])
        if isinstance(data.get("adversarial"), dict):
            data["adversarial"] = AttackConfig.from_dict(data["adversarial"])
        return from_mapping(cls, data)


@dataclass
class TrainResult:
    model: EcnnModel
    history: List[float]
    learning_rates: List[float]

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, len(self.history) + 1),
                "loss": self.history,
                "learning_rate": self.learning_rates,
            }
        )


def _check_fit(model: EcnnModel, dataset: Dataset, cfg: TrainConfig) -> None:
    if dataset.feature_dim != model.input_dim:
        raise InvalidArgumentError(
            f"dataset has {dataset.feature_dim} features, model expects {model.input_dim}"
        )
    if dataset.num_classes > model.code_matrix.num_classes:
        raise InvalidArgumentError("dataset has more classes than the code matrix")
    if cfg.batch_size > dataset.size:
        raise InvalidArgumentError(
            f"batch_size {cfg.batch_size} exceeds the {dataset.size} samples"
        )


def _fit(
    model: EcnnModel,
    dataset: Dataset,
    cfg: TrainConfig,
    attack: Optional[AttackConfig],
) -> TrainResult:
    _check_fit(model, dataset, cfg)
    model = model.copy()
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    rng = substream(cfg.seed, "train")
    attack_rng = substream(cfg.seed, "attack")
    history: List[float] = []
    rates: List[float] = []

    for epoch in range(cfg.epochs):
        rate = cfg.learning_rate_at(epoch)
        order = rng.permutation(dataset.size)
        losses, weights = [], []
        for batch, start in enumerate(range(0, dataset.size, cfg.batch_size)):
            index = order[start : start + cfg.batch_size]
            xb, yb = dataset.X[index], dataset.y[index]
            if attack is not None:
                x_adv = pgd(model, xb, yb, attack, start=random_start(xb, attack, attack_rng))
                xb = np.concatenate([xb, x_adv])
                yb = np.concatenate([yb, yb])

            loss, grads = joint_loss_gradients(model, xb, yb, cfg.loss)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.params):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch + 1}, batch {batch + 1} "
                    f"(learning rate {rate:g}); lower the learning rate"
                )
            for param, grad, step in zip(params, grads.params, velocity):
                step *= cfg.momentum
                step -= rate * grad
                param += step
            losses.append(loss)
            weights.append(len(index))

        history.append(float(np.average(losses, weights=weights)))
        rates.append(rate)
        logger.info("Epoch %d/%d loss %.6f lr %.4g", epoch + 1, cfg.epochs, history[-1], rate)

    return TrainResult(model, history, rates)


def train(model: EcnnModel, dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """
    Mini-batch SGD with momentum on the joint loss, updating g1, every g2_n
    and the head together. The input model is left untouched.
    """
    if cfg.adversarial is not None:
        return adversarial_train(model, dataset, cfg)
    return _fit(model, dataset, cfg, attack=None)


def adversarial_train(model: EcnnModel, dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """
    Train on batches made of clean samples plus their PGD counterparts (1:1),
    crafted with softmax cross entropy against the current model.
    """
    if cfg.adversarial is None:
        raise InvalidArgumentError("adversarial training needs an attack config")
    attack = cfg.adversarial
    if attack.family is not AttackFamily.PGD:
        logger.warning(
            "Adversarial training crafts examples with PGD; ignoring family %s",
            attack.family.value,
        )
        attack = dataclasses.replace(attack, family=AttackFamily.PGD)
    return _fit(model, dataset, cfg, attack=attack)


@dataclass
class EvaluationReport:
    """Accuracy, per-class accuracy and the confusion matrix (rows: truth)."""

    accuracy: float
    per_class_accuracy: List[float]
    confusion: np.ndarray
    samples: int
    attack: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


def confusion_matrix(y: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y), np.asarray(predictions)), 1)
    return counts


def evaluate(
    model: EcnnModel,
    dataset: Dataset,
    attack: Optional[AttackConfig] = None,
    threads: Optional[int] = None,
) -> EvaluationReport:
    """Clean accuracy, or accuracy under ``attack``, with a per-class breakdown."""
    if attack is None:
        predictions = np.atleast_1d(predict(model, dataset.X))
    else:
        predictions = attack_dataset(model, dataset.X, dataset.y, attack, threads).predictions
    classes = model.code_matrix.num_classes
    confusion = confusion_matrix(dataset.y, predictions, classes)
    totals = confusion.sum(axis=1)
    per_class = [
        float(confusion[k, k] / totals[k]) if totals[k] else math.nan for k in range(classes)
    ]
    return EvaluationReport(
        accuracy=float(np.trace(confusion) / max(1, confusion.sum())),
        per_class_accuracy=per_class,
        confusion=confusion,
        samples=dataset.size,
        attack=attack.family.value if attack else None,
    )


def branch_predictions(model: EcnnModel, X: np.ndarray) -> np.ndarray:
    """Meta-class chosen by every branch, shape (K, N)."""
    zeta = branch_probabilities(encode(model, np.atleast_2d(X)).logits, model.is_qary)
    return np.argmax(zeta, axis=-1)


def transfer_matrix(
    model: EcnnModel,
    dataset: Dataset,
    cfg: AttackConfig,
    threads: Optional[int] = None,
) -> np.ndarray:
    """
    Entry (i, j): meta-class accuracy of branch j on PGD examples crafted
    against branch i alone.
    """
    labels = meta_labels(model.code_matrix, dataset.y)
    attack = dataclasses.replace(cfg, family=AttackFamily.PGD)
    size = model.code_length
    matrix = np.zeros((size, size))
    for i in range(size):
        outcome = attack_dataset(BranchScores(model, i), dataset.X, labels[:, i], attack, threads)
        meta = branch_predictions(model, outcome.adversarial)
        matrix[i] = np.mean(meta == labels, axis=0)
        logger.debug("Branch %d substitute: mean transfer accuracy %.4f", i, matrix[i].mean())
    return matrix


def off_diagonal_mean(matrix: np.ndarray) -> float:
    """Mean of the entries off the diagonal."""
    mask = ~np.eye(len(matrix), dtype=bool)
    return float(matrix[mask].mean()) if mask.any() else math.nan


def transfer_frame(matrix: np.ndarray) -> pd.DataFrame:
    """Transfer matrix as a labelled frame for CSV export."""
    labels = [f"branch_{n}" for n in range(len(matrix))]
    frame = pd.DataFrame(matrix, index=labels, columns=labels)
    frame.index.name = "substitute"
    return frame
