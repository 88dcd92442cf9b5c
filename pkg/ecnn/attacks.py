"""
White-box Attacks

FGSM, BIM, PGD (softmax cross entropy, decoder hinge and logit hinge
variants), JSMA and C&W L2 against any model exposing class scores and
their input gradients. Class scores are the decoder scores s before the
softmax; gradients never pass through a log of the decoder output.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import logsumexp

from ecnn.config import from_mapping, to_plain
from ecnn.errors import InvalidArgumentError
from ecnn.model import (
    EcnnModel,
    classify_logits,
    decoder_scores,
    decoder_scores_vjp,
    encode,
    encoder_backward,
    meta_labels,
)
from ecnn.netcore import softmax
from ecnn.seeding import substream

logger = logging.getLogger(__name__)


class ScoreModel(Protocol):
    """Anything with class scores and a vector-Jacobian product on them."""

    num_classes: int
    input_dim: int

    def scores(self, x: np.ndarray) -> np.ndarray:
        ...

    def scores_vjp(self, x: np.ndarray, score_grad: np.ndarray) -> np.ndarray:
        ...


class EcnnScores:
    """Decoder scores s = (2M - 1) tanh(z) of a full ECNN."""

    def __init__(self, model: EcnnModel):
        self.model = model
        self.num_classes = model.code_matrix.num_classes
        self.input_dim = model.input_dim

    def scores(self, x: np.ndarray) -> np.ndarray:
        return decoder_scores(encode(self.model, x).logits, self.model.code_matrix)

    def scores_vjp(self, x: np.ndarray, score_grad: np.ndarray) -> np.ndarray:
        output = encode(self.model, x)
        logit_grad = decoder_scores_vjp(output.logits, self.model.code_matrix, score_grad)
        return encoder_backward(self.model, output, logit_grad).input_grad


class BranchScores:
    """Scores of a single meta-classifier: [0, z_n] for one logit, z_n for q."""

    def __init__(self, model: EcnnModel, branch: int):
        if not 0 <= branch < model.code_length:
            raise InvalidArgumentError(f"branch {branch} outside [0, {model.code_length})")
        self.model = model
        self.branch = branch
        self.num_classes = model.alphabet
        self.input_dim = model.input_dim

    def scores(self, x: np.ndarray) -> np.ndarray:
        logits = encode(self.model, x).logits
        if self.model.is_qary:
            return logits[..., self.branch, :]
        z = logits[..., self.branch]
        return np.stack([np.zeros_like(z), z], axis=-1)

    def scores_vjp(self, x: np.ndarray, score_grad: np.ndarray) -> np.ndarray:
        output = encode(self.model, x)
        logit_grad = np.zeros_like(output.logits)
        if self.model.is_qary:
            logit_grad[..., self.branch, :] = score_grad
        else:
            logit_grad[..., self.branch] = np.asarray(score_grad)[..., 1]
        return encoder_backward(self.model, output, logit_grad).input_grad


def as_score_model(target: Any) -> ScoreModel:
    return EcnnScores(target) if isinstance(target, EcnnModel) else target


class AttackFamily(Enum):
    FGSM = "fgsm"
    BIM = "bim"
    PGD = "pgd"
    PGD_HINGE = "pgd_hinge"
    PGD_LOGITS = "pgd_logits"
    JSMA = "jsma"
    CW_L2 = "cw_l2"


class Objective(Enum):
    """Losses the L-infinity attacks ascend."""

    CROSS_ENTROPY = "cross_entropy"
    DECODER_HINGE = "decoder_hinge"
    LOGIT_HINGE = "logit_hinge"


@dataclass(frozen=True)
class AttackConfig:
    """Attack family and its knobs; clip bounds may be scalars or per-feature."""

    family: AttackFamily = AttackFamily.PGD
    epsilon: float = 0.1
    step_alpha: float = 0.01
    iterations: int = 20
    kappa: float = 1.0
    jsma_theta: float = 1.0
    jsma_gamma: float = 0.1
    jsma_max_iterations: int = 1000
    cw_c: float = 1.0
    cw_step: float = 1e-2
    cw_iterations: int = 1000
    hinge_c: float = 50.0
    random_start_radius: Optional[float] = None
    seed: int = 0
    clip_min: Any = 0.0
    clip_max: Any = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.family, str):
            object.__setattr__(self, "family", AttackFamily(self.family))
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be non-negative")
        if not self.step_alpha > 0 or self.iterations < 1:
            raise InvalidArgumentError("step_alpha must be positive and iterations >= 1")
        span = np.atleast_1d(np.asarray(self.clip_max, dtype=np.float64) - self.clip_min)
        if np.any(span < 0):
            raise InvalidArgumentError("clip_min must not exceed clip_max")
        # constant features (span 0) stay pinned by clip_box
        narrow = np.flatnonzero((span > 0) & (self.epsilon > span))
        if narrow.size:
            feature = int(narrow[0])
            raise InvalidArgumentError(
                f"epsilon {self.epsilon:g} exceeds the clip range {span[feature]:.4g} of "
                f"feature {feature}; scale features to [0, 1] with --scale or lower --epsilon"
            )
        if not 0 < self.jsma_gamma <= 1 or not self.jsma_theta > 0:
            raise InvalidArgumentError("jsma_gamma must lie in (0, 1] and jsma_theta > 0")
        if not self.cw_c >= 0 or not self.cw_step > 0 or self.cw_iterations < 1:
            raise InvalidArgumentError("invalid C&W settings")
        if self.kappa < 0 or not self.hinge_c > 0:
            raise InvalidArgumentError("kappa must be >= 0 and hinge_c > 0")
        if self.random_start_radius is not None and self.random_start_radius < 0:
            raise InvalidArgumentError("random_start_radius must be non-negative")

    @property
    def start_radius(self) -> float:
        return self.epsilon if self.random_start_radius is None else self.random_start_radius

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackConfig":
        return from_mapping(cls, data)


def clip_box(x_adv: np.ndarray, x: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """min{clip_max, x + eps, max{clip_min, x - eps, x'}} per feature."""
    low = np.maximum(np.asarray(cfg.clip_min, dtype=np.float64), x - cfg.epsilon)
    high = np.minimum(np.asarray(cfg.clip_max, dtype=np.float64), x + cfg.epsilon)
    return np.minimum(high, np.maximum(low, x_adv))


def _one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    return np.eye(width)[labels]


def _margin(scores: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """s_y - max_{i != y} s_i and the index of the runner-up."""
    others = scores.copy()
    np.put_along_axis(others, y[..., None], -np.inf, axis=-1)
    rival = np.argmax(others, axis=-1)
    true = np.take_along_axis(scores, y[..., None], axis=-1)[..., 0]
    best_other = np.take_along_axis(scores, rival[..., None], axis=-1)[..., 0]
    return true - best_other, rival


def _hinge_on_scores(
    scores: np.ndarray, y: np.ndarray, c: float
) -> Tuple[np.ndarray, np.ndarray]:
    """-max(s_y - max_{i != y} s_i + c, 0) and its score gradient."""
    margin, rival = _margin(scores, y)
    active = (margin + c > 0).astype(np.float64)
    width = scores.shape[-1]
    grad = -(_one_hot(y, width) - _one_hot(rival, width)) * active[..., None]
    return -np.maximum(margin + c, 0.0), grad


def attack_objective(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    objective: Objective,
    hinge_c: float = 50.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-sample attack loss (to be ascended) and its input gradient.

    Args:
        target: EcnnModel or ScoreModel; LOGIT_HINGE needs an EcnnModel
        x: Batch of inputs (B, d)
        y: True class of each sample
        objective: Which loss to evaluate
        hinge_c: Margin constant of the hinge objectives

    Returns:
        (values of shape (B,), gradient of their sum with shape (B, d))
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)

    if objective is Objective.LOGIT_HINGE:
        if not isinstance(target, EcnnModel):
            raise InvalidArgumentError("the logit hinge objective needs an ECNN model")
        output = encode(target, x)
        labels = meta_labels(target.code_matrix, y)
        z = output.logits
        per_branch = z if target.is_qary else np.stack([np.zeros_like(z), z], axis=-1)
        values, score_grad = _hinge_on_scores(per_branch, labels, hinge_c)
        logit_grad = score_grad if target.is_qary else score_grad[..., 1]
        gradient = encoder_backward(target, output, logit_grad).input_grad
        return values.sum(axis=1), gradient

    scorer = as_score_model(target)
    scores = scorer.scores(x)
    if objective is Objective.CROSS_ENTROPY:
        true = np.take_along_axis(scores, y[:, None], axis=-1)[:, 0]
        values = logsumexp(scores, axis=-1) - true
        score_grad = softmax(scores, axis=-1) - _one_hot(y, scores.shape[-1])
    else:
        values, score_grad = _hinge_on_scores(scores, y, hinge_c)
    return values, scorer.scores_vjp(x, score_grad)


def fgsm(target: Any, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """
    Fast gradient sign method.

    Args:
        target: Model under attack
        x: Clean inputs
        y: True classes
        cfg: Uses epsilon and the clip bounds

    Returns:
        Adversarial inputs within the epsilon box
    """
    x = np.asarray(x, dtype=np.float64)
    _, grad = attack_objective(target, x, y, Objective.CROSS_ENTROPY)
    return clip_box(x + cfg.epsilon * np.sign(grad.reshape(x.shape)), x, cfg)


def _iterate(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    objective: Objective,
    start: np.ndarray,
) -> np.ndarray:
    x_adv = start
    for _ in range(cfg.iterations):
        _, grad = attack_objective(target, x_adv, y, objective, cfg.hinge_c)
        x_adv = clip_box(x_adv + cfg.step_alpha * np.sign(grad.reshape(x.shape)), x, cfg)
    return x_adv


def bim(target: Any, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Basic iterative method: FGSM steps of size alpha from x, kept in the box."""
    x = np.asarray(x, dtype=np.float64)
    return _iterate(target, x, y, cfg, Objective.CROSS_ENTROPY, x.copy())


def random_start(
    x: np.ndarray, cfg: AttackConfig, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Uniform start point in the box around x."""
    x = np.asarray(x, dtype=np.float64)
    rng = rng or substream(cfg.seed, "attack")
    radius = cfg.start_radius
    noise = rng.uniform(-radius, radius, size=x.shape) if radius > 0 else np.zeros_like(x)
    return clip_box(x + noise, x, cfg)


def _pgd(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    objective: Objective,
    start: Optional[np.ndarray],
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if start is None:
        start = random_start(x, cfg)
    return _iterate(target, x, y, cfg, objective, start)


def pgd(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Projected gradient descent on softmax cross entropy from a random start."""
    return _pgd(target, x, y, cfg, Objective.CROSS_ENTROPY, start)


def pgd_hinge(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """PGD on -max(s_y - max_{i != y} s_i + c, 0) over the decoder scores."""
    return _pgd(target, x, y, cfg, Objective.DECODER_HINGE, start)


def pgd_logits(
    model: EcnnModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """PGD on the branch-summed hinge of the encoder logits against the meta-labels."""
    return _pgd(model, x, y, cfg, Objective.LOGIT_HINGE, start)


@dataclass
class JsmaOutcome:
    adversarial: np.ndarray
    success: np.ndarray
    modified_features: np.ndarray


def score_jacobian(target: Any, x: np.ndarray) -> np.ndarray:
    """d s_j / d x_i for one sample, shape (classes, features)."""
    scorer = as_score_model(target)
    copies = np.repeat(np.asarray(x, dtype=np.float64)[None, :], scorer.num_classes, axis=0)
    return scorer.scores_vjp(copies, np.eye(scorer.num_classes))


def jsma_saliency(jacobian: np.ndarray, target_class: int) -> np.ndarray:
    """-alpha * beta gated on alpha > 0 and beta < 0, per feature."""
    alpha = jacobian[target_class]
    beta = jacobian.sum(axis=0) - alpha
    return -alpha * beta * (alpha > 0) * (beta < 0)


def _jsma_single(
    scorer: ScoreModel, x: np.ndarray, target_class: int, cfg: AttackConfig
) -> Tuple[np.ndarray, bool, int]:
    x_adv = x.copy()
    high = np.broadcast_to(np.asarray(cfg.clip_max, dtype=np.float64), x.shape)
    budget = int(np.floor(cfg.jsma_gamma * x.size))
    modified: set = set()
    for _ in range(cfg.jsma_max_iterations):
        if int(np.argmax(scorer.scores(x_adv[None, :])[0])) == target_class:
            return x_adv, True, len(modified)
        saliency = jsma_saliency(score_jacobian(scorer, x_adv), target_class)
        saliency[x_adv >= high] = 0.0
        if budget <= len(modified):
            saliency[[i for i in range(x.size) if i not in modified]] = 0.0
        feature = int(np.argmax(saliency))
        if saliency[feature] <= 0:
            break
        x_adv[feature] = min(high[feature], x_adv[feature] + cfg.jsma_theta)
        modified.add(feature)
    success = int(np.argmax(scorer.scores(x_adv[None, :])[0])) == target_class
    return x_adv, success, len(modified)


def jsma(
    target: Any,
    x: np.ndarray,
    target_class: Union[int, np.ndarray],
    cfg: AttackConfig,
    y: Optional[np.ndarray] = None,
) -> JsmaOutcome:
    """
    Jacobian-based saliency map attack, raising one feature at a time.

    Stops when the target class wins, when no feature has positive saliency,
    when floor(jsma_gamma * features) distinct features are used up, or after
    jsma_max_iterations steps.

    Raises:
        InvalidArgumentError: a target equals the true class ``y``
    """
    scorer = as_score_model(target)
    batch = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.broadcast_to(np.asarray(target_class), (batch.shape[0],))
    if y is not None and np.any(targets == np.broadcast_to(np.asarray(y), targets.shape)):
        raise InvalidArgumentError("JSMA targets must differ from the true class")
    results = [_jsma_single(scorer, row, int(t), cfg) for row, t in zip(batch, targets)]
    adversarial = np.stack([r[0] for r in results])
    success = np.array([r[1] for r in results])
    modified = np.array([r[2] for r in results])
    if np.ndim(x) == 1:
        return JsmaOutcome(adversarial[0], success[:1], modified[:1])
    return JsmaOutcome(adversarial, success, modified)


def random_targets(
    y: np.ndarray, num_classes: int, rng: np.random.Generator
) -> np.ndarray:
    """A uniformly random class other than the true one, per sample."""
    y = np.atleast_1d(np.asarray(y))
    offsets = rng.integers(1, num_classes, size=y.shape)
    return (y + offsets) % num_classes


@dataclass
class CwOutcome:
    adversarial: np.ndarray
    success: np.ndarray
    l2: np.ndarray


def _to_box(omega: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(omega) + 1.0)


def cw_objective(
    target: Any, x: np.ndarray, x_adv: np.ndarray, y: np.ndarray, cfg: AttackConfig
) -> np.ndarray:
    """||x' - x||^2 + c * max(Z_y - max_{i != y} Z_i + kappa, 0), per sample."""
    scorer = as_score_model(target)
    x_adv = np.atleast_2d(x_adv)
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    margin, _ = _margin(scorer.scores(x_adv), y)
    distortion = np.sum((x_adv - np.atleast_2d(x)) ** 2, axis=-1)
    return distortion + cfg.cw_c * np.maximum(margin + cfg.kappa, 0.0)


def cw_l2(target: Any, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> CwOutcome:
    """
    Carlini-Wagner L2 attack with the tanh change of variables.

    Plain gradient descent with a fixed step; the lowest-distortion
    misclassified iterate is returned, else the last one.

    Raises:
        InvalidArgumentError: a feature lies outside [0, 1]
    """
    scorer = as_score_model(target)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise InvalidArgumentError("C&W L2 needs features scaled to [0, 1]")

    inner = np.clip(x, 1e-12, 1.0 - 1e-12)
    omega = np.arctanh(2.0 * inner - 1.0)
    best = x.copy()
    best_l2 = np.full(x.shape[0], np.inf)
    found = np.zeros(x.shape[0], dtype=bool)
    x_adv = _to_box(omega)

    for _ in range(cfg.cw_iterations):
        x_adv = _to_box(omega)
        scores = scorer.scores(x_adv)
        margin, rival = _margin(scores, y)
        l2 = np.sqrt(np.sum((x_adv - x) ** 2, axis=-1))
        wins = (np.argmax(scores, axis=-1) != y) & (l2 < best_l2)
        best[wins], best_l2[wins], found[wins] = x_adv[wins], l2[wins], True

        active = (margin + cfg.kappa > 0).astype(np.float64)
        width = scores.shape[-1]
        score_grad = (_one_hot(y, width) - _one_hot(rival, width)) * active[:, None]
        grad_x = 2.0 * (x_adv - x) + cfg.cw_c * scorer.scores_vjp(x_adv, score_grad)
        omega = omega - cfg.cw_step * grad_x * 0.5 * (1.0 - np.tanh(omega) ** 2)

    final = _to_box(omega)
    final_scores = scorer.scores(final)
    final_l2 = np.sqrt(np.sum((final - x) ** 2, axis=-1))
    wins = (np.argmax(final_scores, axis=-1) != y) & (final_l2 < best_l2)
    best[wins], best_l2[wins], found[wins] = final[wins], final_l2[wins], True

    adversarial = np.where(found[:, None], best, final)
    l2_out = np.where(found, best_l2, final_l2)
    return CwOutcome(adversarial, found, l2_out)


@dataclass
class AttackOutcome:
    """Adversarial inputs plus per-sample predictions and distortions."""

    family: AttackFamily
    adversarial: np.ndarray
    predictions: np.ndarray
    success: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    targets: Optional[np.ndarray] = None


def draw_randomness(
    x: np.ndarray, y: np.ndarray, num_classes: int, cfg: AttackConfig
) -> Dict[str, np.ndarray]:
    """All random draws of a run, made up front so chunking cannot change them."""
    rng = substream(cfg.seed, "attack")
    draws: Dict[str, np.ndarray] = {}
    if cfg.family in (AttackFamily.PGD, AttackFamily.PGD_HINGE, AttackFamily.PGD_LOGITS):
        draws["start"] = random_start(x, cfg, rng)
    if cfg.family is AttackFamily.JSMA:
        draws["targets"] = random_targets(y, num_classes, rng)
    return draws


def _predict(target: Any, x: np.ndarray) -> np.ndarray:
    if isinstance(target, EcnnModel):
        return np.atleast_1d(classify_logits(encode(target, x).logits, target.code_matrix))
    return np.argmax(target.scores(x), axis=-1)


def run_attack(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    draws: Optional[Dict[str, np.ndarray]] = None,
) -> AttackOutcome:
    """Dispatch on ``cfg.family`` and measure the outcome on a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if draws is None:
        draws = draw_randomness(x, y, as_score_model(target).num_classes, cfg)

    family = cfg.family
    targets = None
    if family is AttackFamily.FGSM:
        adversarial = fgsm(target, x, y, cfg)
    elif family is AttackFamily.BIM:
        adversarial = bim(target, x, y, cfg)
    elif family is AttackFamily.PGD:
        adversarial = pgd(target, x, y, cfg, start=draws["start"])
    elif family is AttackFamily.PGD_HINGE:
        adversarial = pgd_hinge(target, x, y, cfg, start=draws["start"])
    elif family is AttackFamily.PGD_LOGITS:
        adversarial = pgd_logits(target, x, y, cfg, start=draws["start"])
    elif family is AttackFamily.JSMA:
        targets = draws["targets"]
        adversarial = jsma(target, x, targets, cfg, y).adversarial
    else:
        adversarial = cw_l2(target, x, y, cfg).adversarial

    predictions = _predict(target, adversarial)
    success = predictions == targets if targets is not None else predictions != y
    delta = adversarial - x
    return AttackOutcome(
        family=family,
        adversarial=adversarial,
        predictions=predictions,
        success=success,
        l2=np.sqrt(np.sum(delta**2, axis=-1)),
        linf=np.max(np.abs(delta), axis=-1),
        targets=targets,
    )


def _chunks(count: int, parts: int) -> List[Tuple[int, int]]:
    bounds = np.linspace(0, count, num=max(1, min(parts, count)) + 1, dtype=int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def attack_dataset(
    target: Any,
    x: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    threads: Optional[int] = None,
) -> AttackOutcome:
    """
    Attack every sample, spreading contiguous chunks over joblib threads.

    Random draws are made for the whole set first, so the result does not
    depend on the thread count.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    draws = draw_randomness(x, y, as_score_model(target).num_classes, cfg)
    spans = _chunks(len(x), threads or 1)

    def work(span: Tuple[int, int]) -> AttackOutcome:
        a, b = span
        return run_attack(target, x[a:b], y[a:b], cfg, {k: v[a:b] for k, v in draws.items()})

    pool = Parallel(n_jobs=max(1, len(spans)), prefer="threads")
    parts = pool(delayed(work)(span) for span in spans)

    outcome = AttackOutcome(
        family=cfg.family,
        adversarial=np.concatenate([p.adversarial for p in parts]),
        predictions=np.concatenate([p.predictions for p in parts]),
        success=np.concatenate([p.success for p in parts]),
        l2=np.concatenate([p.l2 for p in parts]),
        linf=np.concatenate([p.linf for p in parts]),
        targets=draws.get("targets"),
    )
    logger.info(
        "%s on %d samples: accuracy %.4f, mean L2 %.4g",
        cfg.family.value,
        len(y),
        float(np.mean(outcome.predictions == y)),
        float(np.mean(outcome.l2)) if len(y) else 0.0,
    )
    return outcome


def adversarial_accuracy(
    model: Any, dataset: Any, cfg: AttackConfig, threads: Optional[int] = None
) -> float:
    """Fraction of attacked samples still classified correctly."""
    outcome = attack_dataset(model, dataset.X, dataset.y, cfg, threads)
    return float(np.mean(outcome.predictions == np.asarray(dataset.y)))


def attack_records(
    outcome: AttackOutcome,
    y: np.ndarray,
    cfg: AttackConfig,
    sample_ids: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """One CSV row per attacked sample."""
    y = np.asarray(y)
    ids = np.arange(len(y)) if sample_ids is None else np.asarray(sample_ids)
    return pd.DataFrame(
        {
            "sample_id": ids,
            "attack_family": cfg.family.value,
            "epsilon": cfg.epsilon,
            "step_alpha": cfg.step_alpha,
            "iterations": cfg.iterations,
            "true_class": y,
            "predicted_class": outcome.predictions,
            "success": outcome.success.astype(bool),
            "l2_distortion": outcome.l2,
            "linf_distortion": outcome.linf,
        }
    )
