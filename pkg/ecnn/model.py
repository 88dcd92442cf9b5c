"""
Error-Correcting Neural Network

The encoder is a bank of N meta-classifiers: a shared front network g1,
one branch network g2_n per code-matrix column and a shared linear head
phi. The decoder correlates the (tanh-squashed) logits with the +-1
codewords and picks the nearest class.

Binary matrices use one logit per branch, zeta_n = [1 - nu(z_n), nu(z_n)].
q-ary matrices use q logits per branch with zeta_n = softmax(z_n).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import bisect, minimize_scalar
from scipy.special import entr, expit, log_softmax, logsumexp

from ecnn import codebook
from ecnn.codebook import CodeMatrix
from ecnn.config import from_mapping, to_plain
from ecnn.errors import InvalidArgumentError, NoRootError, ParseError
from ecnn.netcore import Activation, DenseNet, ForwardCache, backward, forward, softmax

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ecnn-model/1"


class LossKind(Enum):
    """Per-branch encoder losses."""

    HINGE = "hinge"
    CROSS_ENTROPY = "cross_entropy"
    MULTICLASS_HINGE = "multiclass_hinge"


@dataclass(frozen=True)
class LossConfig:
    """Encoder loss choice, diversity weight gamma and q-ary hinge confidence kappa."""

    loss_kind: LossKind = LossKind.CROSS_ENTROPY
    gamma: float = 0.0
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.loss_kind, str):
            object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if self.gamma < 0 or self.kappa < 0:
            raise InvalidArgumentError("gamma and kappa must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossConfig":
        return from_mapping(cls, data)


@dataclass
class EcnnModel:
    """Shared front, per-column branches and a shared (or per-branch) linear head."""

    shared_front: DenseNet
    branches: List[DenseNet]
    shared_head: Optional[DenseNet]
    code_matrix: CodeMatrix
    feature_dim: int
    branch_heads: Optional[List[DenseNet]] = None

    def __post_init__(self) -> None:
        if (self.shared_head is None) == (self.branch_heads is None):
            raise InvalidArgumentError("give either a shared head or per-branch heads")
        if len(self.branches) != self.code_matrix.code_length:
            raise InvalidArgumentError(
                f"{len(self.branches)} branches for a code length of "
                f"{self.code_matrix.code_length}"
            )
        width = self.shared_front.output_dim
        for index, branch in enumerate(self.branches):
            if branch.input_dim != width or branch.output_dim != self.feature_dim:
                raise InvalidArgumentError(
                    f"branch {index} maps {branch.input_dim}->{branch.output_dim}, "
                    f"expected {width}->{self.feature_dim}"
                )
        for head in self.heads():
            if len(head.layers) != 1 or head.layers[0].activation is not Activation.IDENTITY:
                raise InvalidArgumentError("the head must be a single linear layer")
            if head.input_dim != self.feature_dim or head.output_dim != self.logits_per_branch:
                raise InvalidArgumentError(
                    f"head maps {head.input_dim}->{head.output_dim}, expected "
                    f"{self.feature_dim}->{self.logits_per_branch}"
                )

    @property
    def code_length(self) -> int:
        return self.code_matrix.code_length

    @property
    def alphabet(self) -> int:
        return self.code_matrix.alphabet

    @property
    def is_qary(self) -> bool:
        return self.code_matrix.alphabet > 2

    @property
    def logits_per_branch(self) -> int:
        return self.alphabet if self.is_qary else 1

    @property
    def input_dim(self) -> int:
        return self.shared_front.input_dim

    @property
    def shares_head(self) -> bool:
        return self.shared_head is not None

    def head(self, n: int) -> DenseNet:
        if self.shared_head is not None:
            return self.shared_head
        assert self.branch_heads is not None
        return self.branch_heads[n]

    def heads(self) -> List[DenseNet]:
        if self.shared_head is not None:
            return [self.shared_head]
        assert self.branch_heads is not None
        return list(self.branch_heads)

    def networks(self) -> List[DenseNet]:
        """Every distinct network, front first, heads last."""
        return [self.shared_front, *self.branches, *self.heads()]

    def parameters(self) -> List[np.ndarray]:
        """Live parameter arrays in the order of :meth:`networks`."""
        return [p for net in self.networks() for p in net.parameters()]

    def copy(self) -> "EcnnModel":
        return EcnnModel(
            shared_front=self.shared_front.copy(),
            branches=[b.copy() for b in self.branches],
            shared_head=self.shared_head.copy() if self.shared_head else None,
            code_matrix=self.code_matrix,
            feature_dim=self.feature_dim,
            branch_heads=[h.copy() for h in self.branch_heads] if self.branch_heads else None,
        )

    def is_finite(self) -> bool:
        return all(net.is_finite() for net in self.networks())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "feature_dim": self.feature_dim,
            "code_matrix": codebook.to_dict(self.code_matrix),
            "shared_front": self.shared_front.to_dict(),
            "branches": [b.to_dict() for b in self.branches],
            "shared_head": self.shared_head.to_dict() if self.shared_head else None,
            "branch_heads": (
                [h.to_dict() for h in self.branch_heads] if self.branch_heads else None
            ),
        }

    @classmethod
    def from_dict(cls, payload: Any, source: str = "") -> "EcnnModel":
        if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"not a {CHECKPOINT_FORMAT} checkpoint", source=source)
        try:
            heads = payload.get("branch_heads")
            head = payload.get("shared_head")
            return cls(
                shared_front=DenseNet.from_dict(payload["shared_front"], source),
                branches=[DenseNet.from_dict(b, source) for b in payload["branches"]],
                shared_head=DenseNet.from_dict(head, source) if head else None,
                code_matrix=codebook.from_dict(payload["code_matrix"], source),
                feature_dim=int(payload["feature_dim"]),
                branch_heads=[DenseNet.from_dict(h, source) for h in heads] if heads else None,
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"incomplete model checkpoint: {exc}", source=source) from exc
        except ParseError:
            raise
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), source=source) from exc


@dataclass
class EncoderTrace:
    front_cache: ForwardCache
    branch_caches: List[ForwardCache]
    head_caches: List[ForwardCache]


@dataclass
class EncoderOutput:
    """Logits z (B, N) or (B, N, q) and branch features f (B, N, F)."""

    logits: np.ndarray
    features: np.ndarray
    trace: Optional[EncoderTrace] = field(default=None, repr=False)
    batched: bool = True


@dataclass
class ModelGradients:
    """Gradients aligned with :meth:`EcnnModel.parameters`, plus the input gradient."""

    params: List[np.ndarray]
    input_grad: np.ndarray


def encode(model: EcnnModel, x: np.ndarray) -> EncoderOutput:
    """Run g1, every g2_n and the head; ``x`` may be one sample or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.input_dim:
        raise InvalidArgumentError(
            f"expected inputs of width {model.input_dim}, got shape {x.shape}"
        )
    batched = x.ndim == 2
    batch = x if batched else x[None, :]

    front, front_cache = forward(model.shared_front, batch)
    features, logits, branch_caches, head_caches = [], [], [], []
    for n, branch in enumerate(model.branches):
        f_n, branch_cache = forward(branch, front)
        z_n, head_cache = forward(model.head(n), f_n)
        features.append(f_n)
        logits.append(z_n)
        branch_caches.append(branch_cache)
        head_caches.append(head_cache)

    z = np.stack(logits, axis=1)
    if not model.is_qary:
        z = z[..., 0]
    f = np.stack(features, axis=1)
    trace = EncoderTrace(front_cache, branch_caches, head_caches)
    if not batched:
        return EncoderOutput(z[0], f[0], trace, batched=False)
    return EncoderOutput(z, f, trace, batched=True)


def encoder_backward(
    model: EcnnModel, output: EncoderOutput, logit_grad: np.ndarray
) -> ModelGradients:
    """Pull a logit gradient back through head, branches and front."""
    if output.trace is None:
        raise InvalidArgumentError("encoder output carries no trace for backward")
    grad = np.asarray(logit_grad, dtype=np.float64)
    if grad.shape != output.logits.shape:
        raise InvalidArgumentError(
            f"logit gradient shape {grad.shape} does not match {output.logits.shape}"
        )
    if not output.batched:
        grad = grad[None, ...]
    if not model.is_qary:
        grad = grad[..., None]

    trace = output.trace
    front_grad = np.zeros_like(trace.front_cache.post[-1])
    branch_grads = []
    head_grads: List[List[np.ndarray]] = [
        [np.zeros_like(p) for p in head.parameters()] for head in model.heads()
    ]
    for n, branch in enumerate(model.branches):
        head_bundle = backward(model.head(n), trace.head_caches[n], grad[:, n, :])
        slot = 0 if model.shares_head else n
        for acc, g in zip(head_grads[slot], head_bundle.flat()):
            acc += g
        branch_bundle = backward(branch, trace.branch_caches[n], head_bundle.input_grad)
        branch_grads.append(branch_bundle.flat())
        front_grad += branch_bundle.input_grad

    front_bundle = backward(model.shared_front, trace.front_cache, front_grad)
    params = front_bundle.flat()
    for flat in branch_grads:
        params.extend(flat)
    for flat in head_grads:
        params.extend(flat)
    input_grad = front_bundle.input_grad
    return ModelGradients(params, input_grad if output.batched else input_grad[0])


def meta_labels(m: CodeMatrix, y: Union[int, np.ndarray]) -> np.ndarray:
    """Row y of the code matrix: the target symbol of every branch."""
    labels = np.asarray(y)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError("class labels must be integers")
    if np.any(labels < 0) or np.any(labels >= m.num_classes):
        raise InvalidArgumentError(f"class label outside [0, {m.num_classes})")
    return m.entries[labels]


def _as_batch(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    qary = z.ndim == y.ndim + 1
    if z.ndim - int(qary) == 1:
        z, y = z[None, ...], y[None, ...]
    if z.shape[:2] != y.shape:
        raise InvalidArgumentError(f"logits {z.shape} and labels {y.shape} disagree")
    return z, y, qary


def _check_labels(y: np.ndarray, alphabet: int) -> None:
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidArgumentError("meta-labels must be integers")
    if np.any(y < 0) or np.any(y >= alphabet):
        raise InvalidArgumentError(f"meta-label outside the alphabet [0, {alphabet})")


def _multiclass_hinge(
    s: np.ndarray, y: np.ndarray, kappa: float
) -> Tuple[np.ndarray, np.ndarray]:
    """max(max_{i != y} s_i - s_y + kappa, 0) and its gradient, over the last axis."""
    true = np.take_along_axis(s, y[..., None], axis=-1)[..., 0]
    others = s.copy()
    np.put_along_axis(others, y[..., None], -np.inf, axis=-1)
    rival = np.argmax(others, axis=-1)
    margin = np.take_along_axis(s, rival[..., None], axis=-1)[..., 0] - true + kappa
    active = (margin > 0).astype(np.float64)
    grad = np.zeros_like(s)
    np.put_along_axis(grad, rival[..., None], active[..., None], axis=-1)
    np.put_along_axis(grad, y[..., None], -active[..., None], axis=-1)
    return np.maximum(margin, 0.0), grad


def encoder_loss_and_grad(
    logits: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> Tuple[float, np.ndarray]:
    """Encoder loss averaged over N branches and K samples, and d loss / d logits."""
    z, y, qary = _as_batch(logits, labels)
    scale = 1.0 / (z.shape[0] * z.shape[1])

    if not qary:
        _check_labels(y, 2)
        target = y.astype(np.float64)
        if cfg.loss_kind is LossKind.HINGE:
            sign = 2.0 * target - 1.0
            margin = 1.0 - z * sign
            terms = np.maximum(margin, 0.0)
            grad = -sign * (margin > 0)
        elif cfg.loss_kind is LossKind.CROSS_ENTROPY:
            terms = np.logaddexp(0.0, z) - target * z
            grad = expit(z) - target
        else:
            pair = np.stack([np.zeros_like(z), z], axis=-1)
            terms, pair_grad = _multiclass_hinge(pair, y, cfg.kappa)
            grad = pair_grad[..., 1]
    else:
        _check_labels(y, z.shape[-1])
        if cfg.loss_kind is LossKind.MULTICLASS_HINGE:
            terms, grad = _multiclass_hinge(z, y, cfg.kappa)
        elif cfg.loss_kind is LossKind.CROSS_ENTROPY:
            true = np.take_along_axis(z, y[..., None], axis=-1)[..., 0]
            terms = logsumexp(z, axis=-1) - true
            grad = softmax(z, axis=-1)
            np.put_along_axis(
                grad, y[..., None], np.take_along_axis(grad, y[..., None], -1) - 1.0, -1
            )
        else:
            raise InvalidArgumentError("the binary hinge loss needs one logit per branch")

    grad = grad * scale
    return float(terms.sum() * scale), grad.reshape(np.shape(logits))


def branch_probabilities(logits: np.ndarray, qary: bool) -> np.ndarray:
    """zeta per branch: [1 - nu(z), nu(z)] for one logit, softmax for q logits."""
    z = np.asarray(logits, dtype=np.float64)
    if qary:
        return softmax(z, axis=-1)
    return np.stack([expit(-z), expit(z)], axis=-1)


def diversity_and_grad(logits: np.ndarray, qary: bool) -> Tuple[float, np.ndarray]:
    """Mean Shannon entropy of the branch outputs and its logit gradient."""
    z = np.asarray(logits, dtype=np.float64)
    if not qary:
        nu = expit(z)
        entropy = entr(nu) + entr(expit(-z))
        grad = -z * nu * (1.0 - nu)
    else:
        log_p = log_softmax(z, axis=-1)
        p = np.exp(log_p)
        per_branch = -np.sum(p * log_p, axis=-1)
        entropy = per_branch
        grad = -p * (log_p + per_branch[..., None])
    count = entropy.size
    return float(entropy.sum() / count), grad / count


def encoder_loss(output: EncoderOutput, labels: np.ndarray, cfg: LossConfig) -> float:
    """Hinge, cross-entropy or multiclass-hinge loss with weight 1/(NK)."""
    return encoder_loss_and_grad(output.logits, labels, cfg)[0]


def _is_qary(output: EncoderOutput) -> bool:
    return output.logits.ndim == (3 if output.batched else 2)


def diversity_term(output: EncoderOutput) -> float:
    """Mean entropy H(zeta) over branches and samples."""
    return diversity_and_grad(output.logits, _is_qary(output))[0]


def joint_loss_and_grad(
    logits: np.ndarray, labels: np.ndarray, cfg: LossConfig, qary: bool
) -> Tuple[float, np.ndarray]:
    """encoder loss - gamma * diversity, with its logit gradient."""
    loss, grad = encoder_loss_and_grad(logits, labels, cfg)
    if cfg.gamma == 0:
        return loss, grad
    diversity, diversity_grad = diversity_and_grad(logits, qary)
    return loss - cfg.gamma * diversity, grad - cfg.gamma * diversity_grad


def joint_loss(output: EncoderOutput, labels: np.ndarray, cfg: LossConfig) -> float:
    return joint_loss_and_grad(output.logits, labels, cfg, _is_qary(output))[0]


def joint_loss_gradients(
    model: EcnnModel, x: np.ndarray, y: np.ndarray, cfg: LossConfig
) -> Tuple[float, ModelGradients]:
    """Joint loss on class labels ``y`` and its gradient for every parameter."""
    output = encode(model, x)
    labels = meta_labels(model.code_matrix, y)
    loss, logit_grad = joint_loss_and_grad(output.logits, labels, cfg, model.is_qary)
    return loss, encoder_backward(model, output, logit_grad)


def _decoder_layout(z: np.ndarray, m: CodeMatrix) -> str:
    if m.alphabet == 2 and z.shape[-1] == m.code_length:
        return "binary"
    if z.shape[-1] == m.alphabet * m.code_length:
        return "flat"
    if z.ndim >= 2 and z.shape[-2:] == (m.code_length, m.alphabet):
        return "blocks"
    raise InvalidArgumentError(
        f"logits of shape {z.shape} fit neither {m.code_length} binary logits "
        f"nor {m.code_length} blocks of {m.alphabet}"
    )


def decoder_scores(z: np.ndarray, m: CodeMatrix) -> np.ndarray:
    """Class scores s: correlation of squashed logits with the +-1 codewords."""
    z = np.asarray(z, dtype=np.float64)
    layout = _decoder_layout(z, m)
    if layout == "binary":
        return np.tanh(z) @ m.signed().T
    blocks = z.reshape(z.shape[:-1] + (m.code_length, m.alphabet)) if layout == "flat" else z
    probabilities = softmax(blocks, axis=-1)
    flat = probabilities.reshape(blocks.shape[:-2] + (m.code_length * m.alphabet,))
    return flat @ codebook.binary_expansion(m).signed().T


def decoder_scores_vjp(z: np.ndarray, m: CodeMatrix, score_grad: np.ndarray) -> np.ndarray:
    """Gradient of ``decoder_scores(z) . score_grad`` with respect to z."""
    z = np.asarray(z, dtype=np.float64)
    score_grad = np.asarray(score_grad, dtype=np.float64)
    layout = _decoder_layout(z, m)
    if layout == "binary":
        return (score_grad @ m.signed()) * (1.0 - np.tanh(z) ** 2)
    blocks = z.reshape(z.shape[:-1] + (m.code_length, m.alphabet)) if layout == "flat" else z
    probabilities = softmax(blocks, axis=-1)
    upstream = (score_grad @ codebook.binary_expansion(m).signed()).reshape(blocks.shape)
    inner = np.sum(probabilities * upstream, axis=-1, keepdims=True)
    grad = probabilities * (upstream - inner)
    return grad.reshape(z.shape)


def decode(z: np.ndarray, m: CodeMatrix) -> np.ndarray:
    """Class probabilities softmax(s); no log is applied to the scores."""
    return softmax(decoder_scores(z, m), axis=-1)


def classify_logits(z: np.ndarray, m: CodeMatrix) -> Union[int, np.ndarray]:
    """Argmax class of the decoder; ties go to the lowest index."""
    scores = decoder_scores(z, m)
    choice = np.argmax(scores, axis=-1)
    return int(choice) if choice.ndim == 0 else choice


def predict(model: EcnnModel, x: np.ndarray) -> Union[int, np.ndarray]:
    """Predicted class of one sample (int) or of a batch (array)."""
    return classify_logits(encode(model, x).logits, model.code_matrix)


def parameter_count(model: EcnnModel) -> int:
    """|g1| + sum_n |g2_n| + |phi| (or sum_n |phi_n| without head sharing)."""
    return sum(net.num_parameters() for net in model.networks())


def smoothing_residual(zeta: float, gamma: float) -> float:
    """1/zeta - gamma * log(zeta / (1 - zeta))."""
    return 1.0 / zeta - gamma * float(np.log(zeta / (1.0 - zeta)))


def smoothing_logit(gamma: float) -> float:
    """Root t > 0 of 1 + exp(-t) - gamma * t, the logit of the optimal zeta."""
    if not gamma > 0:
        raise NoRootError(f"the smoothing residual has no root for gamma={gamma}")

    def residual(t: float) -> float:
        return 1.0 + float(np.exp(-t)) - gamma * t

    return float(bisect(residual, 0.0, 2.0 / gamma, xtol=1e-15, maxiter=500))


def smoothing_fixed_point(gamma: float) -> float:
    """
    Optimal smoothed probability of the true meta-class under
    cross-entropy minus gamma times entropy: the root in (0.5, 1) of
    1/zeta = gamma * log(zeta / (1 - zeta)).
    """
    return float(expit(smoothing_logit(gamma)))


def smoothed_ce(t: float, gamma: float) -> float:
    """Per-sample CE - gamma * H(zeta) for true label 1 and zeta = nu(t)."""
    nll_one = float(np.logaddexp(0.0, -t))
    nll_zero = float(np.logaddexp(0.0, t))
    nu = float(expit(t))
    entropy = nu * nll_one + (1.0 - nu) * nll_zero
    return nll_one - gamma * entropy


def minimize_smoothed_ce(gamma: float) -> float:
    """Minimise the smoothed cross entropy over a free probability directly."""
    if not gamma > 0:
        raise NoRootError(f"the smoothed objective has no interior minimum for gamma={gamma}")
    result = minimize_scalar(
        smoothed_ce,
        bounds=(0.0, 2.0 / gamma + 1.0),
        args=(gamma,),
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 1000},
    )
    logger.debug("Smoothed CE minimum for gamma=%g at logit %.12g", gamma, result.x)
    return float(expit(result.x))
