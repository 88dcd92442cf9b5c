"""
Dense Network Engine

Small fully connected networks with explicit forward and reverse-mode
passes, in double precision. Inputs may be a single vector ``(d,)`` or a
batch ``(B, d)``; parameter gradients of a batch are summed over samples.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _softmax

from ecnn.errors import InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ecnn-densenet/1"

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class Activation(Enum):
    """Elementwise nonlinearities."""

    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"
    LOGISTIC = "logistic"

    def apply(self, pre: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(pre, 0.0)
        if self is Activation.TANH:
            return np.tanh(pre)
        if self is Activation.LOGISTIC:
            return expit(pre)
        return pre

    def derivative(self, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
        """Local slope; relu at exactly 0 has slope 0."""
        if self is Activation.RELU:
            return (pre > 0).astype(np.float64)
        if self is Activation.TANH:
            return 1.0 - post**2
        if self is Activation.LOGISTIC:
            return post * (1.0 - post)
        return np.ones_like(pre)


@dataclass
class Layer:
    """Affine map followed by an activation: act(W x + b)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if isinstance(self.activation, str):
            self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidArgumentError(
                f"layer weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def input_dim(self) -> int:
        return int(self.weights.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class DenseNet:
    """Ordered stack of dense layers."""

    layers: List[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise InvalidArgumentError("a network needs at least one layer")
        for index in range(1, len(self.layers)):
            previous, current = self.layers[index - 1], self.layers[index]
            if previous.output_dim != current.input_dim:
                raise InvalidArgumentError(
                    f"layer {index} expects {current.input_dim} inputs, "
                    f"layer {index - 1} emits {previous.output_dim}"
                )
        if not self.is_finite():
            raise InvalidArgumentError("network parameters must be finite")

    @classmethod
    def initialize(
        cls,
        sizes: Sequence[int],
        activations: Sequence[Any],
        rng: np.random.Generator,
    ) -> "DenseNet":
        """
        Random network with He scaling for relu layers, Glorot otherwise.

        Args:
            sizes: Layer widths, input first
            activations: One activation per layer (len(sizes) - 1)
            rng: Source of the initial weights

        Returns:
            New DenseNet with zero biases
        """
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise InvalidArgumentError("need one activation per layer")
        layers = []
        for fan_in, fan_out, activation in zip(sizes[:-1], sizes[1:], activations):
            activation = Activation(activation)
            if activation is Activation.RELU:
                scale = np.sqrt(2.0 / fan_in)
            else:
                scale = np.sqrt(2.0 / (fan_in + fan_out))
            weights = rng.normal(0.0, scale, size=(fan_out, fan_in))
            layers.append(Layer(weights, np.zeros(fan_out), activation))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in layer order, weights before bias (live views)."""
        out: List[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(p))) for p in self.parameters())

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(ly.weights.copy(), ly.bias.copy(), ly.activation) for ly in self.layers]
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "layers": [
                {
                    "activation": layer.activation.value,
                    "shape": [layer.output_dim, layer.input_dim],
                    "weights": layer.weights.reshape(-1).tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, payload: Any, source: str = "") -> "DenseNet":
        if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"not a {CHECKPOINT_FORMAT} checkpoint", source=source)
        layers = []
        for index, entry in enumerate(payload.get("layers") or []):
            try:
                rows, columns = (int(v) for v in entry["shape"])
                weights = np.array(entry["weights"], dtype=np.float64)
                bias = np.array(entry["bias"], dtype=np.float64)
                activation = Activation(entry["activation"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"layer {index}: {exc}", source=source) from exc
            if weights.size != rows * columns or bias.size != rows:
                raise ParseError(
                    f"layer {index}: parameter counts disagree with shape", source=source
                )
            layers.append(Layer(weights.reshape(rows, columns), bias, activation))
        try:
            return cls(layers)
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), source=source) from exc


@dataclass
class ForwardCache:
    """Per-layer inputs, pre-activations and outputs of one forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    post: List[np.ndarray] = field(default_factory=list)
    batched: bool = False


@dataclass
class GradientBundle:
    """Parameter gradients as (dW, db) per layer plus the input gradient."""

    param_grads: List[Tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray

    def flat(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for dw, db in self.param_grads:
            out.extend([dw, db])
        return out


def _as_batch(x: np.ndarray, width: int) -> Tuple[np.ndarray, bool]:
    array = np.asarray(x, dtype=np.float64)
    batched = array.ndim == 2
    if array.ndim not in (1, 2) or array.shape[-1] != width:
        raise InvalidArgumentError(f"expected input width {width}, got shape {array.shape}")
    return (array if batched else array[None, :]), batched


def forward(net: DenseNet, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Evaluate ``net`` on a vector or batch and keep what backward needs."""
    current, batched = _as_batch(x, net.input_dim)
    cache = ForwardCache(batched=batched)
    for layer in net.layers:
        pre = current @ layer.weights.T + layer.bias
        post = layer.activation.apply(pre)
        cache.inputs.append(current)
        cache.pre.append(pre)
        cache.post.append(post)
        current = post
    return (current if batched else current[0]), cache


def backward(net: DenseNet, cache: ForwardCache, upstream_grad: np.ndarray) -> GradientBundle:
    """Reverse-mode gradients of ``output . upstream_grad``."""
    if len(cache.pre) != len(net.layers):
        raise InvalidArgumentError("forward cache does not belong to this network")
    grad = np.asarray(upstream_grad, dtype=np.float64)
    expected = cache.post[-1].shape if cache.batched else cache.post[-1].shape[1:]
    if grad.shape != expected:
        raise InvalidArgumentError(
            f"upstream gradient shape {grad.shape} does not match output {expected}"
        )
    grad = grad if cache.batched else grad[None, :]

    param_grads: List[Tuple[np.ndarray, np.ndarray]] = []
    for index in reversed(range(len(net.layers))):
        layer = net.layers[index]
        delta = grad * layer.activation.derivative(cache.pre[index], cache.post[index])
        param_grads.append((delta.T @ cache.inputs[index], delta.sum(axis=0)))
        grad = delta @ layer.weights
    param_grads.reverse()
    return GradientBundle(param_grads, grad if cache.batched else grad[0])


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along ``axis``."""
    return _softmax(np.asarray(v, dtype=np.float64), axis=axis)


def logistic(s: Any) -> Any:
    """The logistic function 1 / (1 + exp(-s))."""
    return expit(s)


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(1, |a|, |b|), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Numerical gradient of a scalar function by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + step
        upper = fn(x)
        x.flat[i] = original - step
        lower = fn(x)
        x.flat[i] = original
        grad.flat[i] = (upper - lower) / (2.0 * step)
    return grad


@dataclass
class GradientCheckReport:
    """Outcome of comparing reverse-mode gradients with central differences."""

    passed: bool
    max_rel_error: float
    worst: str
    checked: int
    near_kinks: int


def finite_diff_check(
    net: DenseNet,
    x: np.ndarray,
    loss_fn: LossFn,
    step: float = 1e-4,
    tol: float = 1e-5,
    gradients: Optional[GradientBundle] = None,
) -> GradientCheckReport:
    """
    Check ``backward`` against central differences for every parameter and input.

    Args:
        net: Network under test (parameters are restored afterwards)
        x: Input vector or batch
        loss_fn: Maps the network output to (loss, d loss / d output)
        step: Finite-difference step
        tol: Largest accepted relative error
        gradients: Gradients to check instead of computing them

    Returns:
        GradientCheckReport with the worst relative error
    """
    x = np.array(x, dtype=np.float64)
    output, cache = forward(net, x)
    if gradients is None:
        _, upstream = loss_fn(output)
        gradients = backward(net, cache, upstream)

    near_kinks = sum(
        int(np.count_nonzero(np.abs(pre) < step))
        for pre, layer in zip(cache.pre, net.layers)
        if layer.activation is Activation.RELU
    )
    if near_kinks:
        logger.debug("%d relu pre-activations lie within one step of the kink", near_kinks)

    def loss_at_input(point: np.ndarray) -> float:
        return loss_fn(forward(net, point)[0])[0]

    worst_error, worst_name, checked = 0.0, "", 0
    targets = list(zip(net.parameters(), gradients.flat()))
    names = [f"layer{i // 2}.{'weights' if i % 2 == 0 else 'bias'}" for i in range(len(targets))]
    for name, (param, analytic) in zip(names, targets):

        def loss_at_param(values: np.ndarray, param: np.ndarray = param) -> float:
            saved = param.copy()
            param[...] = values
            try:
                return loss_at_input(x)
            finally:
                param[...] = saved

        numeric = central_difference(loss_at_param, param.copy(), step)
        error = relative_error(analytic, numeric)
        checked += error.size
        if error.size and error.max() > worst_error:
            worst_error, worst_name = float(error.max()), name

    numeric_input = central_difference(loss_at_input, x, step)
    error = relative_error(gradients.input_grad, numeric_input)
    checked += error.size
    if error.size and error.max() > worst_error:
        worst_error, worst_name = float(error.max()), "input"

    return GradientCheckReport(
        passed=worst_error <= tol,
        max_rel_error=worst_error,
        worst=worst_name,
        checked=checked,
        near_kinks=near_kinks,
    )


def nudge_off_zero(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Move entries closer than ``margin`` to zero out to +-margin."""
    x = np.array(x, dtype=np.float64)
    close = np.abs(x) < margin
    x[close] = np.where(x[close] < 0, -margin, margin)
    return x


def save_network(net: DenseNet, path: Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict()) + "\n")


def load_network(path: Path) -> DenseNet:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed checkpoint: {exc}", source=str(path)) from exc
    return DenseNet.from_dict(payload, source=str(path))
