"""Reverse-mode differentiable building blocks.

Gradients flow through a small graph of :class:`Var` nodes whose
operations are whole layers (a dense layer over all frames, a complete
bidirectional LSTM pass, the DPP kernel and its likelihood) rather than
scalar arithmetic.  Each operation stores a closure that maps the output
gradient to the gradients of its inputs; :func:`backprop` walks the graph
in reverse topological order and collects the gradients of named
parameters into a :class:`GradientBundle`.

Gate pre-activations are clamped to ``[-30, 30]`` before the sigmoid or
tanh; the clamp's zero derivative outside that range is respected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from models import dpp
from models.annotations import validate_features
from utils.errors import ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)

ParamSet = Dict[str, np.ndarray]
GradientBundle = Dict[str, np.ndarray]

CLAMP = 30.0


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    LINEAR = "linear"


def sigmoid(a: np.ndarray) -> np.ndarray:
    """Logistic function on inputs clamped to ``[-CLAMP, CLAMP]``."""
    return expit(np.clip(a, -CLAMP, CLAMP))


def tanh(a: np.ndarray) -> np.ndarray:
    """Hyperbolic tangent on clamped inputs."""
    return np.tanh(np.clip(a, -CLAMP, CLAMP))


def _activate(a: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.SIGMOID:
        return sigmoid(a)
    if activation is Activation.TANH:
        return tanh(a)
    return a


def _activation_grad(a: np.ndarray, out: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.LINEAR:
        return np.ones_like(a)
    inside = (a >= -CLAMP) & (a <= CLAMP)
    if activation is Activation.SIGMOID:
        return out * (1.0 - out) * inside
    return (1.0 - out**2) * inside


# --------------------------------------------------------------------------
# Parameter containers
# --------------------------------------------------------------------------
@dataclass
class DenseLayerParams:
    """Weights of one fully connected layer (``out x in``)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.SIGMOID

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"dense weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def input_size(self) -> int:
        return int(self.weight.shape[1])

    @property
    def output_size(self) -> int:
        return int(self.weight.shape[0])


@dataclass
class LstmCellParams:
    """Gate matrices of one LSTM cell.

    Each matrix has shape ``hidden x (input + hidden + 1)``; the last column
    multiplies a constant 1 and acts as the gate bias.
    """

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray

    def __post_init__(self) -> None:
        shapes = {w.shape for w in (self.w_i, self.w_f, self.w_o, self.w_c)}
        if len(shapes) != 1:
            raise ShapeError(f"gate matrices disagree in shape: {sorted(shapes)}")
        hidden, width = self.w_i.shape
        if width <= hidden:
            raise ShapeError("gate matrices leave no room for the input")

    @property
    def hidden_size(self) -> int:
        return int(self.w_i.shape[0])

    @property
    def input_size(self) -> int:
        return int(self.w_i.shape[1] - self.hidden_size - 1)

    def stacked(self) -> np.ndarray:
        """``4 hidden x width`` matrix in gate order i, f, o, c."""
        return np.vstack([self.w_i, self.w_f, self.w_o, self.w_c])


@dataclass
class BiLstmParams:
    forward_cell: LstmCellParams
    backward_cell: LstmCellParams

    def __post_init__(self) -> None:
        if self.forward_cell.hidden_size != self.backward_cell.hidden_size:
            raise ShapeError("forward and backward cells must share the hidden size")
        if self.forward_cell.input_size != self.backward_cell.input_size:
            raise ShapeError("forward and backward cells must share the input size")


@dataclass
class SgdConfig:
    """Optimiser and early-stopping settings.

    Attributes:
        learning_rate (float): Step size (> 0).
        epochs_max (int): Upper bound on training epochs.
        patience_k (int): Consecutive validation decreases tolerated.
        momentum (float): Heavy-ball coefficient in ``[0, 1)``.
        grad_clip (float): Global L2 norm cap applied before each step.
        seed (int): Seed for shuffling and initialisation.
        stage2_lr_scale (float): Multiplier applied to the learning rate in
            the likelihood stage of the DPP model.
    """

    learning_rate: float = 0.05
    epochs_max: int = 100
    patience_k: int = 5
    momentum: float = 0.9
    grad_clip: float = 5.0
    seed: int = 0
    stage2_lr_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.epochs_max < 1 or self.patience_k < 1:
            raise ContractError("epochs_max and patience_k must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if self.grad_clip <= 0:
            raise ContractError("grad_clip must be positive")
        if self.stage2_lr_scale <= 0:
            raise ContractError("stage2_lr_scale must be positive")


def init_uniform(rng: np.random.Generator, shape: Tuple[int, ...], scale: float) -> np.ndarray:
    """Draw from ``U(-scale, scale)``; zeros when ``scale`` is 0."""
    return rng.uniform(-scale, scale, size=shape) if scale > 0 else np.zeros(shape)


def init_lstm_cell(rng: np.random.Generator, input_size: int, hidden: int, scale: float) -> LstmCellParams:
    """Uniform gate weights; the forget-gate bias starts at +1."""
    width = input_size + hidden + 1
    gates = [init_uniform(rng, (hidden, width), scale) for _ in range(4)]
    if scale > 0:
        gates[1][:, -1] = 1.0
    return LstmCellParams(*gates)


def init_dense(
    rng: np.random.Generator, input_size: int, output_size: int, scale: float, activation: Activation
) -> DenseLayerParams:
    """Dense layer with uniform weights and bias."""
    return DenseLayerParams(
        init_uniform(rng, (output_size, input_size), scale),
        init_uniform(rng, (output_size,), scale),
        activation,
    )


# --------------------------------------------------------------------------
# Plain forward passes
# --------------------------------------------------------------------------
def _cell_forward(w: np.ndarray, z: np.ndarray, c_prev: np.ndarray):
    """One step on the stacked gate matrix.

    Returns ``(h, c)`` followed by the pre-activations, the four gates and
    ``tanh(c)`` that the backward pass reuses.
    """
    n = c_prev.shape[0]
    a = w @ z
    gates = sigmoid(a[: 3 * n])
    i, f, o = gates[:n], gates[n : 2 * n], gates[2 * n :]
    g = tanh(a[3 * n :])
    c = i * g + f * c_prev
    tc = np.tanh(c)  # bounded without clamping; keeps the derivative exact
    return o * tc, c, a, i, f, o, g, tc


def lstm_step(
    cell: LstmCellParams, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step.

    ``c_t = i * tanh(W_c [x; h; 1]) + f * c_prev`` and ``h_t = o * tanh(c_t)``
    with sigmoid gates ``i, f, o``.

    Raises:
        ShapeError: If the vector sizes disagree with the cell.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (cell.input_size,):
        raise ShapeError(f"input of size {x_t.shape} for a cell expecting {cell.input_size}")
    if h_prev.shape != (cell.hidden_size,) or c_prev.shape != (cell.hidden_size,):
        raise ShapeError("hidden or cell state has the wrong size")
    z = np.concatenate([x_t, h_prev, [1.0]])
    h, c, *_ = _cell_forward(cell.stacked(), z, c_prev)
    return h, c


def _lstm_sequence(w: np.ndarray, x: np.ndarray, hidden: int):
    """Run one chain over ``x`` and keep what BPTT needs."""
    t_len, d = x.shape
    width = d + hidden + 1
    cache = {
        "z": np.zeros((t_len, width)),
        "a": np.zeros((t_len, 4 * hidden)),
        "gates": np.zeros((t_len, 4 * hidden)),
        "c": np.zeros((t_len, hidden)),
        "tc": np.zeros((t_len, hidden)),
    }
    h_out = np.zeros((t_len, hidden))
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in range(t_len):
        z = cache["z"][t]
        z[:d] = x[t]
        z[d : d + hidden] = h
        z[-1] = 1.0
        h, c, a, i, f, o, g, tc = _cell_forward(w, z, c)
        cache["a"][t] = a
        cache["gates"][t] = np.concatenate([i, f, o, g])
        cache["c"][t] = c
        cache["tc"][t] = tc
        h_out[t] = h
    return h_out, cache


def _lstm_sequence_backward(w: np.ndarray, d_h: np.ndarray, cache, hidden: int):
    """BPTT through one chain; returns ``(d_w, d_x)``."""
    t_len = d_h.shape[0]
    n = hidden
    d = cache["z"].shape[1] - n - 1
    d_w = np.zeros_like(w)
    d_x = np.zeros((t_len, d))
    dh_next = np.zeros(n)
    dc_next = np.zeros(n)
    inside = (cache["a"] >= -CLAMP) & (cache["a"] <= CLAMP)
    for t in reversed(range(t_len)):
        i, f, o, g = np.split(cache["gates"][t], 4)
        tc = cache["tc"][t]
        c_prev = cache["c"][t - 1] if t > 0 else np.zeros(n)
        dh = d_h[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc**2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)])
        da *= inside[t]
        d_w += np.outer(da, cache["z"][t])
        dz = w.T @ da
        d_x[t] = dz[:d]
        dh_next = dz[d : d + n]
    return d_w, d_x


def bilstm_forward(params: BiLstmParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward and backward hidden states for every frame.

    Row ``t`` of ``h_fwd`` has consumed ``x[0..t]``; row ``t`` of ``h_bwd``
    has consumed ``x[T-1..t]``.  Both chains start from zero state.

    Raises:
        EmptyInputError: If ``x`` has no frames.
    """
    x = validate_features(x)
    if x.shape[1] != params.forward_cell.input_size:
        raise ShapeError(f"features of dim {x.shape[1]}, cell expects {params.forward_cell.input_size}")
    n = params.forward_cell.hidden_size
    h_fwd, _ = _lstm_sequence(params.forward_cell.stacked(), x, n)
    h_bwd_rev, _ = _lstm_sequence(params.backward_cell.stacked(), x[::-1], n)
    return h_fwd, h_bwd_rev[::-1].copy()


def mlp_forward(layers: Sequence[DenseLayerParams], inputs: np.ndarray) -> np.ndarray:
    """Feed-forward pass; ``inputs`` may be a vector or a batch of rows."""
    out = np.asarray(inputs, dtype=np.float64)
    for k, layer in enumerate(layers):
        if out.shape[-1] != layer.input_size:
            raise ShapeError(f"layer {k} expects {layer.input_size} inputs, got {out.shape[-1]}")
        out = _activate(out @ layer.weight.T + layer.bias, layer.activation)
    return out


# --------------------------------------------------------------------------
# Graph
# --------------------------------------------------------------------------
class Var:
    """A value in the differentiation graph.

    Named vars are parameters; vars without name and parents are constants.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_backward")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Var", ...] = (),
        backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None,
        name: Optional[str] = None,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = parents
        self._backward = backward

    @classmethod
    def param(cls, name: str, value: np.ndarray) -> "Var":
        """Named leaf whose gradient :func:`backprop` reports."""
        return cls(value, name=name)

    def __repr__(self) -> str:
        return f"Var(name={self.name!r}, shape={self.value.shape})"


def _topological(root: Var) -> List[Var]:
    """Nodes reachable from ``root``, parents before children."""
    order: List[Var] = []
    seen = set()
    stack: List[Tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backprop(loss: Var, params: ParamSet) -> GradientBundle:
    """Exact reverse-mode gradient of a scalar ``loss``.

    Args:
        loss (Var): Scalar output of a graph built from this module's ops.
        params (ParamSet): The parameter set the graph was built from.

    Returns:
        GradientBundle: One array per parameter, zeros where unused.

    Raises:
        ContractError: If ``loss`` is not scalar or references an unknown
            parameter.
    """
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    grads = {name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()}
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None or node._backward is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    for node in order:
        if node.name is None or node.grad is None:
            continue
        if node.name not in grads:
            raise ContractError(f"graph uses unknown parameter {node.name!r}")
        grads[node.name] += node.grad
    return grads


def constant(value) -> Var:
    """Leaf that receives no gradient."""
    return Var(np.asarray(value, dtype=np.float64))


def dense(x: Var, weight: Var, bias: Optional[Var], activation: Activation) -> Var:
    """Affine map plus activation applied to every row of ``x``."""
    xv = x.value
    squeeze = xv.ndim == 1
    x2 = xv.reshape(1, -1) if squeeze else xv
    if x2.shape[1] != weight.value.shape[1]:
        raise ShapeError(f"dense layer expects {weight.value.shape[1]} inputs, got {x2.shape[1]}")
    a = x2 @ weight.value.T
    if bias is not None:
        a = a + bias.value
    out = _activate(a, activation)

    def backward(g):
        da = g.reshape(out.shape) * _activation_grad(a, out, activation)
        d_x = da @ weight.value
        grads = [d_x.reshape(xv.shape), da.T @ x2]
        if bias is not None:
            grads.append(da.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Var(out[0] if squeeze else out, parents, backward)


def bilstm(x: Var, forward_gates: Sequence[Var], backward_gates: Sequence[Var]) -> Var:
    """Bidirectional LSTM; returns ``[h_fwd | h_bwd]`` as a ``T x 2 hidden`` var.

    ``forward_gates`` and ``backward_gates`` hold the i, f, o, c matrices.
    """
    w_f = np.vstack([v.value for v in forward_gates])
    w_b = np.vstack([v.value for v in backward_gates])
    n = forward_gates[0].value.shape[0]
    xv = x.value
    if xv.ndim != 2 or xv.shape[1] + n + 1 != w_f.shape[1]:
        raise ShapeError(f"bilstm input {xv.shape} does not match gate width {w_f.shape[1]}")
    h_f, cache_f = _lstm_sequence(w_f, xv, n)
    h_b_rev, cache_b = _lstm_sequence(w_b, xv[::-1], n)
    out = np.hstack([h_f, h_b_rev[::-1]])

    def backward(g):
        dw_f, dx_f = _lstm_sequence_backward(w_f, g[:, :n], cache_f, n)
        dw_b, dx_b_rev = _lstm_sequence_backward(w_b, g[:, n:][::-1], cache_b, n)
        return (dx_f + dx_b_rev[::-1],) + tuple(np.split(dw_f, 4)) + tuple(np.split(dw_b, 4))

    return Var(out, (x,) + tuple(forward_gates) + tuple(backward_gates), backward)


def concat(parts: Sequence[Var]) -> Var:
    """Column-wise concatenation of ``T x k`` vars."""
    widths = [p.value.shape[1] for p in parts]
    out = np.hstack([p.value for p in parts])

    def backward(g):
        return tuple(np.split(g, np.cumsum(widths)[:-1], axis=1))

    return Var(out, tuple(parts), backward)


def reshape(x: Var, shape: Tuple[int, ...]) -> Var:
    """View of ``x`` with a new shape."""
    original = x.value.shape
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(original),))


def mean_square_error(pred: Var, target: np.ndarray) -> Var:
    """``sum_t (pred_t - target_t)^2 / T``."""
    p = pred.value.reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} disagree")
    diff = p - t
    n = max(1, diff.shape[0])

    def backward(g):
        return ((2.0 * float(g) / n * diff).reshape(pred.value.shape),)

    return Var(np.asarray(float(diff @ diff) / n), (pred,), backward)


def half_sq_norm(x: Var) -> Var:
    """``||x||^2 / 2``."""
    return Var(np.asarray(0.5 * float(np.sum(x.value**2))), (x,), lambda g: (float(g) * x.value,))


def gram(phi: Var) -> Var:
    """``Phi Phi^T``."""
    p = phi.value

    def backward(g):
        return ((g + g.T) @ p,)

    return Var(p @ p.T, (phi,), backward)


def quality_diversity_kernel(quality: Var, phi: Var) -> Var:
    """``L = (y y^T) * (Phi Phi^T)`` with ``quality`` of shape ``(T,)`` or ``(T, 1)``."""
    y = quality.value.reshape(-1)
    p = phi.value
    similarity = p @ p.T
    outer = np.outer(y, y)

    def backward(g):
        d_outer = g * similarity
        d_sim = g * outer
        d_y = (d_outer + d_outer.T) @ y
        return (d_y.reshape(quality.value.shape), (d_sim + d_sim.T) @ p)

    return Var(outer * similarity, (quality, phi), backward)


def dpp_nll(kernel: Var, subset: Sequence[int], jitter: float) -> Var:
    """Negative DPP log-likelihood of ``subset`` under ``kernel``."""
    k = dpp.DppKernel(0.5 * (kernel.value + kernel.value.T), jitter)
    value = dpp.dpp_nll(k, subset)

    def backward(g):
        return (float(g) * dpp.dpp_nll_grad(k, subset),)

    return Var(np.asarray(value), (kernel,), backward)


# --------------------------------------------------------------------------
# Optimisation
# --------------------------------------------------------------------------
@dataclass
class SgdOptimizer:
    """Momentum SGD with global-norm clipping.

    Attributes:
        cfg (SgdConfig): Hyper-parameters.
        lr_scale (float): Multiplier applied to ``cfg.learning_rate``.
    """

    cfg: SgdConfig
    lr_scale: float = 1.0
    _velocity: Dict[str, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def step(self, params: ParamSet, grads: GradientBundle) -> ParamSet:
        """Update ``params`` in place and return them.

        Raises:
            ShapeError: If a gradient does not match its parameter.
            NumericError: If a gradient contains NaN or infinity.
        """
        for name, value in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != value.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
        norm = float(np.sqrt(sum(float(np.sum(g**2)) for g in grads.values())))
        scale = self.cfg.grad_clip / norm if norm > self.cfg.grad_clip else 1.0
        lr = self.cfg.learning_rate * self.lr_scale
        for name, value in params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self._velocity.get(name)
            v = scale * g if v is None else self.cfg.momentum * v + scale * g
            self._velocity[name] = v
            value -= lr * v
        return params


def sgd_update(params: ParamSet, grads: GradientBundle, cfg: SgdConfig) -> ParamSet:
    """Single momentum-free update ``p <- p - lr * clip(g)``."""
    return SgdOptimizer(cfg).step(params, grads)


def global_norm(grads: GradientBundle) -> float:
    """Euclidean norm over every gradient array."""
    return float(np.sqrt(sum(float(np.sum(g**2)) for g in grads.values())))


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------
@dataclass
class GradCheckReport:
    """Outcome of a central finite-difference comparison.

    Attributes:
        max_rel_error (float): Largest relative error over entries whose
            analytic value is at least ``abs_threshold``.
        max_abs_error (float): Largest absolute error over the other entries.
        worst (str): ``name[index]`` of the worst relative entry.
        n_checked (int): Number of scalar parameters compared.
        passed (bool): Whether every entry met its tolerance.
    """

    max_rel_error: float
    max_abs_error: float
    worst: str
    n_checked: int
    passed: bool


def numeric_gradient(loss_fn: Callable[[], float], params: ParamSet, step: float = 1e-5) -> GradientBundle:
    """Central differences of ``loss_fn`` with respect to every entry of ``params``.

    ``loss_fn`` reads the arrays in ``params``; they are perturbed in place
    and restored afterwards.
    """
    out: GradientBundle = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            plus = loss_fn()
            flat[j] = original - step
            minus = loss_fn()
            flat[j] = original
            gflat[j] = (plus - minus) / (2.0 * step)
        out[name] = grad
    return out


def grad_check(
    loss_fn: Callable[[], float],
    params: ParamSet,
    analytic: GradientBundle,
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
    abs_threshold: float = 1e-6,
) -> GradCheckReport:
    """Compare ``analytic`` against central finite differences.

    Entries with ``|analytic| < abs_threshold`` are held to ``abs_tol``
    absolute error, the rest to ``rel_tol`` relative error.
    """
    numeric = numeric_gradient(loss_fn, params, step)
    max_rel, max_abs, worst, checked, passed = 0.0, 0.0, "", 0, True
    for name in params:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        checked += a.size
        small = np.abs(a) < abs_threshold
        abs_err = np.abs(a - n)
        if np.any(small):
            max_abs = max(max_abs, float(abs_err[small].max()))
            passed &= bool(np.all(abs_err[small] < abs_tol))
        if np.any(~small):
            rel = abs_err[~small] / np.maximum(np.abs(a[~small]), np.abs(n[~small]))
            j = int(np.argmax(rel))
            if rel[j] > max_rel:
                max_rel = float(rel[j])
                worst = f"{name}[{int(np.flatnonzero(~small)[j])}]"
            passed &= bool(np.all(rel < rel_tol))
    if not passed:
        logger.warning("gradient check failed: max rel %.2e at %s, max abs %.2e", max_rel, worst, max_abs)
    return GradCheckReport(max_rel, max_abs, worst, checked, passed)
