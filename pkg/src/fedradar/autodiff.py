"""Minimal reverse-mode automatic differentiation engine.

Tensors wrap dense float64 numpy arrays and record, per operation, a
closure that routes the output gradient back to the inputs. Calling
:func:`backward` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients.

Only the operations needed by the residual spectrogram classifier are
implemented: 2-D convolution, ReLU, affine layers, residual addition,
global average pooling, a 2x2 strided average pool (used as a
parameter-free downsampling shortcut) and a numerically stabilized
softmax cross-entropy. Everything runs in float64 so analytic gradients
can be validated against central finite differences to tight tolerances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Role",
    "AdamState",
    "backward",
    "zero_grads",
    "conv2d",
    "relu",
    "linear",
    "add",
    "global_avg_pool",
    "avg_pool_2x2",
    "softmax_cross_entropy",
    "adam_step",
]


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` stays ``None`` until some backward pass deposits into it.
    Graph edges (``_parents``) and the per-op backward closure are
    internal; user code only ever touches ``data`` and ``grad``.
    """

    __slots__ = ("data", "grad", "_parents", "_backprop")

    def __init__(self, data, parents=(), backprop=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._backprop = backprop

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'None'})"


class Role(enum.Enum):
    """Whether a parameter belongs to the shared base or the private head."""

    BASE = "base"
    HEAD = "head"


@dataclass
class Parameter:
    """A trainable tensor with a stable id and a base/head role.

    The id is unique within a model and the role never changes after
    construction; both are relied on by the weight-exchange layer.
    """

    id: int
    tensor: Tensor
    role: Role


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x) -> Tensor:
    return x.tensor if isinstance(x, Parameter) else x


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


def zero_grads(params) -> None:
    """Clear gradients on a list of parameters (or tensors)."""
    for p in params:
        _as_tensor(p).grad = None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def relu(x) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""
    xt = _as_tensor(x)
    mask = xt.data > 0.0
    out = Tensor(np.where(mask, xt.data, 0.0), parents=(xt,))

    def backprop(g):
        _accumulate(xt, g * mask)

    out._backprop = backprop
    return out


def add(a, b) -> Tensor:
    """Residual addition; both branches receive the identical gradient."""
    at, bt = _as_tensor(a), _as_tensor(b)
    if at.data.shape != bt.data.shape:
        raise ValueError(f"add: shape mismatch {at.data.shape} vs {bt.data.shape}")
    out = Tensor(at.data + bt.data, parents=(at, bt))

    def backprop(g):
        _accumulate(at, g)
        _accumulate(bt, g)

    out._backprop = backprop
    return out


def linear(x, weight, bias) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x of shape [N, F]."""
    xt, wt, bt = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if xt.data.ndim != 2 or wt.data.ndim != 2:
        raise ValueError("linear expects 2-D input and weight")
    n, f = xt.data.shape
    o, f2 = wt.data.shape
    if f != f2:
        raise ValueError(f"linear: input features {f} != weight fan-in {f2}")
    if bt.data.shape != (o,):
        raise ValueError(f"linear: bias shape {bt.data.shape}, expected ({o},)")
    out = Tensor(xt.data @ wt.data.T + bt.data, parents=(xt, wt, bt))

    def backprop(g):
        _accumulate(xt, g @ wt.data)
        _accumulate(wt, g.T @ xt.data)
        _accumulate(bt, g.sum(axis=0))

    out._backprop = backprop
    return out


def conv2d(x, kernel, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over [N, C, H, W] inputs.

    Forward lowers to an im2col matrix product; backward reuses the
    column matrix for the kernel gradient and scatters the column
    gradient back onto the (padded) input.
    """
    xt, kt, bt = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    if xt.data.ndim != 4 or kt.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input [N,C,H,W] and kernel [K,C,kh,kw]")
    n, c, h, w = xt.data.shape
    k, ck, kh, kw = kt.data.shape
    if c != ck:
        raise ValueError(f"conv2d: input has {c} channels but kernel expects {ck}")
    if bt.data.shape != (k,):
        raise ValueError(f"conv2d: bias shape {bt.data.shape}, expected ({k},)")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d: non-positive output size {oh}x{ow} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )

    if padding:
        xp = np.pad(xt.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xt.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, oh, ow, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)
    wmat = kt.data.reshape(k, c * kh * kw)
    out_mat = cols @ wmat.T + bt.data
    out = Tensor(out_mat.reshape(n, oh, ow, k).transpose(0, 3, 1, 2), parents=(xt, kt, bt))

    def backprop(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, k)
        _accumulate(kt, (g_mat.T @ cols).reshape(kt.data.shape))
        _accumulate(bt, g_mat.sum(axis=0))
        g_cols = (g_mat @ wmat).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gx = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g_cols[:, :, i, j]
        if padding:
            gx = gx[:, :, padding : padding + h, padding : padding + w]
        _accumulate(xt, gx)

    out._backprop = backprop
    return out


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial plane: [N, C, H, W] -> [N, C]."""
    xt = _as_tensor(x)
    if xt.data.ndim != 4:
        raise ValueError("global_avg_pool expects 4-D input")
    n, c, h, w = xt.data.shape
    out = Tensor(xt.data.mean(axis=(2, 3)), parents=(xt,))

    def backprop(g):
        _accumulate(xt, np.broadcast_to(g[:, :, None, None], (n, c, h, w)) / (h * w))

    out._backprop = backprop
    return out


def avg_pool_2x2(x) -> Tensor:
    """Stride-2 2x2 average pool with ceil semantics on odd edges.

    Output spatial size is ceil(H/2) x ceil(W/2), matching a stride-2
    padded 3x3 convolution, so it can serve as the parameter-free
    shortcut of a downsampling residual block. Edge cells with a partial
    window average over the cells actually present.
    """
    xt = _as_tensor(x)
    if xt.data.ndim != 4:
        raise ValueError("avg_pool_2x2 expects 4-D input")
    n, c, h, w = xt.data.shape
    hb = np.arange(0, h, 2)
    wb = np.arange(0, w, 2)
    hs = np.diff(np.append(hb, h))  # per-row block heights (2, or 1 at an odd edge)
    ws = np.diff(np.append(wb, w))
    summed = np.add.reduceat(np.add.reduceat(xt.data, hb, axis=2), wb, axis=3)
    counts = np.outer(hs, ws)
    out = Tensor(summed / counts, parents=(xt,))

    def backprop(g):
        g_scaled = g / counts
        gx = np.repeat(np.repeat(g_scaled, hs, axis=2), ws, axis=3)
        _accumulate(xt, gx)

    out._backprop = backprop
    return out


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under a softmax.

    Stabilized by max-subtraction; the backward rule is the closed form
    (softmax - one_hot) / N. For two logits per row this evaluates the
    same number as binary cross-entropy with f = softmax probability of
    class 1.
    """
    zt = _as_tensor(logits)
    if zt.data.ndim != 2:
        raise ValueError("softmax_cross_entropy expects [N, num_classes] logits")
    n, num_classes = zt.data.shape
    if n < 1:
        raise ValueError("softmax_cross_entropy: empty batch")
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match batch size {n}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes - 1}]")

    z = zt.data - zt.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), y].mean()
    out = Tensor(np.float64(loss), parents=(zt,))

    def backprop(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), y] -= 1.0
        _accumulate(zt, g * probs / n)

    out._backprop = backprop
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment buffers aligned, entry by entry, with a parameter list."""

    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001

    @classmethod
    def for_params(cls, params, learning_rate: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            step=0,
            first_moment=[np.zeros_like(_as_tensor(p).data) for p in params],
            second_moment=[np.zeros_like(_as_tensor(p).data) for p in params],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            learning_rate=learning_rate,
        )


def adam_step(params, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    Every parameter must carry a gradient; gradients are left intact so
    the caller decides when to clear them.
    """
    if len(state.first_moment) != len(params) or len(state.second_moment) != len(params):
        raise ValueError("AdamState moment buffers are not aligned with the parameter list")
    tensors = [_as_tensor(p) for p in params]
    for i, t in enumerate(tensors):
        if t.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
        if state.first_moment[i].shape != t.data.shape:
            raise ValueError(f"adam_step: moment buffer {i} shape mismatch")

    state.step += 1
    t_step = state.step
    b1, b2 = state.beta1, state.beta2
    for i, t in enumerate(tensors):
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * t.grad
        v *= b2
        v += (1.0 - b2) * np.square(t.grad)
        m_hat = m / (1.0 - b1 ** t_step)
        v_hat = v / (1.0 - b2 ** t_step)
        t.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
