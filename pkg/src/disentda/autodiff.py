"""Dense float64 tensors with reverse-mode differentiation.

Every value in the lab lives in a `Tensor`: a contiguous row-major float64
array plus optional gradient tracking. Operations record their inputs and a
backward closure on the output tensor, so the computation graph is rebuilt
on every forward pass (the rearrangement step rewires the graph each batch).
`Tensor.backward()` walks that implicit graph once in reverse topological
order and accumulates gradients additively at fan-out points.

Conventions:
  - no implicit broadcasting: elementwise ops require identical shapes,
    scalar scaling and row tiling are explicit ops
  - non-finite values raise `NumericError` at op boundaries
  - subgradient of relu and |.| at exactly 0 is 0
"""

from __future__ import annotations

import numpy as np


class NumericError(ArithmeticError):
    """A NaN or Inf crossed an op boundary."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value in {what}")


class Tensor:
    """N-dimensional float64 array with optional gradient tracking.

    The data buffer is treated as immutable after construction; only `grad`
    (and, for trainable parameters, the in-place optimizer update) mutate
    state. Backward closures therefore may capture `data` arrays directly.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)  # copy: tensors own their buffer
        _check_finite(arr, "tensor input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    @classmethod
    def _result(cls, arr: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        """No-copy constructor for freshly allocated op outputs."""
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        _check_finite(arr, f"output of {op}")
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Populate `grad` on every grad-requiring tensor reachable from this scalar.

        Repeated calls without zeroing accumulate into existing grad buffers.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                key = id(parent)
                if key in flows:
                    flows[key] = flows[key] + pg
                else:
                    flows[key] = pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; scalar operands mean explicit rescaling, not broadcasting
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def backward(loss: Tensor) -> None:
    """Free-function alias for `Tensor.backward`."""
    loss.backward()


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def bwd(g):
        return ((a, g), (b, g))

    return Tensor._result(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def bwd(g):
        return ((a, g), (b, -g))

    return Tensor._result(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _require_same_shape(a, b, "mul")

    def bwd(g):
        return ((a, g * b.data), (b, g * a.data))

    return Tensor._result(a.data * b.data, (a, b), bwd, "mul")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Dispatch one of the same-shape elementwise ops {add, sub, mul}."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply every entry by the python scalar c."""
    c = float(c)

    def bwd(g):
        return ((a, g * c),)

    return Tensor._result(a.data * c, (a,), bwd, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor._result(a.data @ b.data, (a, b), bwd, "matmul")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return ((a, g * out * (1.0 - out)),)

    return Tensor._result(out, (a,), bwd, "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at exactly 0

    def bwd(g):
        return ((a, g * mask),)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), bwd, "relu")


def log(a: Tensor) -> Tensor:
    """Natural log; nonpositive inputs surface as NumericError at the boundary."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def bwd(g):
        return ((a, g / a.data),)

    return Tensor._result(out, (a,), bwd, "log")


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        return ((a, np.full_like(a.data, g.item())),)

    return Tensor._result(np.asarray(a.data.sum()), (a,), bwd, "sum_all")


def row_sum(a: Tensor) -> Tensor:
    """Sum each row of a 2-d tensor, yielding a 1-d tensor."""
    if a.ndim != 2:
        raise ValueError(f"row_sum expects a 2-d tensor, got shape {a.shape}")

    def bwd(g):
        return ((a, np.repeat(g[:, None], a.shape[1], axis=1)),)

    return Tensor._result(a.data.sum(axis=1), (a,), bwd, "row_sum")


def l1_norm(a: Tensor) -> Tensor:
    """Sum of absolute values; sign subgradient with 0 at exactly 0."""
    sgn = np.sign(a.data)

    def bwd(g):
        return ((a, g.item() * sgn),)

    return Tensor._result(np.asarray(np.abs(a.data).sum()), (a,), bwd, "l1_norm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], stabilized by max-subtraction."""
    if logits.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects B x C logits, got {logits.shape}")
    y = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise ValueError(f"labels must have length {n}, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    softmax = exp / z
    nll = np.log(z[:, 0]) - shifted[np.arange(n), y]
    loss = np.asarray(nll.mean())

    def bwd(g):
        grad = softmax.copy()
        grad[np.arange(n), y] -= 1.0
        return ((logits, g.item() / n * grad),)

    return Tensor._result(loss, (logits,), bwd, "softmax_cross_entropy")


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along each row of a 2-d tensor."""
    if a.ndim != 2:
        raise ValueError(f"row_softmax expects a 2-d tensor, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    s = exp / exp.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return ((a, s * (g - dot)),)

    return Tensor._result(s, (a,), bwd, "row_softmax")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by index; gradients scatter-add back through the indexing."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 1:
        raise ValueError("gather_rows expects a 2-d tensor and 1-d indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"row index out of range [0, {a.shape[0]})")

    def bwd(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        return ((a, grad),)

    return Tensor._result(a.data[idx], (a,), bwd, "gather_rows")


def select_sum_rows(a: Tensor, sets) -> Tensor:
    """Per row i, sum the entries a[i, j] for j in sets[i]; yields a 1-d tensor.

    Index sets may differ in size but must be nonempty and in range.
    """
    if a.ndim != 2:
        raise ValueError(f"select_sum_rows expects a 2-d tensor, got shape {a.shape}")
    if len(sets) != a.shape[0]:
        raise ValueError(f"need one index set per row, got {len(sets)} for {a.shape[0]} rows")
    cols = []
    for i, s in enumerate(sets):
        js = np.asarray(list(s), dtype=np.intp)
        if js.size == 0:
            raise ValueError(f"empty index set for row {i}")
        if js.min() < 0 or js.max() >= a.shape[1]:
            raise ValueError(f"column index out of range [0, {a.shape[1]}) in row {i}")
        cols.append(js)
    out = np.array([a.data[i, js].sum() for i, js in enumerate(cols)])

    def bwd(g):
        grad = np.zeros_like(a.data)
        for i, js in enumerate(cols):
            np.add.at(grad[i], js, g[i])
        return ((a, grad),)

    return Tensor._result(out, (a,), bwd, "select_sum_rows")


_NORM_FLOOR = 1e-12


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm; rows with norm below 1e-12 stay (near) zero."""
    if a.ndim != 2:
        raise ValueError(f"l2_normalize_rows expects a 2-d tensor, got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, _NORM_FLOOR)
    out = a.data / safe

    def bwd(g):
        # rows at the floor are treated as x / const
        live = (norms > _NORM_FLOOR)[:, 0]
        grad = g / safe
        dot = (g * out).sum(axis=1, keepdims=True)
        grad[live] -= (dot * out / safe)[live]
        return ((a, grad),)

    return Tensor._result(out, (a,), bwd, "l2_normalize_rows")


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Explicitly expand a 1-d tensor into n identical rows (bias broadcasting)."""
    if v.ndim != 1:
        raise ValueError(f"tile_rows expects a 1-d tensor, got shape {v.shape}")

    def bwd(g):
        return ((v, g.sum(axis=0)),)

    return Tensor._result(np.tile(v.data, (n, 1)), (v,), bwd, "tile_rows")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def bwd(g):
        return ((a, g.reshape(a.shape)),)

    return Tensor._result(a.data.reshape(shape), (a,), bwd, "reshape")


_POOL = 2


def _im2col3x3(padded: np.ndarray, h: int, w: int) -> np.ndarray:
    """(B, C, H+2, W+2) -> (B, H, W, C*9) patch matrix for a 3x3 window."""
    b, c = padded.shape[:2]
    cols = np.empty((b, h, w, c, 9), dtype=np.float64)
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[..., k] = padded[:, :, di:di + h, dj:dj + w].transpose(0, 2, 3, 1)
    return cols.reshape(b, h, w, c * 9)


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (same spatial size).

    x: (B, C_in, H, W); weight: (C_out, C_in, 3, 3); bias: (C_out,) optional.
    """
    if x.ndim != 4:
        raise ValueError(f"conv3x3 input must be (B, C, H, W), got {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1]:
        raise ValueError(f"conv3x3 weight must be (C_out, {x.shape[1]}, 3, 3), got {weight.shape}")
    b, c_in, h, w = x.shape
    c_out = weight.shape[0]
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv3x3 bias must be ({c_out},), got {bias.shape}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col3x3(padded, h, w)              # (B, H, W, C_in*9)
    wmat = weight.data.reshape(c_out, c_in * 9)  # (C_out, C_in*9)
    out = cols @ wmat.T                          # (B, H, W, C_out)
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)

    def bwd(g):
        g_hw = g.transpose(0, 2, 3, 1)  # (B, H, W, C_out)
        grad_w = np.tensordot(g_hw, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(weight.shape)
        grad_cols = (g_hw @ wmat).reshape(b, h, w, c_in, 9)
        grad_pad = np.zeros_like(padded)
        for k in range(9):
            di, dj = divmod(k, 3)
            grad_pad[:, :, di:di + h, dj:dj + w] += grad_cols[..., k].transpose(0, 3, 1, 2)
        grads = [(x, grad_pad[:, :, 1:-1, 1:-1]), (weight, grad_w)]
        if bias is not None:
            grads.append((bias, g_hw.sum(axis=(0, 1, 2))))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, bwd, "conv3x3")


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    if x.ndim != 4:
        raise ValueError(f"avgpool2 input must be (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if h % _POOL or w % _POOL:
        raise ValueError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        grad = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return ((x, grad),)

    return Tensor._result(out, (x,), bwd, "avgpool2")


def sgd_nesterov_step(params, grads, velocity, lr: float, momentum: float) -> None:
    """In-place Nesterov momentum update over parallel lists.

    Per parameter: v <- momentum * v + g; p <- p - lr * (g + momentum * v).
    With momentum 0 this reduces to plain SGD. Velocity buffers persist
    across steps and are mutated in place.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("params, grads and velocity must have equal length")
    for p, g, v in zip(params, grads, velocity):
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape or v.shape != data.shape:
            raise ValueError(f"sgd_nesterov_step: shape mismatch {data.shape}/{g.shape}/{v.shape}")
        v *= momentum
        v += g
        data -= lr * (g + momentum * v)


class NesterovSGD:
    """Stateful wrapper around `sgd_nesterov_step` for a fixed parameter list.

    Parameters with a missing gradient are stepped with g = 0 so the
    velocity still decays deterministically. L2 weight decay, when enabled,
    is added to the gradient (classic coupled form) scaled by each
    parameter's `decay_mask` entry. Entries may be booleans (include /
    exclude) or floats (per-parameter multipliers, e.g. a stronger pull on
    gate parameters than on classifier weights).
    """

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        decay_mask: list[bool | float] | None = None,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        if decay_mask is None:
            decay_mask = [1.0] * len(self.params)
        if len(decay_mask) != len(self.params):
            raise ValueError("decay_mask must have one entry per parameter")
        self.decay_mask = [float(b) for b in decay_mask]
        if any(s < 0.0 for s in self.decay_mask):
            raise ValueError("decay_mask entries must be non-negative")
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = []
        for p, scale in zip(self.params, self.decay_mask):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and scale:
                g = g + (self.weight_decay * scale) * p.data
            grads.append(g)
        sgd_nesterov_step(self.params, grads, self.velocity, self.lr, self.momentum)
