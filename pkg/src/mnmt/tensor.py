"""Dense tensors with reverse-mode automatic differentiation on a tape.

Small numpy-backed autodiff engine sized for recurrent translation models
trained one sentence at a time. Tensors are dense arrays of rank <= 3.
Operations executed inside a ``with Tape():`` block are recorded as a
Wengert list; ``backward(loss)`` replays it in reverse and accumulates
vector-Jacobian products into the ``.grad`` arrays of parameter leaves.
Gradient accumulation is additive, so several sentence losses can be
backpropagated into the same parameters before an optimizer step; the
caller zeroes grads between steps.

Outside a tape nothing is recorded and the same ops run as plain numpy,
which is the inference / finite-difference fast path.

Precision is a single module-level switch: float64 for verification,
float32 for training. Every op checks its output for NaN/Inf and raises
immediately, so divergence surfaces at the op that produced it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


_FLOAT_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


def set_default_dtype(name):
    """Set the dtype new tensors are created with ("float32" or "float64")."""
    global _default_dtype
    if name not in _FLOAT_DTYPES:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(_FLOAT_DTYPES)}")
    _default_dtype = _FLOAT_DTYPES[name]


def default_dtype():
    return _default_dtype


@contextmanager
def using_dtype(name):
    """Temporarily switch the default dtype (tests run under float64)."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = saved


_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Ordered record of operations; context manager activates it.

    One tape is single-threaded by construction. Independent tapes may
    run concurrently (one per thread), each accumulating into disjoint
    or shared parameter grads; shared accumulation must be serialized by
    the caller.
    """

    __slots__ = ("nodes", "_prev")

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """Dense array with optional grad accumulator and tape position.

    ``requires_grad`` marks a leaf parameter: its ``.grad`` array exists
    from construction and receives accumulated adjoints. Intermediates
    carry a node index on the tape that produced them instead.
    """

    __slots__ = ("data", "grad", "tape", "node", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 3")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.tape = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = "param" if self.requires_grad else ("node" if self.node is not None else "const")
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, {tag})"

    # Arithmetic sugar; the named ops below are the real surface.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def parameter(data, dtype=None):
    """Leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=None):
    """Leaf tensor without gradients (inputs, masks, features)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def zero_grads(params):
    for p in params:
        p.zero_grad()


def _tracked(t):
    return t.requires_grad or t.node is not None


def _ensure_finite(arr, op):
    # one reduction is much cheaper than isfinite().all(); a non-finite
    # element always poisons the sum. The sum can overflow on huge
    # finite values, so confirm elementwise before raising.
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


def _emit(out_data, op, pairs):
    """Wrap op output; record (parent, vjp) pairs if a tape is active.

    ``pairs`` holds (Tensor, vjp) tuples where vjp maps the output
    adjoint to that parent's adjoint contribution. Untracked parents are
    dropped at record time.
    """
    _ensure_finite(out_data, op)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.grad = None
    out.tape = None
    out.node = None
    tape = _active_tape()
    if tape is not None:
        live = [pv for pv in pairs if _tracked(pv[0])]
        if live:
            out.tape = tape
            out.node = len(tape.nodes)
            tape.nodes.append(live)
    return out


def _need(t, op, rank=None):
    if not isinstance(t, Tensor):
        raise TypeError(f"{op} expects Tensor operands, got {type(t).__name__}")
    if rank is not None and t.data.ndim != rank:
        raise ShapeError(f"{op} expects a rank-{rank} operand, got shape {t.data.shape}")
    return t


# ---------------------------------------------------------------------------
# Linear algebra

def matmul(a, b):
    """Matrix product (m,k) @ (k,n) -> (m,n)."""
    _need(a, "matmul", 2)
    _need(b, "matmul", 2)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, "matmul", (
        (a, lambda g: g @ bd.T),
        (b, lambda g: ad.T @ g),
    ))


def matvec(a, x):
    """Matrix-vector product (m,k) @ (k,) -> (m,)."""
    _need(a, "matvec", 2)
    _need(x, "matvec", 1)
    if a.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec inner dims differ: {a.data.shape} vs {x.data.shape}")
    ad, xd = a.data, x.data
    return _emit(ad @ xd, "matvec", (
        (a, lambda g: np.outer(g, xd)),
        (x, lambda g: ad.T @ g),
    ))


def vecmat(x, a):
    """Row-vector times matrix: (k,) @ (k,n) -> (n,)."""
    _need(x, "vecmat", 1)
    _need(a, "vecmat", 2)
    if x.data.shape[0] != a.data.shape[0]:
        raise ShapeError(f"vecmat inner dims differ: {x.data.shape} vs {a.data.shape}")
    xd, ad = x.data, a.data
    return _emit(xd @ ad, "vecmat", (
        (x, lambda g: ad @ g),
        (a, lambda g: np.outer(xd, g)),
    ))


def affine3(x, w, h, u, b=None):
    """Fused x @ W + h @ U (+ b) -> (n,): one recurrence pre-activation.

    Collapses the two projections and the bias add into a single taped
    node; recurrent cells are built almost entirely from this shape.
    """
    _need(x, "affine3", 1)
    _need(w, "affine3", 2)
    _need(h, "affine3", 1)
    _need(u, "affine3", 2)
    if x.data.shape[0] != w.data.shape[0] or h.data.shape[0] != u.data.shape[0] \
            or w.data.shape[1] != u.data.shape[1]:
        raise ShapeError(f"affine3 shapes do not chain: x{x.data.shape} W{w.data.shape}"
                         f" h{h.data.shape} U{u.data.shape}")
    xd, wd, hd, ud = x.data, w.data, h.data, u.data
    out = xd @ wd + hd @ ud
    pairs = [
        (x, lambda g: wd @ g),
        (w, lambda g: np.outer(xd, g)),
        (h, lambda g: ud @ g),
        (u, lambda g: np.outer(hd, g)),
    ]
    if b is not None:
        _need(b, "affine3", 1)
        if b.data.shape[0] != out.shape[0]:
            raise ShapeError(f"affine3 bias shape {b.data.shape} does not match output {out.shape}")
        out = out + b.data
        pairs.append((b, lambda g: g))
    return _emit(out, "affine3", pairs)


def gated_candidate(x, w, r, h, u, b=None):
    """Fused x @ W + r * (h @ U) (+ b): the reset-gated candidate
    pre-activation with the gate applied inside the recurrent product."""
    _need(x, "gated_candidate", 1)
    _need(w, "gated_candidate", 2)
    _need(r, "gated_candidate", 1)
    _need(h, "gated_candidate", 1)
    _need(u, "gated_candidate", 2)
    if x.data.shape[0] != w.data.shape[0] or h.data.shape[0] != u.data.shape[0] \
            or w.data.shape[1] != u.data.shape[1] or r.data.shape[0] != u.data.shape[1]:
        raise ShapeError(f"gated_candidate shapes do not chain: x{x.data.shape}"
                         f" W{w.data.shape} r{r.data.shape} h{h.data.shape} U{u.data.shape}")
    xd, wd, rd, hd, ud = x.data, w.data, r.data, h.data, u.data
    hu = hd @ ud
    out = xd @ wd + rd * hu
    pairs = [
        (x, lambda g: wd @ g),
        (w, lambda g: np.outer(xd, g)),
        (r, lambda g: g * hu),
        (h, lambda g: ud @ (g * rd)),
        (u, lambda g: np.outer(hd, g * rd)),
    ]
    if b is not None:
        _need(b, "gated_candidate", 1)
        if b.data.shape[0] != out.shape[0]:
            raise ShapeError(f"gated_candidate bias shape {b.data.shape} does not match output {out.shape}")
        out = out + b.data
        pairs.append((b, lambda g: g))
    return _emit(out, "gated_candidate", pairs)


# ---------------------------------------------------------------------------
# Elementwise and structural

def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} requires equal shapes, got {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _need(a, "add")
    _need(b, "add")
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, "add", ((a, lambda g: g), (b, lambda g: g)))


def sub(a, b):
    _need(a, "sub")
    _need(b, "sub")
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, "sub", ((a, lambda g: g), (b, lambda g: -g)))


def mul(a, b):
    """Hadamard product of equal-shape tensors."""
    _need(a, "mul")
    _need(b, "mul")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, "mul", ((a, lambda g: g * bd), (b, lambda g: g * ad)))


def neg(x):
    _need(x, "neg")
    return _emit(-x.data, "neg", ((x, lambda g: -g),))


def one_minus(x):
    """1 - x, the update-gate complement."""
    _need(x, "one_minus")
    return _emit(1.0 - x.data, "one_minus", ((x, lambda g: -g),))


def add_rowvec(m, v):
    """Add a vector to every row of a matrix: (k,n) + (n,)."""
    _need(m, "add_rowvec", 2)
    _need(v, "add_rowvec", 1)
    if m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec dims differ: {m.data.shape} vs {v.data.shape}")
    return _emit(m.data + v.data[None, :], "add_rowvec", (
        (m, lambda g: g),
        (v, lambda g: g.sum(axis=0)),
    ))


def mul_rowvec(m, v):
    """Multiply every row of a matrix by a vector: (k,n) * (n,)."""
    _need(m, "mul_rowvec", 2)
    _need(v, "mul_rowvec", 1)
    if m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"mul_rowvec dims differ: {m.data.shape} vs {v.data.shape}")
    md, vd = m.data, v.data
    return _emit(md * vd[None, :], "mul_rowvec", (
        (m, lambda g: g * vd[None, :]),
        (v, lambda g: (g * md).sum(axis=0)),
    ))


def scale(s, x):
    """Multiply a tensor by a scalar tensor of shape () or (1,)."""
    _need(s, "scale")
    _need(x, "scale")
    if s.data.size != 1:
        raise ShapeError(f"scale expects a one-element scalar, got shape {s.data.shape}")
    sval = s.data.item()
    xd = x.data
    sshape = s.data.shape
    return _emit(sval * xd, "scale", (
        (s, lambda g: np.asarray((g * xd).sum(), dtype=xd.dtype).reshape(sshape)),
        (x, lambda g: sval * g),
    ))


def concat_vecs(parts):
    """Concatenate rank-1 tensors into one vector."""
    parts = [_need(p, "concat_vecs", 1) for p in parts]
    if not parts:
        raise ShapeError("concat_vecs needs at least one part")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts])

    def _slicer(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[lo:hi]

    return _emit(out, "concat_vecs", tuple((p, _slicer(i)) for i, p in enumerate(parts)))


def stack_rows(rows):
    """Stack rank-1 tensors of equal length into an (n, d) matrix."""
    rows = [_need(r, "stack_rows", 1) for r in rows]
    if not rows:
        raise ShapeError("stack_rows needs at least one row")
    d = rows[0].data.shape[0]
    for r in rows:
        if r.data.shape[0] != d:
            raise ShapeError(f"stack_rows length mismatch: {r.data.shape[0]} vs {d}")
    out = np.stack([r.data for r in rows])

    def _picker(i):
        return lambda g: g[i]

    return _emit(out, "stack_rows", tuple((r, _picker(i)) for i, r in enumerate(rows)))


def take_row(m, i):
    """Row i of a matrix (embedding lookup); grad scatters back into row i."""
    _need(m, "take_row", 2)
    n = m.data.shape[0]
    i = int(i)
    if not 0 <= i < n:
        raise IndexError(f"row {i} out of range for matrix with {n} rows")

    def vjp(g):
        z = np.zeros_like(m.data)
        z[i] = g
        return z

    return _emit(m.data[i].copy(), "take_row", ((m, vjp),))


def pick(x, i):
    """Element i of a vector as a rank-0 tensor."""
    _need(x, "pick", 1)
    n = x.data.shape[0]
    i = int(i)
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for vector of length {n}")

    def vjp(g):
        z = np.zeros_like(x.data)
        z[i] = g
        return z

    return _emit(np.array(x.data[i]), "pick", ((x, vjp),))


def sum_all(x):
    """Sum of all elements as a rank-0 tensor."""
    _need(x, "sum_all")
    xd = x.data
    return _emit(np.asarray(xd.sum(), dtype=xd.dtype), "sum_all",
                 ((x, lambda g: np.full_like(xd, g)),))


# ---------------------------------------------------------------------------
# Nonlinearities

def tanh(x):
    _need(x, "tanh")
    y = np.tanh(x.data)
    return _emit(y, "tanh", ((x, lambda g: g * (1.0 - y * y)),))


def sigmoid(x):
    _need(x, "sigmoid")
    xd = x.data
    # exp(-|x|) never overflows; select the stable branch per element
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(y, "sigmoid", ((x, lambda g: g * y * (1.0 - y)),))


def apply_unary(x, f):
    """Named elementwise nonlinearity: f in {"tanh", "sigmoid"}."""
    if f == "tanh":
        return tanh(x)
    if f == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown unary {f!r}; expected 'tanh' or 'sigmoid'")


def _softmax_nd(xd, axis):
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(x):
    """Row-wise softmax of an (m, n) matrix, stabilized by row-max shift."""
    _need(x, "softmax_rows", 2)
    y = _softmax_nd(x.data, axis=1)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return y * (g - dot)

    return _emit(y, "softmax_rows", ((x, vjp),))


def softmax_vec(x):
    """Softmax of a vector, stabilized by max shift."""
    _need(x, "softmax_vec", 1)
    y = _softmax_nd(x.data, axis=0)

    def vjp(g):
        return y * (g - (g * y).sum())

    return _emit(y, "softmax_vec", ((x, vjp),))


def log_softmax_vec(x):
    """Numerically stable log softmax of a vector."""
    _need(x, "log_softmax_vec", 1)
    xd = x.data
    z = xd - xd.max()
    y = z - np.log(np.exp(z).sum())

    def vjp(g):
        return g - np.exp(y) * g.sum()

    return _emit(y, "log_softmax_vec", ((x, vjp),))


# ---------------------------------------------------------------------------
# Backward pass and gradient checking

def backward(loss, adjoint=1.0):
    """Reverse sweep from a recorded scalar loss.

    Accumulates (adjoint-scaled) gradients additively into every
    parameter the loss depends on; parameters it does not reach are left
    untouched. Raises if the loss is not a rank-0 tensor on a tape.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.data.ndim != 0:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None or loss.node is None:
        raise ValueError("loss is not recorded on a tape; run the forward pass inside 'with Tape():'")
    nodes = loss.tape.nodes
    adjoints = [None] * (loss.node + 1)
    adjoints[loss.node] = np.asarray(adjoint, dtype=loss.data.dtype)
    for idx in range(loss.node, -1, -1):
        g = adjoints[idx]
        if g is None:
            continue
        for parent, vjp in nodes[idx]:
            contrib = vjp(g)
            if parent.node is not None:
                if adjoints[parent.node] is None:
                    adjoints[parent.node] = contrib.copy() if isinstance(contrib, np.ndarray) else np.asarray(contrib)
                else:
                    adjoints[parent.node] += contrib
            elif parent.requires_grad:
                parent.grad += contrib
        adjoints[idx] = None


class GradCheckError(ValueError):
    """Gradient check could not be evaluated (non-finite loss)."""


def grad_errors(f, params, eps=1e-5):
    """Per-parameter max relative error between tape and central differences.

    ``f`` is a nullary callable returning a scalar-loss Tensor built from
    ``params`` (a name -> Tensor mapping). Returns {name: max_rel_err}.
    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    tensors = dict(params)
    zero_grads(tensors.values())
    with Tape():
        loss = f()
    if not np.isfinite(loss.data):
        raise GradCheckError("loss is non-finite before perturbation")
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    def eval_loss(where):
        out = f()  # no tape active: plain forward
        val = float(out.data)
        if not np.isfinite(val):
            raise GradCheckError(f"non-finite loss while perturbing {where}")
        return val

    errs = {}
    for name, t in tensors.items():
        a = analytic[name]
        worst = 0.0
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for j in range(flat.shape[0]):
            orig = flat[j]
            flat[j] = orig + eps
            up = eval_loss(name)
            flat[j] = orig - eps
            down = eval_loss(name)
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            an = float(aflat[j])
            denom = max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, abs(an - numeric) / denom)
        errs[name] = worst
    return errs


def grad_check(f, params, eps=1e-5):
    """Max relative error between tape gradients and central differences."""
    errs = grad_errors(f, params, eps)
    return max(errs.values()) if errs else 0.0
