"""Dense tensors with reverse-mode automatic differentiation.

The toolkit records every differentiable operation on a :class:`Graph` (a
tape).  Calling :func:`backward` on a scalar loss walks the tape once in
reverse and accumulates gradients into the :class:`Parameter` leaves.  The
op set is deliberately small: what a GRU/attention seq2seq model needs and
nothing more.  Rank is capped at 3 (batch, time, feature) and there is no
implicit broadcasting apart from bias addition over the last dimension and
scalar operands; shape mismatches raise :class:`ShapeError` immediately.

Arrays are float64 by default so that finite-difference gradient checks are
meaningful; float32 is accepted for production training runs.
"""

from __future__ import annotations

import numpy as np

from .errors import NonDeterministicGraphError, ShapeError

FLOATX = np.float64

# Ops callers may pass to Graph.apply.  The names after "masked-fill" are
# extensions beyond the minimal contract set; they carry exact VJPs and are
# covered by the same finite-difference tests as the rest.
OP_KINDS = (
    "matmul", "add", "mul", "sub", "tanh", "sigmoid", "exp", "log",
    "softmax-lastdim", "concat-lastdim", "slice", "sum", "mean",
    "broadcast-add-bias", "masked-fill",
    "log-softmax-lastdim", "rows", "expand-time", "reshape",
    "normalize-lastdim", "scale-lastdim", "transpose",
)


class Tensor:
    """Immutable dense array value (row-major, rank <= 3)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(FLOATX)
        if arr.ndim > 3:
            raise ShapeError("tensor", arr.shape, detail="rank > 3 unsupported")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s)" % (list(self.shape), self.data.dtype.name)


class Parameter:
    """Named trainable tensor plus its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.grad = np.zeros_like(self.value.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return "Parameter(%r, shape=%s)" % (self.name, list(self.value.shape))


def _is_scalar_shaped(arr: np.ndarray) -> bool:
    return arr.size == 1 and arr.ndim <= 1


class _Node:
    __slots__ = ("kind", "inputs", "out", "vjp", "param")

    def __init__(self, kind, inputs, out, vjp, param=None):
        self.kind = kind
        self.inputs = inputs      # node indices of differentiable inputs
        self.out = out
        self.vjp = vjp            # g -> tuple of grads aligned with inputs
        self.param = param


class Graph:
    """Tape of recorded operations; single-threaded, one per forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._index: dict[int, int] = {}

    # -- leaf registration --------------------------------------------------

    def _enter(self, x):
        """Return the node index for an input, registering leaves on first use."""
        if isinstance(x, Parameter):
            key = id(x)
            if key not in self._index:
                self._index[key] = self._record(_Node("param", (), x.value, None, param=x))
            return self._index[key], x.value
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=FLOATX))
        key = id(x)
        if key not in self._index:
            self._index[key] = self._record(_Node("const", (), x, None))
        return self._index[key], x

    def _record(self, node):
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _emit(self, kind, input_ids, out_data, vjp):
        out = Tensor.__new__(Tensor)
        out.data = out_data
        idx = self._record(_Node(kind, tuple(input_ids), out, vjp))
        self._index[id(out)] = idx
        return out

    def constant(self, data):
        t = Tensor(data)
        self._enter(t)
        return t

    @property
    def num_nodes(self):
        return len(self._nodes)

    # -- dispatcher ----------------------------------------------------------

    def apply(self, kind, *inputs, **opts):
        try:
            fn = _DISPATCH[kind]
        except KeyError:
            raise ValueError("unknown op kind %r (known: %s)" % (kind, ", ".join(OP_KINDS)))
        return fn(self, *inputs, **opts)

    # -- ops ------------------------------------------------------------------

    def matmul(self, a, b):
        ia, ta = self._enter(a)
        ib, tb = self._enter(b)
        x, y = ta.data, tb.data
        if x.ndim < 2 or y.ndim < 2 or (x.ndim == 2 and y.ndim == 3):
            raise ShapeError("matmul", x.shape, y.shape,
                             detail="supported forms: 2Dx2D, 3Dx2D, 3Dx3D")
        if x.shape[-1] != y.shape[-2]:
            raise ShapeError("matmul", x.shape, y.shape)
        if x.ndim == 3 and y.ndim == 3 and x.shape[0] != y.shape[0]:
            raise ShapeError("matmul", x.shape, y.shape, detail="batch extents differ")
        out = np.matmul(x, y)

        def vjp(g):
            if x.ndim == 2 and y.ndim == 2:
                return g @ y.T, x.T @ g
            if y.ndim == 2:
                return g @ y.T, np.tensordot(x, g, axes=([0, 1], [0, 1]))
            return np.matmul(g, y.transpose(0, 2, 1)), np.matmul(x.transpose(0, 2, 1), g)

        return self._emit("matmul", (ia, ib), out, vjp)

    def _elementwise_pair(self, kind, a, b, fwd, dva, dvb):
        ia, ta = self._enter(a)
        ib, tb = self._enter(b)
        x, y = ta.data, tb.data
        if x.shape != y.shape and not (_is_scalar_shaped(x) or _is_scalar_shaped(y)):
            raise ShapeError(kind, x.shape, y.shape)
        out = fwd(x, y)

        def vjp(g):
            gx, gy = dva(g, x, y), dvb(g, x, y)
            if x.shape != g.shape:
                gx = np.sum(gx).reshape(x.shape)
            if y.shape != g.shape:
                gy = np.sum(gy).reshape(y.shape)
            return gx, gy

        return self._emit(kind, (ia, ib), out, vjp)

    def add(self, a, b):
        return self._elementwise_pair(
            "add", a, b, lambda x, y: x + y,
            lambda g, x, y: g, lambda g, x, y: g)

    def sub(self, a, b):
        return self._elementwise_pair(
            "sub", a, b, lambda x, y: x - y,
            lambda g, x, y: g, lambda g, x, y: -g)

    def mul(self, a, b):
        return self._elementwise_pair(
            "mul", a, b, lambda x, y: x * y,
            lambda g, x, y: g * y, lambda g, x, y: g * x)

    def _elementwise_unary(self, kind, a, fwd, dvjp):
        ia, ta = self._enter(a)
        x = ta.data
        out = fwd(x)
        return self._emit(kind, (ia,), out, lambda g: (dvjp(g, x, out),))

    def tanh(self, a):
        return self._elementwise_unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))

    def sigmoid(self, a):
        def fwd(x):
            # stable in both tails
            out = np.empty_like(x)
            pos = x >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
            ex = np.exp(x[~pos])
            out[~pos] = ex / (1.0 + ex)
            return out
        return self._elementwise_unary("sigmoid", a, fwd, lambda g, x, y: g * y * (1.0 - y))

    def exp(self, a):
        return self._elementwise_unary("exp", a, np.exp, lambda g, x, y: g * y)

    def log(self, a):
        return self._elementwise_unary("log", a, np.log, lambda g, x, y: g / x)

    def softmax(self, a):
        ia, ta = self._enter(a)
        x = ta.data
        shifted = x - np.max(x, axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=-1, keepdims=True)

        def vjp(g):
            dot = np.sum(g * out, axis=-1, keepdims=True)
            return (out * (g - dot),)

        return self._emit("softmax-lastdim", (ia,), out, vjp)

    def log_softmax(self, a):
        ia, ta = self._enter(a)
        x = ta.data
        m = np.max(x, axis=-1, keepdims=True)
        shifted = x - m
        lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        out = shifted - lse

        def vjp(g):
            soft = np.exp(out)
            return (g - soft * np.sum(g, axis=-1, keepdims=True),)

        return self._emit("log-softmax-lastdim", (ia,), out, vjp)

    def concat(self, *parts):
        ids, tensors = [], []
        for p in parts:
            i, t = self._enter(p)
            ids.append(i)
            tensors.append(t)
        shapes = [t.data.shape for t in tensors]
        lead = {s[:-1] for s in shapes}
        if len(lead) != 1:
            raise ShapeError("concat-lastdim", *shapes, detail="leading dims differ")
        out = np.concatenate([t.data for t in tensors], axis=-1)
        widths = [s[-1] for s in shapes]

        def vjp(g):
            grads, ofs = [], 0
            for w in widths:
                grads.append(g[..., ofs:ofs + w])
                ofs += w
            return tuple(grads)

        return self._emit("concat-lastdim", tuple(ids), out, vjp)

    def slice_axis(self, a, axis, start, stop):
        ia, ta = self._enter(a)
        x = ta.data
        if not -x.ndim <= axis < x.ndim:
            raise ShapeError("slice", x.shape, detail="axis %d out of range" % axis)
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        index = tuple(index)
        out = x[index].copy()

        def vjp(g):
            full = np.zeros_like(x)
            full[index] = g
            return (full,)

        return self._emit("slice", (ia,), out, vjp)

    def sum(self, a, axis=None):
        ia, ta = self._enter(a)
        x = ta.data
        if axis is None:
            out = np.sum(x).reshape(())

            def vjp(g):
                return (np.full_like(x, float(g)),)
        else:
            out = np.sum(x, axis=axis)

            def vjp(g):
                return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

        return self._emit("sum", (ia,), out, vjp)

    def mean(self, a):
        ia, ta = self._enter(a)
        x = ta.data
        out = np.mean(x).reshape(())

        def vjp(g):
            return (np.full_like(x, float(g) / x.size),)

        return self._emit("mean", (ia,), out, vjp)

    def bias_add(self, a, b):
        ia, ta = self._enter(a)
        ib, tb = self._enter(b)
        x, bias = ta.data, tb.data
        if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
            raise ShapeError("broadcast-add-bias", x.shape, bias.shape)
        out = x + bias

        def vjp(g):
            lead = tuple(range(g.ndim - 1))
            return g, np.sum(g, axis=lead)

        return self._emit("broadcast-add-bias", (ia, ib), out, vjp)

    def masked_fill(self, a, mask, value):
        ia, ta = self._enter(a)
        x = ta.data
        m = np.asarray(mask, dtype=x.dtype)
        if m.shape != x.shape:
            raise ShapeError("masked-fill", x.shape, m.shape)
        out = np.where(m != 0.0, x, value)

        def vjp(g):
            return (np.where(m != 0.0, g, 0.0),)

        return self._emit("masked-fill", (ia,), out, vjp)

    def rows(self, table, ids):
        """Gather rows of a 2-D table by integer id; gradient scatter-adds."""
        it, tt = self._enter(table)
        e = tt.data
        idx = np.asarray(ids)
        if e.ndim != 2:
            raise ShapeError("rows", e.shape, detail="table must be rank 2")
        if idx.ndim > 2:
            raise ShapeError("rows", idx.shape, detail="ids must be rank <= 2")
        if idx.size and (idx.min() < 0 or idx.max() >= e.shape[0]):
            raise IndexError("rows: id out of range [0, %d)" % e.shape[0])
        out = e[idx]

        def vjp(g):
            full = np.zeros_like(e)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, e.shape[1]))
            return (full,)

        return self._emit("rows", (it,), out, vjp)

    def expand_time(self, a, length):
        """[batch, d] -> [batch, length, d]; gradient sums over the new axis."""
        ia, ta = self._enter(a)
        x = ta.data
        if x.ndim != 2:
            raise ShapeError("expand-time", x.shape, detail="input must be rank 2")
        out = np.repeat(x[:, None, :], length, axis=1)

        def vjp(g):
            return (np.sum(g, axis=1),)

        return self._emit("expand-time", (ia,), out, vjp)

    def reshape(self, a, shape):
        ia, ta = self._enter(a)
        x = ta.data
        shape = tuple(shape)
        if int(np.prod(shape, dtype=np.int64)) != x.size:
            raise ShapeError("reshape", x.shape, shape, detail="element counts differ")
        out = x.reshape(shape).copy()

        def vjp(g):
            return (g.reshape(x.shape),)

        return self._emit("reshape", (ia,), out, vjp)

    def normalize(self, a, eps=1e-5):
        """Standardize over the last dimension: zero mean, unit variance per row."""
        ia, ta = self._enter(a)
        x = ta.data
        n = x.shape[-1]
        if n < 2:
            raise ShapeError("normalize-lastdim", x.shape, detail="feature dim must be >= 2")
        mu = np.mean(x, axis=-1, keepdims=True)
        var = np.var(x, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv

        def vjp(g):
            gm = np.mean(g, axis=-1, keepdims=True)
            gx = np.mean(g * xhat, axis=-1, keepdims=True)
            return (inv * (g - gm - xhat * gx),)

        return self._emit("normalize-lastdim", (ia,), xhat, vjp)

    def scale(self, a, gain):
        """Multiply by a per-feature gain vector over the last dimension."""
        ia, ta = self._enter(a)
        ig, tg = self._enter(gain)
        x, s = ta.data, tg.data
        if s.ndim != 1 or x.shape[-1] != s.shape[0]:
            raise ShapeError("scale-lastdim", x.shape, s.shape)
        out = x * s

        def vjp(g):
            lead = tuple(range(g.ndim - 1))
            return g * s, np.sum(g * x, axis=lead)

        return self._emit("scale-lastdim", (ia, ig), out, vjp)

    def transpose(self, a):
        ia, ta = self._enter(a)
        x = ta.data
        if x.ndim != 2:
            raise ShapeError("transpose", x.shape, detail="rank 2 only")
        out = x.T.copy()

        def vjp(g):
            return (g.T,)

        return self._emit("transpose", (ia,), out, vjp)

    # -- backward --------------------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into every reachable Parameter's .grad."""
        key = id(loss)
        if key not in self._index:
            raise ValueError("loss tensor was not produced by this graph")
        if loss.data.size != 1:
            raise ShapeError("backward", loss.shape, detail="loss must be scalar")
        start = self._index[key]
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[start] = np.ones_like(loss.data)
        for i in range(start, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            if node.param is not None:
                node.param.grad += g
                continue
            if node.vjp is None:
                continue
            # vjp outputs may alias g (views); accumulation below never mutates
            # in place, so sharing is safe.
            for j, gj in zip(node.inputs, node.vjp(g)):
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj


_DISPATCH = {
    "matmul": Graph.matmul,
    "add": Graph.add,
    "mul": Graph.mul,
    "sub": Graph.sub,
    "tanh": Graph.tanh,
    "sigmoid": Graph.sigmoid,
    "exp": Graph.exp,
    "log": Graph.log,
    "softmax-lastdim": Graph.softmax,
    "log-softmax-lastdim": Graph.log_softmax,
    "concat-lastdim": Graph.concat,
    "slice": Graph.slice_axis,
    "sum": Graph.sum,
    "mean": Graph.mean,
    "broadcast-add-bias": Graph.bias_add,
    "masked-fill": Graph.masked_fill,
    "rows": Graph.rows,
    "expand-time": Graph.expand_time,
    "reshape": Graph.reshape,
    "normalize-lastdim": Graph.normalize,
    "scale-lastdim": Graph.scale,
    "transpose": Graph.transpose,
}


def backward(graph: Graph, loss: Tensor):
    graph.backward(loss)


class GradCheckReport:
    """Per-parameter maximum relative error between analytic and numeric grads."""

    def __init__(self, per_param: dict[str, float]):
        self.per_param = per_param

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def ok(self, tol=1e-5) -> bool:
        return self.max_rel_err < tol

    def __str__(self):
        lines = ["%-32s %.3e" % (k, v) for k, v in sorted(self.per_param.items())]
        lines.append("%-32s %.3e" % ("max", self.max_rel_err))
        return "\n".join(lines)


def check_gradients(build_fn, params, eps=1e-5) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``build_fn`` must construct a fresh graph and return ``(graph, loss)``;
    it has to be deterministic (freeze dropout masks or disable dropout),
    which is verified by running the forward pass twice.
    """
    _, l1 = build_fn()
    _, l2 = build_fn()
    if l1.data.tobytes() != l2.data.tobytes():
        raise NonDeterministicGraphError(
            "build_fn produced different losses on two runs (%r vs %r); "
            "freeze random masks before checking gradients" % (float(l1.data), float(l2.data)))

    for p in params:
        p.zero_grad()
    graph, loss = build_fn()
    graph.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    def eval_loss():
        _, l = build_fn()
        return float(l.data)

    per_param = {}
    for p in params:
        flat = p.value.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = eval_loss()
            flat[i] = keep - eps
            down = eval_loss()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            a = analytic[p.name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        per_param[p.name] = worst
    return GradCheckReport(per_param)
