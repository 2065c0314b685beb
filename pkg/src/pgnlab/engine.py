"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

A Graph records every operation in execution order (the tape); calling
``Graph.backward`` on a scalar root walks the tape once in reverse append
order and accumulates gradients into every reachable leaf.  The op set is
deliberately small: matrix multiply, bias add, ReLU, same-padding 2D
convolution (stride 1), 2x2 max-pool, flatten, elementwise add/scale, and a
fused softmax cross-entropy head.  First-order only; curvature information
is obtained elsewhere by differencing gradients.

Conventions:
  * activations carry an explicit leading batch dimension,
  * images are (B, H, W, C), dense layers take (B, n),
  * ReLU's subgradient at exactly 0 is 0,
  * max-pool ties resolve to the first element of the window.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError


class Tensor:
    """A node in the differentiation graph: value, optional gradient buffer."""

    __slots__ = ("data", "grad", "node_id", "_parents", "_backward", "aux")

    def __init__(self, data, node_id, parents=(), backward=None):
        self.data = data
        self.grad = None
        self.node_id = node_id
        self._parents = parents
        self._backward = backward
        self.aux = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node_id})"


def _accumulate(tensor, grad):
    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


class Graph:
    """Append-only operation tape; single-threaded during build and backward."""

    def __init__(self):
        self.nodes = []
        self.root = None

    def _register(self, data, parents=(), backward=None):
        t = Tensor(data, node_id=len(self.nodes), parents=parents, backward=backward)
        self.nodes.append(t)
        return t

    def leaf(self, array):
        """Wrap an array as a differentiable leaf (input or parameter)."""
        return self._register(np.asarray(array))

    # ---- operations -----------------------------------------------------

    def matmul(self, x, w):
        """(B, n) @ (n, m) -> (B, m)."""
        if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
            raise ShapeError("matmul operands are incompatible",
                             expected=f"(B,{w.data.shape[0]})@{w.data.shape}",
                             actual=f"{x.data.shape}@{w.data.shape}")
        out_data = x.data @ w.data

        def backward(g):
            _accumulate(x, g @ w.data.T)
            _accumulate(w, x.data.T @ g)

        return self._register(out_data, (x, w), backward)

    def add_bias(self, x, b):
        """(B, m) + (m,) broadcast."""
        if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
            raise ShapeError("bias does not match activation width",
                             expected=(x.data.shape[-1],), actual=b.data.shape)
        out_data = x.data + b.data

        def backward(g):
            _accumulate(x, g)
            _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

        return self._register(out_data, (x, b), backward)

    def relu(self, x):
        mask = x.data > 0
        out_data = np.where(mask, x.data, x.data.dtype.type(0))

        def backward(g):
            _accumulate(x, np.where(mask, g, g.dtype.type(0)))

        return self._register(out_data, (x,), backward)

    def conv2d(self, x, k):
        """Same-padding stride-1 convolution: (B,H,W,C) * (KH,KW,C,F) -> (B,H,W,F).

        Kernel sides must be odd so the zero padding keeps the spatial size.
        """
        if x.data.ndim != 4 or k.data.ndim != 4:
            raise ShapeError("conv2d expects (B,H,W,C) input and (KH,KW,C,F) kernel",
                             actual=f"{x.data.shape}, {k.data.shape}")
        kh, kw, cin, cout = k.data.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("conv2d kernel sides must be odd", actual=(kh, kw))
        b, h, w, c = x.data.shape
        if c != cin:
            raise ShapeError("conv2d channel mismatch", expected=cin, actual=c)
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        out_data = np.zeros((b, h, w, cout), dtype=x.data.dtype)
        for di in range(kh):
            for dj in range(kw):
                out_data += xp[:, di:di + h, dj:dj + w, :] @ k.data[di, dj]

        def backward(g):
            gk = np.zeros_like(k.data)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    patch = xp[:, di:di + h, dj:dj + w, :]
                    gk[di, dj] = np.tensordot(patch, g, axes=([0, 1, 2], [0, 1, 2]))
                    gxp[:, di:di + h, dj:dj + w, :] += g @ k.data[di, dj].T
            _accumulate(x, gxp[:, ph:ph + h, pw:pw + w, :])
            _accumulate(k, gk)

        return self._register(out_data, (x, k), backward)

    def maxpool2x2(self, x):
        """(B,H,W,C) -> (B,H/2,W/2,C); ties go to the first window element."""
        if x.data.ndim != 4:
            raise ShapeError("maxpool2x2 expects (B,H,W,C)", actual=x.data.shape)
        b, h, w, c = x.data.shape
        if h % 2 or w % 2:
            raise ShapeError("maxpool2x2 needs even spatial sides", actual=(h, w))
        h2, w2 = h // 2, w // 2
        win = (x.data.reshape(b, h2, 2, w2, 2, c)
               .transpose(0, 1, 3, 2, 4, 5)
               .reshape(b, h2, w2, 4, c))
        idx = win.argmax(axis=3)
        out_data = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

        def backward(g):
            gwin = np.zeros_like(win)
            np.put_along_axis(gwin, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
            gx = (gwin.reshape(b, h2, w2, 2, 2, c)
                  .transpose(0, 1, 3, 2, 4, 5)
                  .reshape(b, h, w, c))
            _accumulate(x, gx)

        return self._register(out_data, (x,), backward)

    def flatten(self, x):
        """(B, ...) -> (B, n)."""
        b = x.data.shape[0]
        out_data = x.data.reshape(b, -1)
        in_shape = x.data.shape

        def backward(g):
            _accumulate(x, g.reshape(in_shape))

        return self._register(out_data, (x,), backward)

    def add(self, a, b):
        if a.data.shape != b.data.shape:
            raise ShapeError("add operands differ in shape",
                             expected=a.data.shape, actual=b.data.shape)
        out_data = a.data + b.data

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return self._register(out_data, (a, b), backward)

    def scale(self, x, c):
        c = x.data.dtype.type(c)
        out_data = x.data * c

        def backward(g):
            _accumulate(x, g * c)

        return self._register(out_data, (x,), backward)

    def softmax_cross_entropy(self, logits, labels, reduction="mean"):
        """Fused stable softmax + cross-entropy; returns a scalar Tensor.

        ``aux`` on the result holds the per-example losses so batched callers
        can report them without a second pass.
        """
        if reduction not in ("mean", "sum"):
            raise UsageError(f"unknown reduction {reduction!r}")
        z = logits.data
        if z.ndim != 2:
            raise ShapeError("logits must be (B, C)", actual=z.shape)
        y = np.asarray(labels)
        if y.ndim == 0:
            y = y.reshape(1)
        if y.shape[0] != z.shape[0]:
            raise ShapeError("label count does not match logits",
                             expected=z.shape[0], actual=y.shape[0])
        if np.any(y < 0) or np.any(y >= z.shape[1]):
            raise UsageError(f"label out of range for {z.shape[1]} classes")
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        se = ez.sum(axis=1, keepdims=True)
        rows = np.arange(z.shape[0])
        per_row = (np.log(se[:, 0]) + zmax[:, 0]) - z[rows, y]
        total = per_row.sum() if reduction == "sum" else per_row.mean()
        probs = ez / se

        def backward(g):
            dz = probs.copy()
            dz[rows, y] -= 1
            if reduction == "mean":
                dz *= g / z.shape[0]
            else:
                dz *= g
            _accumulate(logits, dz.astype(z.dtype, copy=False))

        out = self._register(np.asarray(total, dtype=z.dtype), (logits,), backward)
        out.aux = per_row
        return out

    # ---- backward pass ---------------------------------------------------

    def backward(self, root):
        """Reverse sweep from a scalar root; visits each tape node once."""
        if root.data.size != 1:
            raise UsageError("backward needs a scalar root")
        self.root = root.node_id
        root.grad = np.ones_like(root.data)
        for t in reversed(self.nodes):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)


# ---- model-level entry points --------------------------------------------
#
# These accept any object implementing the classifier protocol:
#   input_shape, n_classes, wrap_params(graph) -> [Tensor],
#   logits_graph(graph, x_tensor, params) -> Tensor.


def _check_input(model, x):
    x = np.asarray(x)
    if x.shape != tuple(model.input_shape):
        raise ShapeError("input does not match model input shape",
                         expected=tuple(model.input_shape), actual=x.shape)
    return x


def eval_loss(model, x, y):
    """Cross-entropy loss of ``model`` on one example; returns (loss, Graph)."""
    x = _check_input(model, x)
    if not 0 <= int(y) < model.n_classes:
        raise UsageError(f"label {y} out of range for {model.n_classes} classes")
    g = Graph()
    xt = g.leaf(x[None])
    params = model.wrap_params(g)
    logits = model.logits_graph(g, xt, params)
    loss = g.softmax_cross_entropy(logits, [int(y)], reduction="mean")
    return float(loss.data), g


def grad_input(model, x, y):
    """Gradient of the one-example cross-entropy loss w.r.t. the input."""
    x = _check_input(model, x)
    if not 0 <= int(y) < model.n_classes:
        raise UsageError(f"label {y} out of range for {model.n_classes} classes")
    g = Graph()
    xt = g.leaf(x[None])
    params = model.wrap_params(g)
    logits = model.logits_graph(g, xt, params)
    loss = g.softmax_cross_entropy(logits, [int(y)], reduction="mean")
    g.backward(loss)
    return xt.grad[0]


def loss_and_input_grad_batch(model, xs, ys):
    """Per-example losses and input gradients for a batch.

    The per-example gradients are exact (the backward pass is seeded from the
    sum of the losses, so no 1/B factor leaks into the rows).
    Returns (losses (B,), grads (B, *input_shape)).
    """
    xs = np.asarray(xs)
    if xs.ndim != len(model.input_shape) + 1 or xs.shape[1:] != tuple(model.input_shape):
        raise ShapeError("batch does not match model input shape",
                         expected=("B",) + tuple(model.input_shape), actual=xs.shape)
    g = Graph()
    xt = g.leaf(xs)
    params = model.wrap_params(g)
    logits = model.logits_graph(g, xt, params)
    loss = g.softmax_cross_entropy(logits, ys, reduction="sum")
    g.backward(loss)
    return loss.aux.copy(), xt.grad


def grad_params(model, batch):
    """Mean-over-batch gradient of the cross-entropy loss w.r.t. every parameter.

    ``batch`` is a non-empty list of (input, label) pairs with consistent
    shapes; returns gradients in the model's parameter order.
    """
    if not batch:
        raise UsageError("grad_params needs a non-empty batch")
    xs = np.stack([_check_input(model, x) for x, _ in batch])
    ys = [int(y) for _, y in batch]
    g = Graph()
    xt = g.leaf(xs)
    params = model.wrap_params(g)
    logits = model.logits_graph(g, xt, params)
    loss = g.softmax_cross_entropy(logits, ys, reduction="mean")
    g.backward(loss)
    return [p.grad for p in params]
