"""Minimal reverse-mode automatic differentiation on a static computation graph.

Graphs are built once (shapes checked at construction time), then executed
with `forward` and differentiated with `backward`. All arithmetic is float64.
Node shapes are per-sample; input nodes carry an implicit leading batch
dimension at execution time, parameters do not.
"""

from __future__ import annotations

import numpy as np


class GraphError(Exception):
    """Base class for graph construction and execution failures."""


class ShapeError(GraphError):
    """Operand shapes are incompatible with the requested operation."""


class UnresolvedInputError(GraphError):
    """A forward pass needs an input that the feed does not provide."""


class GraphStateError(GraphError):
    """Operation requested in the wrong order (e.g. backward before forward)."""


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad")

    def __init__(self, values, grad=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None if grad is None else np.asarray(grad, dtype=np.float64)
        if self.grad is not None and self.grad.shape != self.values.shape:
            raise ShapeError(
                f"grad shape {self.grad.shape} != value shape {self.values.shape}"
            )

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, grad={'set' if self.grad is not None else 'none'})"


class Node:
    """One operation record in a computation graph."""

    __slots__ = ("id", "op", "inputs", "attrs", "name", "shape", "batched", "retain")

    def __init__(self, id, op, inputs, attrs, name, shape, batched):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.name = name
        self.shape = tuple(shape)
        self.batched = batched
        self.retain = False

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.shape})"


def _conv_out_extent(size, k, stride, pad):
    return (size + pad - k) // stride + 1


def _same_padding(size, k, stride):
    # TF-style: output = ceil(size / stride), padding split low/high.
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


class ComputationGraph:
    """Topologically ordered operation records over float64 tensors.

    Nodes can only reference previously created nodes, so the node list is
    a valid evaluation order by construction. Parameters are held as
    `Tensor` objects and are the trainable state; `backward` fills their
    grad slots.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._params: dict[str, Tensor] = {}
        self._param_nodes: dict[str, Node] = {}
        self._input_nodes: dict[str, Node] = {}
        self._values = None
        self._grads = None
        self.meta: dict[str, Node] = {}

    # ------------------------------------------------------------------
    # construction

    def _add(self, op, inputs, attrs, name, shape, batched):
        node = Node(len(self.nodes), op, [n.id for n in inputs], attrs, name, shape, batched)
        self.nodes.append(node)
        return node

    def input(self, name, shape):
        """Declare a batched input with the given per-sample shape."""
        if name in self._input_nodes:
            raise GraphError(f"duplicate input name {name!r}")
        node = self._add("input", [], {}, name, shape, batched=True)
        self._input_nodes[name] = node
        return node

    def parameter(self, name, values):
        """Declare a trainable parameter initialised to `values`."""
        if name in self._params:
            raise GraphError(f"duplicate parameter name {name!r}")
        t = Tensor(values)
        node = self._add("param", [], {}, name, t.shape, batched=False)
        self._params[name] = t
        self._param_nodes[name] = node
        return node

    def _node(self, ref):
        return self.nodes[ref.id if isinstance(ref, Node) else ref]

    def retain_grad(self, node):
        """Keep this node's gradient available after `backward`."""
        self._node(node).retain = True

    # ------------------------------------------------------------------
    # ops

    def conv2d(self, x, w, stride=1, padding="valid", groups=1):
        """2-D cross-correlation, NHWC input with [kh, kw, cin, cout] kernels.

        `groups=1` is a dense convolution; `groups == cin` with a kernel of
        shape [kh, kw, 1, cin] is the depthwise variant (one filter per
        input channel).
        """
        x, w = self._node(x), self._node(w)
        if stride < 1:
            raise ShapeError(f"stride must be >= 1, got {stride}")
        if padding not in ("valid", "same"):
            raise ShapeError(f"padding must be 'valid' or 'same', got {padding!r}")
        if len(x.shape) != 3 or len(w.shape) != 4:
            raise ShapeError(
                f"conv2d expects [H,W,C] input and [kh,kw,cin,cout] kernels, "
                f"got {x.shape} and {w.shape}"
            )
        h, wid, cin = x.shape
        kh, kw, kcin, cout = w.shape
        if groups == 1:
            if kcin != cin:
                raise ShapeError(
                    f"kernel expects {kcin} input channels but input has {cin}"
                )
        elif groups == cin:
            if kcin != 1 or cout != cin:
                raise ShapeError(
                    f"depthwise conv needs kernels [kh,kw,1,{cin}], got {w.shape}"
                )
        else:
            raise ShapeError(f"groups must be 1 or the input channel count, got {groups}")
        if padding == "valid":
            if kh > h or kw > wid:
                raise ShapeError(
                    f"kernel {kh}x{kw} larger than input {h}x{wid} with valid padding"
                )
            ph = pw = (0, 0)
        else:
            ph, pw = _same_padding(h, kh, stride), _same_padding(wid, kw, stride)
        oh = _conv_out_extent(h, kh, stride, sum(ph))
        ow = _conv_out_extent(wid, kw, stride, sum(pw))
        attrs = {"stride": stride, "padding": padding, "groups": groups, "ph": ph, "pw": pw}
        return self._add("conv2d", [x, w], attrs, None, (oh, ow, cout), batched=True)

    def bias_add(self, x, b):
        x, b = self._node(x), self._node(b)
        if len(b.shape) != 1 or b.shape[0] != x.shape[-1]:
            raise ShapeError(f"bias shape {b.shape} does not match channels of {x.shape}")
        return self._add("bias_add", [x, b], {}, None, x.shape, batched=x.batched)

    def relu(self, x):
        x = self._node(x)
        return self._add("relu", [x], {}, None, x.shape, batched=x.batched)

    def add(self, a, b):
        a, b = self._node(a), self._node(b)
        if a.shape != b.shape or a.batched != b.batched:
            raise ShapeError(f"add operands disagree: {a.shape} vs {b.shape}")
        return self._add("add", [a, b], {}, None, a.shape, batched=a.batched)

    def dense(self, x, w, b):
        """Affine map on feature vectors: x @ w + b."""
        x, w, b = self._node(x), self._node(w), self._node(b)
        if len(x.shape) != 1 or len(w.shape) != 2 or x.shape[0] != w.shape[0]:
            raise ShapeError(f"dense expects [F] x [F,K], got {x.shape} and {w.shape}")
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense bias shape {b.shape} != ({w.shape[1]},)")
        return self._add("dense", [x, w, b], {}, None, (w.shape[1],), batched=True)

    def global_avg_pool(self, x):
        x = self._node(x)
        if len(x.shape) != 3:
            raise ShapeError(f"global_avg_pool expects [H,W,C], got {x.shape}")
        return self._add("gap", [x], {}, None, (x.shape[2],), batched=True)

    def softmax(self, x):
        """Row-wise softmax over the last axis (max-subtracted for stability)."""
        x = self._node(x)
        return self._add("softmax", [x], {}, None, x.shape, batched=x.batched)

    def softmax_cross_entropy(self, logits, labels):
        """Mean softmax cross-entropy; labels are one-hot rows."""
        logits, labels = self._node(logits), self._node(labels)
        if logits.shape != labels.shape:
            raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
        return self._add("softmax_ce", [logits, labels], {}, None, (), batched=False)

    def square(self, x):
        x = self._node(x)
        return self._add("square", [x], {}, None, x.shape, batched=x.batched)

    def sum(self, x):
        """Full reduction over every axis (batch included) to a scalar."""
        x = self._node(x)
        return self._add("sum", [x], {}, None, (), batched=False)

    def mul_scalar(self, x, c):
        x = self._node(x)
        return self._add("mul_scalar", [x], {"c": float(c)}, None, x.shape, batched=x.batched)

    def add_scalar(self, x, c):
        x = self._node(x)
        return self._add("add_scalar", [x], {"c": float(c)}, None, x.shape, batched=x.batched)

    # ------------------------------------------------------------------
    # execution

    def parameters(self):
        """Name -> Tensor map of the trainable state (live objects)."""
        return self._params

    def set_parameter(self, name, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self._params[name].values.shape:
            raise ShapeError(
                f"parameter {name!r} has shape {self._params[name].values.shape}, "
                f"got {arr.shape}"
            )
        self._params[name].values = arr.copy()

    def _needed(self, targets):
        need = set()
        stack = [self._node(t).id for t in targets]
        while stack:
            nid = stack.pop()
            if nid in need:
                continue
            need.add(nid)
            stack.extend(self.nodes[nid].inputs)
        return need

    def forward(self, feed, targets=None, overrides=None):
        """Evaluate the graph for `targets` (all nodes when omitted).

        `feed` maps input names to arrays shaped [N, *per_sample_shape].
        `overrides` (node -> array) substitutes a node's computed value,
        which is how external probes inject perturbed activations.
        Returns the target values in order; results stay cached on the
        graph for a subsequent `backward`.
        """
        if targets is None:
            targets = list(self.nodes)
        need = self._needed(targets)
        over = {} if overrides is None else {self._node(k).id: v for k, v in overrides.items()}
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            if node.id not in need:
                continue
            if node.id in over:
                values[node.id] = np.asarray(over[node.id], dtype=np.float64)
                continue
            if node.op == "input":
                if node.name not in feed:
                    raise UnresolvedInputError(f"no feed entry for input {node.name!r}")
                arr = np.asarray(feed[node.name], dtype=np.float64)
                if arr.shape[1:] != node.shape:
                    raise ShapeError(
                        f"feed for {node.name!r} has per-sample shape {arr.shape[1:]}, "
                        f"expected {node.shape}"
                    )
                values[node.id] = arr
            elif node.op == "param":
                values[node.id] = self._params[node.name].values
            else:
                ins = [values[i] for i in node.inputs]
                values[node.id] = _FORWARD[node.op](node, ins)
        self._values = values
        self._grads = None
        return [values[self._node(t).id] for t in targets]

    def value(self, node):
        """Cached output of `node` from the most recent forward pass."""
        if self._values is None or self._node(node).id not in self._values:
            raise GraphStateError("node has no value; run forward over it first")
        return self._values[self._node(node).id]

    def backward(self, node, seed=None):
        """Reverse-mode sweep from `node`, filling parameter grad slots.

        With no `seed` the node must be scalar (the training loss); a seed
        array matching the node's runtime output shape selects which output
        component(s) to differentiate, e.g. a one-hot row over class logits.
        """
        root = self._node(node)
        if self._values is None or root.id not in self._values:
            raise GraphStateError("backward requires a forward pass over the loss node")
        out = self._values[root.id]
        if seed is None:
            if out.size != 1:
                raise GraphStateError(
                    f"backward without a seed needs a scalar node, got shape {out.shape}"
                )
            seed = np.ones_like(out)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != out.shape:
                raise ShapeError(f"seed shape {seed.shape} != output shape {out.shape}")
        grads: dict[int, np.ndarray] = {root.id: seed}
        for nid in range(root.id, -1, -1):
            if nid not in grads:
                continue
            n = self.nodes[nid]
            if n.op in ("input", "param"):
                continue
            ins = [self._values[i] for i in n.inputs]
            for i, g in zip(n.inputs, _BACKWARD[n.op](n, ins, self._values[nid], grads[nid])):
                if g is None:
                    continue
                if i in grads:
                    grads[i] = grads[i] + g
                else:
                    grads[i] = g
        for name, pnode in self._param_nodes.items():
            t = self._params[name]
            t.grad = grads.get(pnode.id)
            if t.grad is None and pnode.id <= root.id and pnode.id in self._needed([root]):
                t.grad = np.zeros_like(t.values)
        self._grads = grads

    def gradient(self, node):
        """Gradient of the last backward root with respect to `node`'s output."""
        if self._grads is None:
            raise GraphStateError("no gradients; run backward first")
        nid = self._node(node).id
        if nid not in self._grads:
            raise GraphStateError("node received no gradient in the last backward pass")
        return self._grads[nid]


# ----------------------------------------------------------------------
# op kernels

def _pad_input(x, ph, pw):
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), ph, pw, (0, 0)))


def _im2col(xp, kh, kw, stride):
    """Patch matrix (N, P, cin*kh*kw) with cin the slow axis."""
    n = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]          # (N, oh, ow, cin, kh, kw) view
    oh, ow = win.shape[1], win.shape[2]
    return win.reshape(n, oh * ow, -1), oh, ow


def _scatter_patches(dpatch, n, hp, wp, cin, kh, kw, stride, oh, ow):
    """Accumulate (N, P, cin, kh*kw) patch gradients into the padded input."""
    oi = stride * np.repeat(np.arange(oh), ow)
    oj = stride * np.tile(np.arange(ow), oh)
    ki = np.repeat(np.arange(kh), kw)
    kj = np.tile(np.arange(kw), kh)
    spatial = (oi[:, None] + ki[None, :]) * wp + (oj[:, None] + kj[None, :])  # (P, k)
    idx = (np.arange(n)[:, None, None, None] * (hp * wp)
           + spatial[:, None, :]) * cin + np.arange(cin)[None, None, :, None]
    dxp = np.bincount(idx.ravel(), weights=dpatch.ravel(), minlength=n * hp * wp * cin)
    return dxp.reshape(n, hp, wp, cin)


def _kernel_cols(w):
    # [kh, kw, cin, cout] -> (cin*kh*kw, cout), matching the patch layout
    kh, kw, cin, cout = w.shape
    return w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)


def _conv2d_forward(node, ins):
    x, w = ins
    stride, groups = node.attrs["stride"], node.attrs["groups"]
    kh, kw, _, cout = w.shape
    xp = _pad_input(x, node.attrs["ph"], node.attrs["pw"])
    n, hp, wp, cin = xp.shape
    flat, oh, ow = _im2col(xp, kh, kw, stride)
    if groups == 1:
        out = flat @ _kernel_cols(w)
    else:  # depthwise: one filter per channel
        patches = flat.reshape(n, oh * ow, cin, kh * kw)
        wdw = w[:, :, 0, :].transpose(2, 0, 1).reshape(cin, kh * kw)
        out = np.einsum("npck,ck->npc", patches, wdw)
    return out.reshape(n, oh, ow, cout)


def _conv2d_backward(node, ins, out, dy):
    x, w = ins
    stride, groups = node.attrs["stride"], node.attrs["groups"]
    ph, pw = node.attrs["ph"], node.attrs["pw"]
    kh, kw, _, cout = w.shape
    xp = _pad_input(x, ph, pw)
    n, hp, wp, cin = xp.shape
    flat, oh, ow = _im2col(xp, kh, kw, stride)
    dyf = dy.reshape(n, oh * ow, cout)
    if groups == 1:
        dw_cols = np.tensordot(flat, dyf, axes=([0, 1], [0, 1]))      # (cin*k, cout)
        dw = dw_cols.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        dpatch = (dyf @ _kernel_cols(w).T).reshape(n, oh * ow, cin, kh * kw)
    else:
        patches = flat.reshape(n, oh * ow, cin, kh * kw)
        wdw = w[:, :, 0, :].transpose(2, 0, 1).reshape(cin, kh * kw)
        dw = np.einsum("npck,npc->ck", patches, dyf)
        dw = dw.reshape(cin, kh, kw).transpose(1, 2, 0)[:, :, None, :]
        dpatch = dyf[:, :, :, None] * wdw[None, None, :, :]
    dxp = _scatter_patches(dpatch, n, hp, wp, cin, kh, kw, stride, oh, ow)
    dx = dxp[:, ph[0]:hp - ph[1], pw[0]:wp - pw[1], :]
    return dx, dw


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_PROB_FLOOR = 1e-12


def _softmax_ce_forward(node, ins):
    logits, labels = ins
    p = np.clip(_softmax(logits), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return np.asarray(-(labels * np.log(p)).sum(axis=-1).mean())


_FORWARD = {
    "conv2d": _conv2d_forward,
    "bias_add": lambda node, ins: ins[0] + ins[1],
    "relu": lambda node, ins: np.maximum(ins[0], 0.0),
    "add": lambda node, ins: ins[0] + ins[1],
    "dense": lambda node, ins: ins[0] @ ins[1] + ins[2],
    "gap": lambda node, ins: ins[0].mean(axis=(1, 2)),
    "softmax": lambda node, ins: _softmax(ins[0]),
    "softmax_ce": _softmax_ce_forward,
    "square": lambda node, ins: ins[0] * ins[0],
    "sum": lambda node, ins: np.asarray(ins[0].sum()),
    "mul_scalar": lambda node, ins: ins[0] * node.attrs["c"],
    "add_scalar": lambda node, ins: ins[0] + node.attrs["c"],
}


def _bias_add_backward(node, ins, out, dy):
    return dy, dy.reshape(-1, dy.shape[-1]).sum(axis=0)


def _gap_backward(node, ins, out, dy):
    h, w = ins[0].shape[1:3]
    return (np.broadcast_to(dy[:, None, None, :], ins[0].shape) / (h * w),)


def _softmax_backward(node, ins, out, dy):
    inner = (dy * out).sum(axis=-1, keepdims=True)
    return (out * (dy - inner),)


def _softmax_ce_backward(node, ins, out, dy):
    logits, labels = ins
    p = _softmax(logits)
    return float(dy) * (p - labels) / logits.shape[0], None


_BACKWARD = {
    "conv2d": _conv2d_backward,
    "bias_add": _bias_add_backward,
    "relu": lambda node, ins, out, dy: (dy * (ins[0] > 0),),
    "add": lambda node, ins, out, dy: (dy, dy),
    "dense": lambda node, ins, out, dy: (
        dy @ ins[1].T,
        ins[0].T @ dy,
        dy.sum(axis=0),
    ),
    "gap": _gap_backward,
    "softmax": _softmax_backward,
    "softmax_ce": _softmax_ce_backward,
    "square": lambda node, ins, out, dy: (2.0 * ins[0] * dy,),
    "sum": lambda node, ins, out, dy: (np.full_like(ins[0], float(dy)),),
    "mul_scalar": lambda node, ins, out, dy: (dy * node.attrs["c"],),
    "add_scalar": lambda node, ins, out, dy: (dy,),
}


def finite_diff_grad(f, point, eps):
    """Central-difference gradient of a scalar function at `point`.

    Serves as the independent oracle for reverse-mode gradients: the
    estimate is (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) per coordinate.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
