"""A small reverse-mode differentiation engine over (C, H, W) arrays.

Graphs are built eagerly: every op computes its value on construction and
records a vector-Jacobian closure. :func:`backward` walks the graph once in
reverse topological order and accumulates into ``.grad`` of leaves that have
``requires_grad`` set. Intermediate gradients are not retained.

Only the primitives needed by the unrolled Landweber model are provided.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

from . import fftconv
from .imaging import ssim_terms

_ids = itertools.count()

# ops whose derivative is undefined where their input is exactly 0
KINK_OPS = ("relu", "abs")
LINEAR_OPS = ("add", "sub", "scale", "conv_h", "corr_h", "concat", "mean", "diff", "one_minus")


class GraphError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "vjp", "id", "name")

    def __init__(self, value, op="leaf", parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self.id = next(_ids)
        self.name = name
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced by node {self.id} ({op})")

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Node<{label}#{self.id} {self.value.shape}>"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def leaf(value, requires_grad=False, name=None) -> Node:
    value = np.array(value, dtype=np.float64)
    if value.ndim == 2:
        value = value[None]
    node = Node(value, requires_grad=requires_grad, name=name)
    node.zero_grad()
    return node


def _same_shape(op, *nodes):
    shapes = {n.shape for n in nodes}
    if len(shapes) != 1:
        raise ValueError(f"{op}: shape mismatch {[n.shape for n in nodes]}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    _same_shape("add", a, b)
    return Node(a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return Node(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def scale(a, c):
    c = float(c)
    return Node(c * a.value, "scale", (a,), lambda g: (c * g,))


def mul(a, b):
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def _per_channel(fn, v, h):
    return np.stack([fn(c, h) for c in v])


def conv_h(a, h):
    """Circular convolution of every channel with the fixed kernel ``h``."""
    h = fftconv.as_kernel(h)
    out = _per_channel(fftconv.convolve, a.value, h)
    return Node(out, "conv_h", (a,), lambda g: (_per_channel(fftconv.adjoint_convolve, g, h),))


def corr_h(a, h):
    """Circular correlation (adjoint blur) of every channel with ``h``."""
    h = fftconv.as_kernel(h)
    out = _per_channel(fftconv.adjoint_convolve, a.value, h)
    return Node(out, "corr_h", (a,), lambda g: (_per_channel(fftconv.convolve, g, h),))


def conv3x3(x, w, b):
    """Learnable 3x3 cross-correlation with zero 'same' padding and bias.

    Shapes: x (Cin, H, W), w (Cout, Cin, 3, 3), b (Cout,).
    """
    cin, hgt, wid = x.shape
    if w.shape[1:] != (cin, 3, 3) or b.shape != (w.shape[0],):
        raise ValueError(f"conv3x3: weight {w.shape} / bias {b.shape} do not fit input {x.shape}")
    xp = np.pad(x.value, ((0, 0), (1, 1), (1, 1)))
    wv = w.value
    cout = wv.shape[0]
    offsets = [(di, dj) for di in range(3) for dj in range(3)]
    out = np.empty((cout, hgt, wid))
    for o in range(cout):
        out[o] = b.value[o]
        for c in range(cin):
            for di, dj in offsets:
                out[o] += wv[o, c, di, dj] * xp[c, di:di + hgt, dj:dj + wid]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wv)
        for o in range(cout):
            for c in range(cin):
                for di, dj in offsets:
                    patch = xp[c, di:di + hgt, dj:dj + wid]
                    gw[o, c, di, dj] = np.vdot(g[o], patch)
                    gxp[c, di:di + hgt, dj:dj + wid] += wv[o, c, di, dj] * g[o]
        return gxp[:, 1:-1, 1:-1], gw, g.sum(axis=(1, 2))

    return Node(out, "conv3x3", (x, w, b), vjp)


def relu(a):
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a):
    s = expit(a.value)
    return Node(s, "sigmoid", (a,), lambda g: (g * s * (1 - s),))


def concat(nodes):
    nodes = list(nodes)
    if len({n.shape[1:] for n in nodes}) != 1:
        raise ValueError(f"concat: spatial shape mismatch {[n.shape for n in nodes]}")
    splits = np.cumsum([n.shape[0] for n in nodes])[:-1]
    return Node(np.concatenate([n.value for n in nodes]), "concat", nodes,
                lambda g: tuple(np.split(g, splits)))


def mean(a):
    """Mean over every entry, returned as a (1, 1, 1) scalar node."""
    n = a.value.size
    shape = a.shape
    return Node(np.full((1, 1, 1), a.value.mean()), "mean", (a,),
                lambda g: (np.full(shape, g.item() / n),))


def abs_(a):
    sign = np.sign(a.value)
    return Node(np.abs(a.value), "abs", (a,), lambda g: (g * sign,))


def one_minus(a):
    return Node(1.0 - a.value, "one_minus", (a,), lambda g: (-g,))


_AXES = {"x": -1, "y": -2}


def _diff_forward(v, order):
    out = np.zeros_like(v)
    if order == 1:
        out[..., :-1] = v[..., 1:] - v[..., :-1]
    else:
        p = np.concatenate([v[..., :1], v, v[..., -1:]], axis=-1)
        out[...] = p[..., :-2] - 2 * v + p[..., 2:]
    return out


def _diff_adjoint(g, order):
    ga = np.zeros_like(g)
    if order == 1:
        ga[..., :-1] -= g[..., :-1]
        ga[..., 1:] += g[..., :-1]
    else:
        ga -= 2 * g
        ga[..., :-1] += g[..., 1:]
        ga[..., 0] += g[..., 0]
        ga[..., 1:] += g[..., :-1]
        ga[..., -1] += g[..., -1]
    return ga


def diff(a, axis, order):
    """Finite difference with replicated edges.

    order 1 is the forward difference ``v[j+1] - v[j]``; order 2 is the
    stencil [1, -2, 1]. ``axis`` is 'x' (columns) or 'y' (rows).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    ax = _AXES[axis]
    out = np.moveaxis(_diff_forward(np.moveaxis(a.value, ax, -1), order), -1, ax)
    return Node(out, "diff", (a,),
                lambda g: (np.moveaxis(_diff_adjoint(np.moveaxis(g, ax, -1), order), -1, ax),))


def ssim_score(a, b):
    """Mean SSIM between two single-channel nodes, as a (1, 1, 1) scalar."""
    _same_shape("ssim_score", a, b)
    if a.shape[0] != 1:
        raise ValueError("ssim_score expects single-channel inputs")
    smap, terms_vjp = ssim_terms(a.value[0], b.value[0])
    n = smap.size

    def vjp(g):
        gx, gy = terms_vjp(np.full(smap.shape, g.item() / n))
        return gx[None], gy[None]

    return Node(np.full((1, 1, 1), smap.mean()), "ssim_score", (a, b), vjp)


# ---------------------------------------------------------------------------
# evaluation and differentiation
# ---------------------------------------------------------------------------

def eval(root: Node) -> np.ndarray:  # noqa: A001 - mirrors the engine vocabulary
    """Forward value of ``root``; graphs are eager so this is a copy."""
    return root.value.copy()


def topo_order(root):
    """Nodes reachable from ``root``, parents before children. Raises on cycles."""
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            state[node.id] = 2
            order.append(node)
            continue
        mark = state.get(node.id)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError(f"cycle through node {node.id}")
        state[node.id] = 1
        stack.append((node, True))
        for p in node.parents:
            pm = state.get(p.id)
            if pm == 1:
                raise GraphError(f"cycle through node {p.id}")
            if pm is None:
                stack.append((p, False))
    return order


def backward(root: Node):
    """Accumulate d(root)/d(leaf) into every requires_grad leaf.

    Calling twice without :func:`reset_grad` adds the gradients twice.
    """
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {root.id: np.ones_like(root.value)}
    for node in reversed(topo_order(root)):
        g = grads.pop(node.id, None)
        if g is None or not node.requires_grad:
            continue
        if not node.parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


def reset_grad(leaves):
    for n in leaves:
        n.zero_grad()


def _kink_inputs(root):
    return [n.parents[0].value.copy() for n in topo_order(root) if n.op in KINK_OPS]


def grad_check(builder, leaves, step=1e-4, n_coords=32, seed=0):
    """Compare backward gradients with central differences.

    ``builder()`` must rebuild the scalar graph from the current values of
    ``leaves``. Up to ``n_coords`` coordinates per leaf are sampled (all of
    them when the leaf is smaller). Coordinates where a relu/abs input sits
    exactly at 0, or crosses 0 within the step, are skipped.

    Returns ``{leaf name: max relative error}``, with the relative error
    ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    root = builder()
    again = builder()
    if not np.array_equal(root.value, again.value):
        raise GraphError("builder is not deterministic")
    reset_grad(leaves)
    backward(root)
    rng = np.random.default_rng(seed)
    report = {}
    for i, lf in enumerate(leaves):
        name = lf.name or f"leaf{i}"
        flat = lf.value.reshape(-1)
        if flat.size <= n_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, n_coords, replace=False)
        analytic = lf.grad.reshape(-1)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            plus = builder()
            kp = _kink_inputs(plus)
            flat[c] = orig - step
            minus = builder()
            km = _kink_inputs(minus)
            flat[c] = orig
            if any(np.any(np.sign(a) != np.sign(b)) for a, b in zip(kp, km)):
                continue
            num = (plus.value.item() - minus.value.item()) / (2 * step)
            a = analytic[c]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report
