"""Reverse-mode differentiable tensors.

A Tensor wraps a numpy array plus an optional gradient. Operations (see
ops.py) build a graph of parent links and backward closures; calling
``backward()`` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every tensor that tracks them.
"""
import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64, np.uint8)
FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when array extents are incompatible; names the offending axis."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            # Python lists / int arrays land in the default compute dtype.
            arr = arr.astype(np.float32)
        if requires_grad and arr.dtype not in FLOAT_DTYPES:
            raise ValueError(f"gradient tracking requires a float dtype, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        """A view of the same values with no graph attached."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this tensor w.r.t. every tracked ancestor."""
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor that does not track gradients")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"seed gradient shape {grad.shape} does not match tensor shape {self.data.shape}")

        order = _toposort(self)
        accumulate_grad(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class Parameter(Tensor):
    """A tensor that always tracks gradients, with a path-like name."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name or '<unnamed>'}, shape={self.data.shape}, dtype={self.data.dtype})"


def accumulate_grad(t, g):
    """Add g into t.grad, materializing the buffer on first touch."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _toposort(root):
    """Iterative post-order over the tracked subgraph rooted at ``root``."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def make_result(data, parents, backward_fn):
    """Wrap an op's output; attaches the graph only if any parent tracks gradients."""
    out = Tensor(data)
    tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward_fn
    return out
