"""Patch grids over feature maps and graph convolution across patches.

A feature map is cut into a k*k grid of equally sized patches with row-major
position ids (patch p = r*k + c). A binary adjacency over the k*k grid says
which patches exchange information; after symmetric normalization it drives
the aggregation step of the patch-graph convolution layer: split into
patches, convolve each patch with shared weights, relu, mix patches with the
normalized adjacency, and merge back by position id.
"""
from dataclasses import dataclass

import numpy as np

from .backend import ShapeError, Tensor
from .backend.ops import conv2d, deconv2d, graph_aggregate, relu
from .backend.tensor import accumulate_grad, make_result

SCHEMES = ("identity", "spatial4", "mirror_spatial", "full")


@dataclass
class Adjacency:
    """Binary symmetric links over a k*k patch grid, self-loops forced."""
    k: int
    links: np.ndarray  # (k*k, k*k) uint8

    @property
    def size(self):
        return self.k * self.k


@dataclass
class NormalizedAdjacency:
    """D^{-1/2} A D^{-1/2} weights; symmetric, entries in [0, 1]."""
    k: int
    weights: np.ndarray  # (k*k, k*k) float64

    @property
    def size(self):
        return self.k * self.k


def split_patches(f, k):
    """(N,C,H,W) -> (k*k, N, C, H/k, W/k), row-major patch order."""
    n, c, h, w = f.shape
    if h % k or w % k:
        raise ShapeError(f"extents H={h}, W={w} are not divisible by k={k}")
    hp, wp = h // k, w // k

    data = f.data.reshape(n, c, k, hp, k, wp).transpose(2, 4, 0, 1, 3, 5)
    data = np.ascontiguousarray(data).reshape(k * k, n, c, hp, wp)

    def backward(g):
        gg = g.reshape(k, k, n, c, hp, wp).transpose(2, 3, 0, 4, 1, 5)
        accumulate_grad(f, np.ascontiguousarray(gg).reshape(n, c, h, w))

    return make_result(data, (f,), backward)


def merge_patches(patches, k):
    """Exact inverse of split_patches: (k*k, N, C, h, w) -> (N, C, k*h, k*w)."""
    if patches.shape[0] != k * k:
        raise ShapeError(f"expected {k * k} patches on axis 0, got {patches.shape[0]}")
    _, n, c, hp, wp = patches.shape

    data = patches.data.reshape(k, k, n, c, hp, wp).transpose(2, 3, 0, 4, 1, 5)
    data = np.ascontiguousarray(data).reshape(n, c, k * hp, k * wp)

    def backward(g):
        gg = g.reshape(n, c, k, hp, k, wp).transpose(2, 4, 0, 1, 3, 5)
        accumulate_grad(patches, np.ascontiguousarray(gg).reshape(k * k, n, c, hp, wp))

    return make_result(data, (patches,), backward)


def build_adjacency(k, scheme="spatial4"):
    """Construct grid links: self-loops always present.

    identity        only self-loops
    spatial4        4-neighborhood on the k*k grid
    mirror_spatial  spatial4 plus links (r, c) <-> (r, k-1-c)
    full            every pair linked
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown adjacency scheme {scheme!r}; expected one of {SCHEMES}")
    p = k * k
    links = np.eye(p, dtype=np.uint8)
    if scheme == "full":
        links[:] = 1
    elif scheme in ("spatial4", "mirror_spatial"):
        for r in range(k):
            for c in range(k):
                i = r * k + c
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < k and 0 <= cc < k:
                        links[i, rr * k + cc] = 1
                if scheme == "mirror_spatial":
                    links[i, r * k + (k - 1 - c)] = 1
                    links[r * k + (k - 1 - c), i] = 1
    return Adjacency(k=k, links=links)


def load_adjacency(path):
    """Read the adjacency file: line 1 = k, then k*k rows of k*k 0/1 entries."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"adjacency file {path} is empty")
    try:
        k = int(lines[0])
    except ValueError:
        raise ValueError(f"adjacency file {path}: first line must be k, got {lines[0]!r}")
    p = k * k
    if len(lines) != 1 + p:
        raise ValueError(f"adjacency file {path}: expected {p} matrix rows, found {len(lines) - 1}")
    links = np.zeros((p, p), dtype=np.uint8)
    for r, ln in enumerate(lines[1:]):
        vals = ln.split()
        if len(vals) != p:
            raise ValueError(f"adjacency file {path}: row {r} has {len(vals)} entries, expected {p}")
        for c, v in enumerate(vals):
            if v not in ("0", "1"):
                raise ValueError(f"adjacency file {path}: row {r}, col {c} has {v!r}, expected 0 or 1")
            links[r, c] = int(v)
    for i in range(p):
        if links[i, i] != 1:
            raise ValueError(f"adjacency file {path}: row {i}, col {i} must be 1 (self-loop)")
    bad = np.argwhere(links != links.T)
    if bad.size:
        r, c = bad[0]
        raise ValueError(f"adjacency file {path}: asymmetric at row {r}, col {c}")
    return Adjacency(k=k, links=links)


def save_adjacency(adj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{adj.k}\n")
        for row in adj.links:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def normalize_adjacency(adj):
    """Symmetric normalization D^{-1/2} A D^{-1/2}; self-loops rule out zero degree."""
    links = adj.links.astype(np.float64)
    bad = np.argwhere(links != links.T)
    if bad.size:
        r, c = bad[0]
        raise ValueError(f"adjacency asymmetric at row {r}, col {c}")
    inv_sqrt_deg = 1.0 / np.sqrt(links.sum(axis=1))
    weights = links * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    return NormalizedAdjacency(k=adj.k, weights=weights)


def default_adjacency(k):
    """Per-grid-size defaults: 1 -> identity, 2 -> full, else mirror_spatial."""
    if k == 1:
        scheme = "identity"
    elif k == 2:
        scheme = "full"
    else:
        scheme = "mirror_spatial"
    return normalize_adjacency(build_adjacency(k, scheme))


def igcn_layer(f, weight, bias, a_norm, k, mode="conv", stride=1, padding=1):
    """Patch-graph convolution: split -> shared conv/deconv -> relu -> aggregate -> merge.

    With k=1 and the unit adjacency this is exactly relu(conv2d(f)).
    """
    n, c, h, w = f.shape
    if h % k or w % k:
        raise ShapeError(f"extents H={h}, W={w} are not divisible by k={k}")
    if mode not in ("conv", "deconv"):
        raise ValueError(f"mode must be 'conv' or 'deconv', got {mode!r}")
    kernel = weight.shape[2]
    if mode == "conv" and (h // k) + 2 * padding < kernel:
        raise ShapeError(
            f"patch extent {h // k} with padding {padding} is smaller than kernel {kernel}")
    a = a_norm.weights if isinstance(a_norm, NormalizedAdjacency) else np.asarray(a_norm)
    if a.shape != (k * k, k * k):
        raise ShapeError(f"adjacency is {a.shape}, expected {(k * k, k * k)} for k={k}")

    stack = split_patches(f, k)
    hp, wp = h // k, w // k
    flat = _reshape_view(stack, (k * k * n, c, hp, wp))
    if mode == "conv":
        y = conv2d(flat, weight, bias, stride=stride, padding=padding)
    else:
        y = deconv2d(flat, weight, bias, stride=stride, padding=padding)
    y = relu(y)
    _, oc, ho, wo = y.shape
    y = _reshape_view(y, (k * k, n, oc, ho, wo))
    y = graph_aggregate(y, a)
    return merge_patches(y, k)


def _reshape_view(t, shape):
    old = t.shape

    def backward(g):
        accumulate_grad(t, g.reshape(old))

    return make_result(t.data.reshape(shape), (t,), backward)


def mirror_permutation(k):
    """Patch-index permutation sending (r, c) to (r, k-1-c)."""
    perm = np.empty(k * k, dtype=np.int64)
    for r in range(k):
        for c in range(k):
            perm[r * k + c] = r * k + (k - 1 - c)
    return perm


def permute_patch_grid(f, k, perm):
    """Reorder the patches of a feature map by ``perm`` (content untouched)."""
    stack = split_patches(f, k)
    out = Tensor(stack.data[perm])
    return merge_patches(out, k)
