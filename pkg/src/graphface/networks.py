"""Generator and discriminator assemblies.

The generator is three [pyramid block -> patch-graph conv] stages on the
low-quality input, an upsampling head of stride-2 deconvolutions (one
doubling per factor of 2 between input and the fixed 128x128 output) and a
final deconvolution to RGB squashed with tanh. The discriminator is six
patch-graph conv layers on a 2x2 fully linked grid with stride 2 every other
layer, flattened into a single real/fake logit.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import Module, ShapeError
from .backend.ops import relu, reshape, tanh
from .blocks import MultiScaleBlock, PyramidBlock, RelationStack
from .layers import Deconv2d, Linear, PatchGraphConv
from .patchgraph import load_adjacency, normalize_adjacency


def load_adjacency_overrides(path):
    """Map grid size -> normalized weights from a custom adjacency file."""
    if not path:
        return {}
    adj = load_adjacency(path)
    return {adj.k: normalize_adjacency(adj)}

OUTPUT_SIZE = 128
VALID_INPUT_SIZES = (16, 32, 128)


@dataclass
class GeneratorConfig:
    input_size: int = 32
    extractor_channels: tuple = (16, 32, 64)
    relation_channels: int = 64
    fusion_channels: int = 128
    trunk_grid: int = 2            # patch grid of the three post-block layers
    use_pyramid: bool = True       # False: pyramid blocks replaced by relation stacks
    conv_only: bool = False        # True: every graph layer forced to a 1x1 grid
    adjacency_file: str = None     # overrides the default links for its grid size
    dtype: str = "float32"

    def __post_init__(self):
        if self.input_size not in VALID_INPUT_SIZES:
            raise ValueError(
                f"input_size must be one of {VALID_INPUT_SIZES}, got {self.input_size}")

    @property
    def head_length(self):
        return int(np.log2(OUTPUT_SIZE // self.input_size))

    @property
    def head_channels(self):
        plan = []
        ch = self.fusion_channels
        for _ in range(self.head_length):
            ch = max(ch // 2, 8)
            plan.append(ch)
        return tuple(plan)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type


@dataclass
class DiscriminatorConfig:
    input_size: int = 128
    base_channels: int = 16
    channel_cap: int = 512
    grid: int = 2
    conv_only: bool = False
    dtype: str = "float32"

    @property
    def widths(self):
        return tuple(min(self.base_channels * 2 ** i, self.channel_cap) for i in range(6))

    @property
    def strides(self):
        return (2, 1, 2, 1, 2, 1)

    @property
    def final_extent(self):
        e = self.input_size
        for s in self.strides:
            e //= s
        return e

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type


class Generator(Module):
    def __init__(self, cfg, seed=0):
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        self.cfg = cfg
        overrides = load_adjacency_overrides(cfg.adjacency_file)
        self.blocks = []
        self.trunk_layers = []
        in_ch = 3
        for _ in range(3):
            if cfg.use_pyramid:
                block = PyramidBlock(in_ch, rng, extractor_channels=cfg.extractor_channels,
                                     relation_ch=cfg.relation_channels,
                                     fusion_ch=cfg.fusion_channels,
                                     conv_only=cfg.conv_only,
                                     adjacency_overrides=overrides, dtype=dtype)
            else:
                block = RelationStack(in_ch, rng, fusion_ch=cfg.fusion_channels,
                                      conv_only=cfg.conv_only,
                                      adjacency_overrides=overrides, dtype=dtype)
            self.blocks.append(block)
            grid = 1 if cfg.conv_only else cfg.trunk_grid
            self.trunk_layers.append(PatchGraphConv(cfg.fusion_channels, cfg.fusion_channels,
                                                    grid, rng,
                                                    adjacency=overrides.get(grid),
                                                    dtype=dtype))
            in_ch = cfg.fusion_channels
        self.head = []
        ch = cfg.fusion_channels
        for out_ch in cfg.head_channels:
            self.head.append(Deconv2d(ch, out_ch, rng, kernel=4, stride=2, padding=1, dtype=dtype))
            ch = out_ch
        self.to_rgb = Deconv2d(ch, 3, rng, kernel=3, stride=1, padding=1, dtype=dtype)
        self.assign_names()

    def __call__(self, x):
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(f"generator expects (N, 3, {s}, {s}) input, got {x.shape}")
        for block, trunk in zip(self.blocks, self.trunk_layers):
            x = trunk(block(x))
        for stage in self.head:
            x = relu(stage(x))
        return tanh(self.to_rgb(x))


class Discriminator(Module):
    def __init__(self, cfg, seed=0):
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        self.cfg = cfg
        self.layers = []
        in_ch = 3
        grid = 1 if cfg.conv_only else cfg.grid
        for width, stride in zip(cfg.widths, cfg.strides):
            self.layers.append(PatchGraphConv(in_ch, width, grid, rng,
                                              stride=stride, dtype=dtype))
            in_ch = width
        flat_dim = cfg.widths[-1] * cfg.final_extent ** 2
        self.classify = Linear(flat_dim, 1, rng, dtype=dtype)
        self.assign_names()

    def __call__(self, x):
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(f"discriminator expects (N, 3, {s}, {s}) input, got {x.shape}")
        for layer in self.layers:
            x = layer(x)
        n = x.shape[0]
        return self.classify(reshape(x, (n, x.size // n)))


# ---------------------------------------------------------------------------
# closed-form parameter counts (kernel 3 unless stated; conv = O*C*9 + O)

def _conv_params(c_in, c_out, kernel=3):
    return c_out * c_in * kernel * kernel + c_out


def expected_generator_params(cfg):
    total = 0
    in_ch = 3
    r, f = cfg.relation_channels, cfg.fusion_channels
    for _ in range(3):
        if cfg.use_pyramid:
            c1, c2, c3 = cfg.extractor_channels
            total += _conv_params(in_ch, c1) + _conv_params(c1, c2) + _conv_params(c2, c3)
            for tap_ch in (c1, c2, c3):
                total += 3 * _conv_params(tap_ch, r)       # three grid branches
            total += _conv_params(r, r, kernel=2)          # x2 upsample
            total += _conv_params(r, r, kernel=4)          # x4 upsample
            total += _conv_params(3 * r, f)                # fusion
        else:
            total += 3 * _conv_params(in_ch, f)
        total += _conv_params(f, f)                        # trunk graph layer
        in_ch = f
    ch = f
    for out_ch in cfg.head_channels:
        total += _conv_params(ch, out_ch, kernel=4)
        ch = out_ch
    total += _conv_params(ch, 3)
    return total


def expected_discriminator_params(cfg):
    total = 0
    in_ch = 3
    for width in cfg.widths:
        total += _conv_params(in_ch, width)
        in_ch = width
    flat = cfg.widths[-1] * cfg.final_extent ** 2
    return total + flat * 1 + 1


# ---------------------------------------------------------------------------
# structural inspection (used by the ablation harness)

def iter_graph_layers(module):
    """Yield every PatchGraphConv in a module tree."""
    if isinstance(module, PatchGraphConv):
        yield module
    if isinstance(module, Module):
        for _, child in module._children():
            yield from iter_graph_layers(child)


def is_conv_only(module):
    """True iff every graph layer runs on a 1x1 grid with the unit adjacency."""
    layers = list(iter_graph_layers(module))
    return bool(layers) and all(layer.is_plain_conv() for layer in layers)


def conv_only_variant(cfg):
    return replace(cfg, conv_only=True)


def pyramid_free_variant(cfg):
    return replace(cfg, use_pyramid=False)
