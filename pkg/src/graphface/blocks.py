"""Building blocks of the restoration networks.

MultiScaleBlock sums patch-graph convolutions at grid sizes 1, 2 and 8:
whole-image, object-level and patch-level feature relations. PyramidBlock
runs a small feature extractor, applies one MultiScaleBlock per extractor
level, upsamples the coarser levels back to full resolution, concatenates
and fuses.
"""
import logging

import numpy as np

from .backend import Module, ShapeError
from .backend.ops import concat, relu
from .layers import Conv2d, Deconv2d, PatchGraphConv

log = logging.getLogger(__name__)


class SmallExtractor(Module):
    """Three conv blocks with stride-2 between them; taps at full/half/quarter size.

    Stands in for a large pretrained extractor. The two perceptual taps keep
    the pretrained naming convention (j-th conv before the i-th pooling
    stage): conv2_2 maps to the block-2 output, conv5_4 to block 3, the
    deepest tap available here. Weights loaded from a container are frozen.
    """

    PERCEPTUAL_TAPS = ("conv2_2", "conv5_4")

    def __init__(self, in_ch, rng, channels=(16, 32, 64), dtype=np.float32):
        c1, c2, c3 = channels
        self.block1 = Conv2d(in_ch, c1, rng, stride=1, dtype=dtype)
        self.block2 = Conv2d(c1, c2, rng, stride=2, dtype=dtype)
        self.block3 = Conv2d(c2, c3, rng, stride=2, dtype=dtype)
        self.tap_channels = (c1, c2, c3)
        self.in_channels = in_ch

    def features(self, x):
        t1 = relu(self.block1(x))
        t2 = relu(self.block2(t1))
        t3 = relu(self.block3(t2))
        return t1, t2, t3

    def perceptual_taps(self, x):
        _, t2, t3 = self.features(x)
        return {"conv2_2": t2, "conv5_4": t3}

    @property
    def frozen(self):
        return not any(p.requires_grad for p in self.parameters())

    def save_weights(self, path):
        from .data import save_container
        save_container(path, self.state_dict())

    @classmethod
    def from_container(cls, path, in_ch=3, channels=(16, 32, 64), dtype=np.float32):
        """Load pretrained weights; the returned extractor is frozen."""
        from .data import load_container
        state = load_container(path)
        ex = cls(in_ch, np.random.default_rng(0), channels=channels, dtype=dtype)
        ex.load_state_dict(state)
        ex.freeze()
        return ex


class MultiScaleBlock(Module):
    """Sum of patch-graph convolutions at grid sizes 1/2/8 (shared input).

    All branches map in_ch -> out_ch with 3x3 kernels and stride 1, so their
    outputs match the input extent and add pixel-wise. When the running
    extent is not divisible by 8 the 8x8 branch is skipped (lazily, with a
    log notice) since its patches would be smaller than the kernel support.
    conv_only=True replaces every branch with a 1x1-grid identity-adjacency
    layer, i.e. plain convolutions.
    """

    def __init__(self, in_ch, out_ch, rng, scales=(1, 2, 8), conv_only=False,
                 adjacency_overrides=None, dtype=np.float32):
        overrides = adjacency_overrides or {}
        self.scales = tuple(scales)
        self.branches = []
        for k in self.scales:
            eff_k = 1 if conv_only else k
            adjacency = None if conv_only else overrides.get(k)
            self.branches.append(PatchGraphConv(in_ch, out_ch, eff_k, rng,
                                                adjacency=adjacency, dtype=dtype))
        self._warned_skip = False

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        out = None
        for layer in self.branches:
            if h % layer.k or w % layer.k:
                if not self._warned_skip:
                    log.warning("skipping %dx%d branch: extent %dx%d not divisible",
                                layer.k, layer.k, h, w)
                    self._warned_skip = True
                continue
            y = layer(x)
            out = y if out is None else _add(out, y)
        return out


def _add(a, b):
    from .backend.ops import add
    return add(a, b)


class PyramidBlock(Module):
    """Extractor levels -> per-level MultiScaleBlock -> upsample -> concat -> fuse.

    Levels 2 and 3 are brought back to level-1 extent with learnable
    non-overlapping deconvolutions (kernel = stride). The fusion layer is a
    stride-1 deconvolution over the concatenated channels, followed by relu.
    """

    def __init__(self, in_ch, rng, extractor_channels=(16, 32, 64),
                 relation_ch=64, fusion_ch=128, conv_only=False,
                 adjacency_overrides=None, dtype=np.float32):
        self.extractor = SmallExtractor(in_ch, rng, channels=extractor_channels, dtype=dtype)
        c1, c2, c3 = self.extractor.tap_channels
        kwargs = dict(conv_only=conv_only, adjacency_overrides=adjacency_overrides, dtype=dtype)
        self.relation1 = MultiScaleBlock(c1, relation_ch, rng, **kwargs)
        self.relation2 = MultiScaleBlock(c2, relation_ch, rng, **kwargs)
        self.relation3 = MultiScaleBlock(c3, relation_ch, rng, **kwargs)
        self.up2 = Deconv2d(relation_ch, relation_ch, rng, kernel=2, stride=2, padding=0, dtype=dtype)
        self.up4 = Deconv2d(relation_ch, relation_ch, rng, kernel=4, stride=4, padding=0, dtype=dtype)
        self.fuse = Deconv2d(3 * relation_ch, fusion_ch, rng, kernel=3, stride=1, padding=1, dtype=dtype)
        self.out_channels = fusion_ch

    def __call__(self, x):
        t1, t2, t3 = self.extractor.features(x)
        r1 = self.relation1(t1)
        r2 = self.up2(self.relation2(t2))
        r3 = self.up4(self.relation3(t3))
        for name, r in (("level2", r2), ("level3", r3)):
            if r.shape[2] != r1.shape[2] or r.shape[3] != r1.shape[3]:
                raise ShapeError(
                    f"{name} upsampled extent {r.shape[2]}x{r.shape[3]} does not match "
                    f"level-1 extent {r1.shape[2]}x{r1.shape[3]}")
        fused = self.fuse(concat([r1, r2, r3], axis=1))
        return relu(fused)


class RelationStack(Module):
    """Pyramid-free variant: a single MultiScaleBlock at full resolution.

    Drop-in for PyramidBlock (same output channel width) in the ablation
    without the multi-level extractor.
    """

    def __init__(self, in_ch, rng, fusion_ch=128, conv_only=False,
                 adjacency_overrides=None, dtype=np.float32):
        self.relation = MultiScaleBlock(in_ch, fusion_ch, rng, conv_only=conv_only,
                                        adjacency_overrides=adjacency_overrides, dtype=dtype)
        self.out_channels = fusion_ch

    def __call__(self, x):
        return self.relation(x)
