"""The fully-volumetric encoder-decoder, assembled from engine primitives.

Layout (default config): three encoder levels carrying (32, 96, 192)
channels with (1, 2, 3) feature blocks — six blocks total, each a 3x3x3
conv (stride 1, pad 1) plus activation.  Level transitions are 4x4x4
convolutions with stride 4 (kernel = stride, so no voxel is skipped); the
first transition is the 1:64 spatial reduction, the second deepens context
so the bottleneck's receptive field covers more than half of every axis of
a 192x256x170 scan.  The decoder mirrors the transitions with transposed
convolutions, merges encoder features by elementwise sum at each level, and
ends in a 1x1x1 conv to class logits.  No normalization layers anywhere;
training uses batch size 1.

A max-pooling variant replaces the strided transition convs with pooling of
the same window/stride (channel widths then change inside the first block
of the next level, in both variants, so the two configs stay shape- and
block-count-identical).
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    ConvSpec,
    Tensor,
    add_tensors,
    conv3d,
    conv3d_transpose,
    conv_out_extent,
    crop_spatial,
    he_uniform_kernel,
    max_pool3d,
    no_grad,
    pad_spatial,
    relu,
    softmax_channels,
)
from .engine import backend as _backend
from .errors import InvalidConfig, OutOfMemoryBudget
from .nifti import NUM_CLASSES, LabelMap, VoxelVolume


@dataclass
class ArchitectureConfig:
    in_channels: int = 1
    num_classes: int = NUM_CLASSES
    level_channels: tuple = (32, 96, 192)
    blocks_per_level: tuple = (1, 2, 3)
    downsample_mode: str = "strided_conv"         # or "max_pool"
    level1_to_2_stride: tuple = (4, 4, 4)
    level2_to_3_stride: tuple = (4, 4, 4)
    activation: str = "relu"
    block_kernel: tuple = (3, 3, 3)               # (1, 3, 3) gives a 2D slice model
    memory_ceiling_bytes: int = int(4.5e9)
    dtype: str = "float32"

    def __post_init__(self):
        self.level_channels = tuple(int(c) for c in self.level_channels)
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        self.level1_to_2_stride = tuple(int(s) for s in self.level1_to_2_stride)
        self.level2_to_3_stride = tuple(int(s) for s in self.level2_to_3_stride)
        self.block_kernel = tuple(int(k) for k in self.block_kernel)
        if len(self.level_channels) != 3 or len(self.blocks_per_level) != 3:
            raise InvalidConfig("exactly three levels are supported")
        if any(b < 1 for b in self.blocks_per_level):
            raise InvalidConfig("every level needs at least one block")
        if not (self.level_channels[0] < self.level_channels[1] < self.level_channels[2]):
            raise InvalidConfig("level_channels must be strictly increasing")
        if self.downsample_mode not in ("strided_conv", "max_pool"):
            raise InvalidConfig(f"unknown downsample_mode {self.downsample_mode!r}")
        if self.activation != "relu":
            raise InvalidConfig(f"unknown activation {self.activation!r}")
        if any(s < 1 for s in self.level1_to_2_stride + self.level2_to_3_stride):
            raise InvalidConfig("strides must be positive")
        if min(self.in_channels, self.num_classes) < 1:
            raise InvalidConfig("in_channels and num_classes must be positive")

    @property
    def total_stride(self):
        return tuple(a * b for a, b in zip(self.level1_to_2_stride, self.level2_to_3_stride))

    def fingerprint(self):
        doc = json.dumps(self.__dict__, sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, default=list)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(**doc)


def paper_config(**overrides):
    """The reference configuration; keyword overrides for variants."""
    return replace(ArchitectureConfig(), **overrides)


def desk_config(**overrides):
    """Quarter-width variant for desk-scale (small phantom) experiments."""
    cfg = ArchitectureConfig(level_channels=(8, 24, 48))
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------


class Model:
    def __init__(self, config, params, specs):
        self.config = config
        self.params = params          # name -> Tensor (flat, checkpointable)
        self.specs = specs            # name -> ConvSpec or ("pool", window)
        self.trace = {}               # intermediate shapes of the last forward

    # -- parameter bookkeeping ---------------------------------------------
    def count_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def named_parameters(self):
        return self.params

    def state_arrays(self):
        return {name: p.data for name, p in self.params.items()}

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            src = arrays[name]
            if tuple(src.shape) != tuple(p.data.shape):
                raise InvalidConfig(f"checkpoint tensor {name!r} has shape "
                                    f"{src.shape}, model expects {p.data.shape}")
            p.data = np.array(src, dtype=p.data.dtype)

    # -- shape / capacity algebra ------------------------------------------
    def padded_extents(self, shape):
        ts = self.config.total_stride
        return tuple(-(-e // s) * s for e, s in zip(shape, ts))

    def receptive_field(self):
        """Bottleneck receptive field per axis, by the kernel/stride recursion."""
        rf = [1, 1, 1]
        jump = [1, 1, 1]
        cfg = self.config

        def absorb(kernel, stride):
            for i in range(3):
                rf[i] += (kernel[i] - 1) * jump[i]
                jump[i] *= stride[i]

        bk = cfg.block_kernel
        for _ in range(cfg.blocks_per_level[0]):
            absorb(bk, (1, 1, 1))
        absorb(cfg.level1_to_2_stride, cfg.level1_to_2_stride)
        for _ in range(cfg.blocks_per_level[1]):
            absorb(bk, (1, 1, 1))
        if cfg.level2_to_3_stride != (1, 1, 1):
            absorb(cfg.level2_to_3_stride, cfg.level2_to_3_stride)
        for _ in range(cfg.blocks_per_level[2]):
            absorb(bk, (1, 1, 1))
        return tuple(rf)

    def estimate_forward_bytes(self, shape):
        """Rough peak-resident estimate for one inference pass (no graph)."""
        cfg = self.config
        pad = self.padded_extents(shape)
        vox = int(np.prod(pad))
        s1 = int(np.prod(cfg.level1_to_2_stride))
        s2 = int(np.prod(cfg.level2_to_3_stride))
        c1, c2, c3 = cfg.level_channels
        itemsize = np.dtype(cfg.dtype).itemsize
        # level-1 skip + upsampled decoder map + their sum dominate; lower
        # levels add a few smaller maps; one col/gather buffer on top
        top = 3 * c1 * vox + 2 * cfg.num_classes * vox + cfg.in_channels * vox
        mid = 4 * c2 * (vox // s1)
        bot = 4 * c3 * (vox // (s1 * s2))
        from .engine._kernels_np import COL_BUDGET_BYTES
        return (top + mid + bot) * itemsize + COL_BUDGET_BYTES

    def check_memory(self, shape):
        need = self.estimate_forward_bytes(shape)
        if need > self.config.memory_ceiling_bytes:
            raise OutOfMemoryBudget(
                f"forward on {tuple(shape)} needs ~{need / 1e9:.2f} GB, "
                f"ceiling is {self.config.memory_ceiling_bytes / 1e9:.2f} GB")

    # -- forward ------------------------------------------------------------
    def _feature_blocks(self, h, level):
        for i in range(self.config.blocks_per_level[level]):
            h = relu(conv3d(h, self.specs[f"enc{level + 1}.block{i}"]))
        return h

    def _downsample(self, h, name):
        spec = self.specs[name]
        if isinstance(spec, tuple) and spec[0] == "pool":
            return max_pool3d(h, spec[1], spec[1])
        return conv3d(h, spec)

    def forward_logits(self, x):
        """Logits over classes for input (C, D, H, W) (or a bare 3D array).

        Pads symmetrically to downsampling divisibility, crops back after
        decoding. Gradients flow when called inside a recording context.
        """
        cfg = self.config
        if isinstance(x, VoxelVolume):
            x = x.data
        if isinstance(x, np.ndarray):
            if x.ndim == 3:
                x = x[None]
            x = Tensor(np.ascontiguousarray(x, dtype=cfg.dtype))
        shape = x.data.shape[-3:]
        target = self.padded_extents(shape)
        pads = []
        for e, t in zip(shape, target):
            lo = (t - e) // 2
            pads.append((lo, t - e - lo))
        h = pad_spatial(x, pads) if any(a or b for a, b in pads) else x

        e1 = self._feature_blocks(h, 0)
        h = self._downsample(e1, "down1")
        e2 = self._feature_blocks(h, 1)
        if cfg.level2_to_3_stride != (1, 1, 1):
            h = self._downsample(e2, "down2")
        else:
            h = e2
        h = self._feature_blocks(h, 2)
        self.trace = {"level1": e1.data.shape, "level2": e2.data.shape,
                      "level3": h.data.shape}

        if cfg.level2_to_3_stride != (1, 1, 1):
            h = conv3d_transpose(h, self.specs["up2"])
        else:
            h = conv3d(h, self.specs["up2"])  # 1x1x1 channel projection
        h = add_tensors(h, e2)
        h = conv3d_transpose(h, self.specs["up1"])
        h = add_tensors(h, e1)
        logits = conv3d(h, self.specs["head"])
        if any(a or b for a, b in pads):
            starts = tuple(p[0] for p in pads)
            logits = crop_spatial(logits, starts, shape)
        return logits

    def forward(self, x, check_memory=True):
        """Per-voxel class probabilities (softmax over channels), no graph."""
        if check_memory:
            data = x.data if isinstance(x, VoxelVolume) else np.asarray(x)
            self.check_memory(data.shape[-3:])
        with no_grad():
            return softmax_channels(self.forward_logits(x))


def predict_labels(probmap, spacing=(1.0, 1.0, 1.0)):
    """Hard labels by channel argmax; ties resolve to the lower class id."""
    probs = probmap.data if isinstance(probmap, Tensor) else np.asarray(probmap)
    labels = np.argmax(probs, axis=probs.ndim - 4).astype(np.uint8)
    return LabelMap(labels=labels, spacing=spacing)


# ---------------------------------------------------------------------------


def build(config=None, seed=0):
    """Instantiate a Model with seeded fan-in-uniform weights."""
    cfg = config or ArchitectureConfig()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    specs = {}

    def conv_spec(name, ci, co, kernel, stride=(1, 1, 1), padding=(0, 0, 0), bias_ch=None):
        w = Tensor(he_uniform_kernel(rng, (co, ci) + tuple(kernel), dtype), requires_grad=True)
        nb = co if bias_ch is None else bias_ch
        b = Tensor(np.zeros(nb, dtype=dtype), requires_grad=True)
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b
        specs[name] = ConvSpec(kernel=w, bias=b, stride=tuple(stride), padding=tuple(padding))

    c1, c2, c3 = cfg.level_channels
    bk = cfg.block_kernel
    bp = tuple(k // 2 for k in bk)
    strided = cfg.downsample_mode == "strided_conv"

    # encoder feature blocks; width changes in the first block of each level
    widths = [(cfg.in_channels, c1), (c1, c2), (c2, c3)]
    for level, (ci, co) in enumerate(widths):
        for i in range(cfg.blocks_per_level[level]):
            conv_spec(f"enc{level + 1}.block{i}", ci if i == 0 else co, co, bk, padding=bp)

    # level transitions
    if strided:
        conv_spec("down1", c1, c1, cfg.level1_to_2_stride, stride=cfg.level1_to_2_stride)
    else:
        specs["down1"] = ("pool", cfg.level1_to_2_stride)
    if cfg.level2_to_3_stride != (1, 1, 1):
        if strided:
            conv_spec("down2", c2, c2, cfg.level2_to_3_stride, stride=cfg.level2_to_3_stride)
        else:
            specs["down2"] = ("pool", cfg.level2_to_3_stride)
        # decoder transpose for the second transition: c3 -> c2
        conv_spec("up2", c2, c3, cfg.level2_to_3_stride,
                  stride=cfg.level2_to_3_stride, bias_ch=c2)
    else:
        # no spatial change; a 1x1x1 projection aligns channels for the skip
        conv_spec("up2", c3, c2, (1, 1, 1))
    # first transition transpose: c2 -> c1, then head
    conv_spec("up1", c1, c2, cfg.level1_to_2_stride,
              stride=cfg.level1_to_2_stride, bias_ch=c1)
    conv_spec("head", c1, cfg.num_classes, (1, 1, 1))

    return Model(cfg, params, specs)
