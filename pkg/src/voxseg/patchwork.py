"""Slice- and patch-based comparison pipelines.

The 2D baselines reuse the volumetric block vocabulary with a (1, 3, 3)
kernel and in-plane-only downsampling, so "a model per slicing axis" is
just the same encoder-decoder run with the chosen axis first and a
depth-1 receptive field along it.  The 3D-patch baseline runs the regular
model over a 50%-overlap patch grid and averages probabilities where
patches overlap.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, PatchLargerThanVolume, ShapeMismatch
from .model import ArchitectureConfig

AXES = ("sagittal", "coronal", "longitudinal")


def axis_index(axis):
    """0, 1 or 2 for a ViewAxis name (accepts an int already in range)."""
    if isinstance(axis, int):
        if axis not in (0, 1, 2):
            raise ValueError(f"axis index {axis} out of range")
        return axis
    try:
        return AXES.index(axis)
    except ValueError:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}") from None


def extract_slices(volume, axis):
    """Ordered 2D slice stack along a principal axis (slicing axis first)."""
    data = getattr(volume, "data", volume)
    data = np.asarray(data)
    return np.ascontiguousarray(np.moveaxis(data, axis_index(axis), 0))


def restack_slices(stack, axis):
    """Inverse of extract_slices."""
    return np.ascontiguousarray(np.moveaxis(np.asarray(stack), 0, axis_index(axis)))


def volume_axis_first(data, axis):
    """Move a spatial axis to the front of a (..., D, H, W) array."""
    i = axis_index(axis)
    data = np.asarray(data)
    spatial0 = data.ndim - 3
    return np.ascontiguousarray(np.moveaxis(data, spatial0 + i, spatial0))


def volume_axis_back(data, axis):
    i = axis_index(axis)
    data = np.asarray(data)
    spatial0 = data.ndim - 3
    return np.ascontiguousarray(np.moveaxis(data, spatial0, spatial0 + i))


# ---------------------------------------------------------------------------
# patch grids


@dataclass
class PatchGrid:
    volume_shape: tuple
    patch_extent: tuple
    stride: tuple
    origins: list  # corner coordinates, one per planned patch

    def __len__(self):
        return len(self.origins)


def _axis_starts(extent, patch, stride):
    starts = list(range(0, extent - patch + 1, stride))
    if starts[-1] + patch < extent:
        starts.append(extent - patch)  # clamp the last patch flush to the edge
    return starts


def plan_patches(volume_shape, patch_extent=(64, 64, 64), stride=(32, 32, 32)):
    """Grid of patch corners covering every voxel; boundary patches clamp
    flush to the volume instead of padding past it."""
    volume_shape = tuple(int(e) for e in volume_shape)
    patch_extent = tuple(int(p) for p in patch_extent)
    stride = tuple(int(s) for s in stride)
    for e, p in zip(volume_shape, patch_extent):
        if p > e:
            raise PatchLargerThanVolume(f"patch {patch_extent} exceeds volume {volume_shape}")
    if any(s < 1 for s in stride):
        raise ValueError(f"stride must be positive, got {stride}")
    per_axis = [_axis_starts(e, p, s) for e, p, s in zip(volume_shape, patch_extent, stride)]
    origins = [(a, b, c) for a in per_axis[0] for b in per_axis[1] for c in per_axis[2]]
    return PatchGrid(volume_shape, patch_extent, stride, origins)


def extract_patch(data, origin, extent):
    """Crop a spatial patch from a (..., D, H, W) array."""
    data = np.asarray(data)
    sl = tuple(slice(o, o + e) for o, e in zip(origin, extent))
    return np.ascontiguousarray(data[(Ellipsis,) + sl])


def stitch(probmaps, grid):
    """Average overlapping patch probability maps onto the full grid.

    ``probmaps`` must align 1:1 with ``grid.origins``; each is (C, *patch).
    """
    if len(probmaps) != len(grid.origins):
        raise GridMismatch(f"{len(probmaps)} maps for {len(grid.origins)} planned patches")
    first = np.asarray(probmaps[0])
    c = first.shape[0]
    expected = (c,) + tuple(grid.patch_extent)
    acc = np.zeros((c,) + tuple(grid.volume_shape), dtype=np.float64)
    count = np.zeros(grid.volume_shape, dtype=np.int32)
    for pm, origin in zip(probmaps, grid.origins):
        pm = np.asarray(pm)
        if pm.shape != expected:
            raise GridMismatch(f"patch map shape {pm.shape}, expected {expected}")
        sl = tuple(slice(o, o + e) for o, e in zip(origin, grid.patch_extent))
        acc[(slice(None),) + sl] += pm
        count[sl] += 1
    if (count == 0).any():
        raise GridMismatch("grid leaves voxels uncovered")
    return (acc / count).astype(first.dtype)


def aggregate_views(probmaps):
    """Voxelwise arithmetic mean of per-axis probability maps."""
    maps = [np.asarray(m) for m in probmaps]
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ShapeMismatch(f"view map shapes differ: {m.shape} vs {shape}")
    return np.mean(maps, axis=0, dtype=np.float64).astype(maps[0].dtype)


# ---------------------------------------------------------------------------
# baseline architectures (same block vocabulary, reduced context)


def slice_model_config(widths=(8, 24, 48), **overrides):
    """Per-axis 2D baseline: depth-1 kernels, in-plane downsampling only."""
    base = dict(
        level_channels=widths,
        block_kernel=(1, 3, 3),
        level1_to_2_stride=(1, 4, 4),
        level2_to_3_stride=(1, 4, 4),
    )
    base.update(overrides)
    return ArchitectureConfig(**base)


def patch_model_config(widths=(8, 24, 48), **overrides):
    """3D-patch baseline: full 3D blocks, milder downsampling for small crops."""
    base = dict(
        level_channels=widths,
        level1_to_2_stride=(2, 2, 2),
        level2_to_3_stride=(2, 2, 2),
    )
    base.update(overrides)
    return ArchitectureConfig(**base)
