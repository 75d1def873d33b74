"""Synthetic labeled head volumes for training and benchmarking.

A phantom is a nested-ellipsoid "head": a CSF rim on the outside, a gray
matter shell under it, white matter filling the interior, and four deep
structures carved out of the white matter — ventricles at the centre, a
midline stem, a posterior cap (cerebellum analog) and a pair of lateral
blobs (basal ganglia analog).

The cap and the blob pair deliberately share one intensity draw per volume
(see ``twin_classes``): locally they look the same, and telling them apart
requires knowing where they sit in the head.  Models that see the whole
volume can use that cue; models fed small patches cannot.
"""

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidSpec
from .nifti import VoxelVolume, LabelMap, NUM_CLASSES

BACKGROUND, GM, WM, CSF, VENTRICLES, CEREBELLUM, BRAINSTEM, BASAL_GANGLIA = range(8)


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, intensity model and randomization knobs for one phantom.

    Lengths are fractions: ``head_frac`` of the volume extent per axis;
    ``gm_frac``/``wm_frac`` of the head radius (shell boundaries, nested);
    the deep-structure sizes and offsets again of the volume extent.
    """

    extent: tuple = (48, 48, 48)

    # nested shells (fractions of the head radius, outermost first)
    head_frac: tuple = (0.46, 0.46, 0.46)
    gm_frac: float = 0.84
    wm_frac: float = 0.66

    # deep structures (fractions of the volume extent)
    ventricle_frac: float = 0.09
    cap_offset_frac: float = 2.0 / 3.0   # cap = white matter behind this plane
    pair_gap_frac: float = 0.17          # blob centre distance from the midline
    blob_frac: float = 0.09
    stem_radius_frac: float = 0.075
    stem_drop_frac: float = 0.18         # stem line offset below the centre
    stem_span_frac: tuple = (0.46, 0.64)  # along the longitudinal axis

    # intensity model, one entry per class 0..7
    means: tuple = (0.05, 0.55, 0.82, 0.30, 0.20, 0.68, 0.74, 0.68)
    stds: tuple = (0.02, 0.04, 0.04, 0.03, 0.03, 0.04, 0.04, 0.04)
    twin_classes: tuple = (CEREBELLUM, BASAL_GANGLIA)

    # per-volume randomization
    jitter_frac: float = 0.015           # head centre displacement
    size_jitter: float = 0.06            # relative scaling of shells/structures
    mean_jitter_std: float = 0.04        # per-class intensity shift
    noise_std: float = 0.02
    bias_amplitude: float = 0.10
    label_noise: float = 0.0             # boundary dither probability
    seed: int = 0

    def __post_init__(self):
        e = tuple(int(v) for v in self.extent)
        if len(e) != 3 or any(v < 16 for v in e):
            raise InvalidSpec(f"extent must be 3 integers >= 16, got {self.extent}")
        object.__setattr__(self, "extent", e)
        if len(self.head_frac) != 3 or any(not 0 < f <= 0.5 for f in self.head_frac):
            raise InvalidSpec(f"head_frac out of (0, 0.5]: {self.head_frac}")
        if not 0 < self.wm_frac < self.gm_frac < 1:
            raise InvalidSpec(
                f"shell fractions must nest: 0 < wm {self.wm_frac} < gm {self.gm_frac} < 1")
        grow = 1.0 + self.size_jitter
        if self.ventricle_frac <= 0 or \
                self.ventricle_frac * grow / min(self.head_frac) >= self.wm_frac:
            raise InvalidSpec("ventricles must fit inside the white matter")
        if (self.pair_gap_frac + self.blob_frac * grow) / self.head_frac[0] >= self.wm_frac:
            raise InvalidSpec("lateral blobs must fit inside the white matter")
        if not 2.0 / 3.0 <= self.cap_offset_frac < 0.95:
            raise InvalidSpec(
                f"cap_offset_frac must lie in [2/3, 0.95), got {self.cap_offset_frac}")
        if 0.5 + self.wm_frac * self.head_frac[2] - self.jitter_frac \
                < self.cap_offset_frac + 0.02:
            raise InvalidSpec("white matter does not reach behind the cap plane")
        lo, hi = self.stem_span_frac
        if not 0 < lo < hi <= self.cap_offset_frac:
            raise InvalidSpec(f"stem span {self.stem_span_frac} must end before the cap")
        if (self.stem_drop_frac + self.stem_radius_frac) / self.head_frac[1] >= self.gm_frac:
            raise InvalidSpec("stem must stay inside the gray matter boundary")
        if len(self.means) != NUM_CLASSES or len(self.stds) != NUM_CLASSES:
            raise InvalidSpec("means and stds need one entry per class (8)")
        if any(s < 0 for s in self.stds) or self.noise_std < 0:
            raise InvalidSpec("noise levels must be non-negative")
        if not 0 <= self.bias_amplitude < 1:
            raise InvalidSpec(f"bias_amplitude must lie in [0, 1), got {self.bias_amplitude}")
        if not 0 <= self.label_noise <= 1:
            raise InvalidSpec(f"label_noise must lie in [0, 1], got {self.label_noise}")
        if not 0 <= self.size_jitter < 0.5 or self.jitter_frac < 0 or self.mean_jitter_std < 0:
            raise InvalidSpec("jitter knobs must be non-negative (size_jitter < 0.5)")
        if any(not 0 <= c < NUM_CLASSES for c in self.twin_classes):
            raise InvalidSpec(f"twin_classes out of palette range: {self.twin_classes}")

    def to_dict(self):
        return asdict(self)


def _ellipsoid_r2(coords, center, semi):
    """Squared normalized radius of every voxel for one ellipsoid."""
    r2 = np.zeros(coords[0].shape)
    for x, c, a in zip(coords, center, semi):
        r2 += ((x - c) / a) ** 2
    return r2


def generate_phantom(spec: PhantomSpec):
    """Render one phantom; returns ``(VoxelVolume, LabelMap)``.

    The same spec (including seed) always yields the same pair, bit for bit.
    """
    rng = np.random.default_rng(spec.seed)
    ex = np.array(spec.extent, dtype=float)
    coords = np.meshgrid(*(np.arange(e, dtype=float) for e in spec.extent), indexing="ij")

    center = (ex - 1) / 2 + rng.uniform(-1, 1, size=3) * spec.jitter_frac * ex
    scale = lambda: 1.0 + rng.uniform(-1, 1) * spec.size_jitter
    head = np.array(spec.head_frac) * ex * scale()

    labels = np.zeros(spec.extent, dtype=np.uint8)
    r2 = _ellipsoid_r2(coords, center, head)
    labels[r2 <= 1.0] = CSF
    labels[r2 <= (spec.gm_frac * scale()) ** 2] = GM
    wm_r2 = (spec.wm_frac * scale()) ** 2
    labels[r2 <= wm_r2] = WM

    # posterior cap: white matter behind the offset plane
    z0 = int(np.ceil(spec.cap_offset_frac * spec.extent[2]))
    cap = (labels == WM) & (coords[2] >= z0)
    labels[cap] = CEREBELLUM

    # midline stem: a tube along the longitudinal axis, below the centre
    stem_r = spec.stem_radius_frac * min(ex) * scale()
    stem_c = (center[0], center[1] + spec.stem_drop_frac * ex[1])
    z_lo, z_hi = (f * ex[2] for f in spec.stem_span_frac)
    stem = ((coords[0] - stem_c[0]) ** 2 + (coords[1] - stem_c[1]) ** 2 <= stem_r ** 2) \
        & (coords[2] >= z_lo) & (coords[2] <= z_hi) & (r2 <= spec.gm_frac ** 2)
    labels[stem] = BRAINSTEM

    # paired lateral blobs
    blob_semi = spec.blob_frac * ex * scale()
    gap = spec.pair_gap_frac * ex[0]
    for side in (-1.0, 1.0):
        b = _ellipsoid_r2(coords, (center[0] + side * gap, center[1], center[2]), blob_semi)
        labels[b <= 1.0] = BASAL_GANGLIA

    # central ventricles, painted last so they are always fully realized
    vent = _ellipsoid_r2(coords, center, spec.ventricle_frac * ex * scale())
    labels[vent <= 1.0] = VENTRICLES

    if spec.label_noise > 0:
        labels = _dither_boundaries(labels, spec.label_noise, rng)

    # intensities: per-class mean (with a per-volume shift), texture, bias, noise
    means = np.array(spec.means) + rng.normal(0, spec.mean_jitter_std, size=NUM_CLASSES)
    for c in spec.twin_classes[1:]:
        means[c] = means[spec.twin_classes[0]] + (spec.means[c] - spec.means[spec.twin_classes[0]])
    stds = np.array(spec.stds)
    img = means[labels] + rng.standard_normal(labels.shape) * stds[labels]
    if spec.bias_amplitude > 0:
        raw = gaussian_filter(rng.standard_normal(labels.shape), sigma=min(spec.extent) / 6)
        peak = np.abs(raw).max()
        if peak > 0:
            img *= 1.0 + spec.bias_amplitude * raw / peak
    if spec.noise_std > 0:
        img += rng.standard_normal(labels.shape) * spec.noise_std

    return VoxelVolume(img.astype(np.float32)), LabelMap(labels)


def _dither_boundaries(labels, prob, rng):
    """Swap a fraction of boundary voxels for a random 6-neighbour's label."""
    out = labels.copy()
    shifted = []
    for axis in range(3):
        for step in (-1, 1):
            s = np.roll(labels, step, axis=axis)
            # re-seal the wrapped face so volume edges never leak across
            edge = [slice(None)] * 3
            edge[axis] = 0 if step == 1 else -1
            s[tuple(edge)] = labels[tuple(edge)]
            shifted.append(s)
    shifted = np.stack(shifted)
    boundary = (shifted != labels[None]).any(axis=0)
    hit = boundary & (rng.random(labels.shape) < prob)
    pick = rng.integers(0, 6, size=labels.shape)
    out[hit] = np.take_along_axis(shifted, pick[None], axis=0)[0][hit]
    return out


def default_specs(count, extent=(48, 48, 48), seed=0, **overrides):
    """A family of `count` specs differing only in their per-volume seed."""
    rng = np.random.default_rng(seed)
    seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=count)]
    return [PhantomSpec(extent=extent, seed=s, **overrides) for s in seeds]
