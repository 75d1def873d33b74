"""Segmentation evaluation: Dice, 95th-percentile Hausdorff, volumetric
similarity, and the spurious-activation analysis on soft maps.

Conventions (all deliberate, all covered by the oracle tests):

* both masks empty -> perfect score (dice 1, vs 1, hd95 missing);
* exactly one empty -> worst score (dice 0, vs 0, hd95 missing);
* boundary voxels are class voxels with a six-connected non-class neighbor
  (the array edge counts as outside);
* HD95 = max over the two directions of the 95th percentile of
  boundary-to-boundary nearest distances, percentile by linear
  interpolation a + t*(b - a) between order statistics;
* distances in mm via the voxel spacing.

The distance computation is plain all-pairs minimisation (chunked to bound
memory) rather than a spatial index: per-pair arithmetic is then identical
to the brute-force oracle, which makes the equivalence tests meaningful at
the bit level, and boundary sets at workbench scale are small.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import PairingMismatch, ShapeMismatch
from .nifti import LabelMap

# cap on the all-pairs distance block held in memory at once
_PAIR_CHUNK = 4_000_000


def _as_labels(x):
    return x.labels if isinstance(x, LabelMap) else np.asarray(x)


def _masks(pred, ref, class_id):
    p = _as_labels(pred)
    r = _as_labels(ref)
    if p.shape != r.shape:
        raise ShapeMismatch(f"pred {p.shape} vs ref {r.shape}")
    return p == class_id, r == class_id


def dice(pred, ref, class_id):
    """Overlap 2|A∩B| / (|A|+|B|); both-empty -> 1, one-empty -> 0."""
    a, b = _masks(pred, ref, class_id)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def volumetric_similarity(pred, ref, class_id):
    """1 - |V_a - V_b| / (V_a + V_b); both-empty -> 1.

    Computed as a single division of exact integers, so VS >= Dice holds
    to the last ulp (both divide by the same total, and rounding is
    monotone in the numerator).
    """
    a, b = _masks(pred, ref, class_id)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    return (na + nb - abs(na - nb)) / (na + nb)


def boundary_mask(mask):
    """Class voxels with at least one six-connected non-class neighbor."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    for axis in range(3):
        for step in (1, -1):
            shifted = np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
            interior &= shifted
    return mask & ~interior


def percentile_linear(values, q):
    """Percentile with the plain a + t*(b-a) interpolation rule."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    n = vals.size
    if n == 0:
        raise ValueError("percentile of empty set")
    if n == 1:
        return float(vals[0])
    pos = (q / 100.0) * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    t = pos - lo
    a, b = float(vals[lo]), float(vals[hi])
    return a + t * (b - a)


def _nearest_distances(src, dst, spacing):
    """For each point in src, min mm distance to any point in dst."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    sp = np.asarray(spacing, dtype=np.float64)
    out = np.empty(len(src), dtype=np.float64)
    rows = max(1, _PAIR_CHUNK // max(1, len(dst)))
    for start in range(0, len(src), rows):
        block = src[start:start + rows]
        diff = (block[:, None, :] - dst[None, :, :]) * sp
        d2 = np.square(diff).sum(axis=-1)
        out[start:start + rows] = np.sqrt(d2.min(axis=1))
    return out


def hd95(pred, ref, class_id, spacing=(1.0, 1.0, 1.0)):
    """Symmetrized 95th-percentile boundary distance; None when either mask
    is empty (Missing)."""
    a, b = _masks(pred, ref, class_id)
    pa = np.argwhere(boundary_mask(a))
    pb = np.argwhere(boundary_mask(b))
    if len(pa) == 0 or len(pb) == 0:
        return None
    fwd = percentile_linear(_nearest_distances(pa, pb, spacing), 95.0)
    bwd = percentile_linear(_nearest_distances(pb, pa, spacing), 95.0)
    return max(fwd, bwd)


def spurious_activation_rate(probmap, ref, class_id, threshold=0.2, dilation_voxels=3):
    """Fraction of voxels outside a dilated reference mask whose class
    probability exceeds ``threshold``.

    ``probmap`` may be the full (C, D, H, W) soft output or the single
    class's 3D probability volume.
    """
    if isinstance(probmap, np.ndarray):
        prob = probmap
    else:
        prob = np.asarray(getattr(probmap, "data", probmap))
    if prob.ndim == 4:
        prob = prob[class_id]
    r = _as_labels(ref)
    if prob.shape != r.shape:
        raise ShapeMismatch(f"probmap {prob.shape} vs ref {r.shape}")
    mask = r == class_id
    struct = ndimage.generate_binary_structure(3, 1)  # six-connected
    dilated = ndimage.binary_dilation(mask, structure=struct, iterations=dilation_voxels)
    outside = ~dilated
    n_outside = int(outside.sum())
    if n_outside == 0:
        return 0.0
    return float((prob[outside] > threshold).sum()) / n_outside


# ---------------------------------------------------------------------------
# reports


@dataclass
class ClassScores:
    class_id: int
    dice: float
    hd95: float  # None = Missing (empty mask on either side)
    vs: float


class MetricReport:
    """Per-subject, per-class scores plus cross-subject aggregates."""

    def __init__(self, scores, classes):
        # scores: {subject_id: {class_id: ClassScores}}
        self.scores = scores
        self.classes = list(classes)
        self.subjects = list(scores)

    def aggregate(self, class_id):
        ds = [self.scores[s][class_id].dice for s in self.subjects]
        vs = [self.scores[s][class_id].vs for s in self.subjects]
        hs = [self.scores[s][class_id].hd95 for s in self.subjects
              if self.scores[s][class_id].hd95 is not None]
        missing = len(self.subjects) - len(hs)
        agg = {
            "dice_mean": float(np.mean(ds)),
            "dice_std": float(np.std(ds)),
            "vs_mean": float(np.mean(vs)),
            "vs_std": float(np.std(vs)),
            "hd95_missing": missing,
            "n_subjects": len(self.subjects),
        }
        agg["hd95_mean"] = float(np.mean(hs)) if hs else None
        agg["hd95_std"] = float(np.std(hs)) if hs else None
        return agg

    def mean_dice(self, classes=None):
        classes = self.classes if classes is None else classes
        return float(np.mean([self.aggregate(c)["dice_mean"] for c in classes]))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["subject", "class", "dice", "hd95_mm", "vs"])
        for s in self.subjects:
            for c in self.classes:
                sc = self.scores[s][c]
                writer.writerow([s, c, f"{sc.dice:.6f}",
                                 "" if sc.hd95 is None else f"{sc.hd95:.6f}",
                                 f"{sc.vs:.6f}"])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "classes": {str(c): self.aggregate(c) for c in self.classes},
            "subjects": self.subjects,
        }, indent=2)


def evaluate(preds, refs, classes, spacing=(1.0, 1.0, 1.0), with_hd95=True):
    """Score paired predictions against references.

    ``preds`` and ``refs`` are dicts keyed by subject id (or parallel lists,
    paired by position).
    """
    if not isinstance(preds, dict):
        preds = {i: p for i, p in enumerate(preds)}
    if not isinstance(refs, dict):
        refs = {i: r for i, r in enumerate(refs)}
    if set(preds) != set(refs):
        raise PairingMismatch(f"unpaired subjects: {set(preds) ^ set(refs)}")
    scores = {}
    for subject in preds:
        p, r = preds[subject], refs[subject]
        if _as_labels(p).shape != _as_labels(r).shape:
            raise PairingMismatch(f"shape mismatch for subject {subject!r}")
        row = {}
        for c in classes:
            row[c] = ClassScores(
                class_id=c,
                dice=dice(p, r, c),
                hd95=hd95(p, r, c, spacing) if with_hd95 else None,
                vs=volumetric_similarity(p, r, c),
            )
        scores[subject] = row
    return MetricReport(scores, classes)
