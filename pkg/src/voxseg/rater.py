"""Blinded A/B rating protocol over two candidate segmentations.

A study pairs each subject volume with two candidate label maps hidden
behind neutral tags.  A rating session walks a seeded random permutation
of the (subject x ROI) grid; every trial serves five neighbouring
greyscale slices (centre +-2) plus label-coloured overlays for
candidates "A" and "B", where which real candidate plays "A" is a
per-trial coin flip.  Raters answer A, B or skip.  The de-blinding map
never leaves the server until the tally.

Persistence is an append-only JSONL event log per session plus a
derived snapshot, both under a single directory; snapshots are written
via atomic rename and the log is the source of truth on reload.
"""

import base64
import hashlib
import io
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DuplicateChoice,
    IndexOutOfRange,
    ManifestError,
    NoData,
    UnknownSession,
)
from .nifti import LabelMap, read_label_file, read_volume_file
from .patchwork import AXES, axis_index

ROIS = ("EVC", "HVC", "MCX", "CER", "HIP", "EAC", "BST", "BGA")
CHOICES = ("A", "B", "skip")

# Okabe-Ito colours, one per palette class; background stays transparent.
CLASS_COLORS = (
    (0, 0, 0),
    (86, 180, 233),
    (240, 228, 66),
    (0, 158, 115),
    (213, 94, 0),
    (204, 121, 167),
    (230, 159, 0),
    (0, 114, 178),
)


@dataclass(frozen=True)
class SliceWindow:
    """Inclusive range of centre slices a trial may draw from."""
    axis: int
    lo: int
    hi: int


@dataclass(frozen=True)
class Trial:
    subject_id: str
    roi: str
    axis: int
    center_index: int
    a_candidate: int  # 1 or 2 - which blinded candidate is shown as "A"


@dataclass
class ChoiceRecord:
    choice: str
    timestamp: float
    slices_viewed: tuple = ()
    final_opacity: float = 1.0

    def to_dict(self):
        d = asdict(self)
        d["slices_viewed"] = list(self.slices_viewed)
        return d


@dataclass
class RatingSession:
    session_id: str
    rater_id: str
    seed: int
    study: str
    trials: list
    choices: dict = field(default_factory=dict)  # trial index -> ChoiceRecord

    @property
    def complete(self):
        return len(self.choices) == len(self.trials)

    def record(self, trial_index, choice, slices_viewed=(), final_opacity=1.0,
               timestamp=None):
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}, got {choice!r}")
        if not isinstance(trial_index, int) or not 0 <= trial_index < len(self.trials):
            raise IndexOutOfRange(
                f"trial {trial_index} outside 0..{len(self.trials) - 1}")
        if trial_index in self.choices:
            raise DuplicateChoice(f"trial {trial_index} already recorded")
        rec = ChoiceRecord(choice, time.time() if timestamp is None else timestamp,
                           tuple(int(o) for o in slices_viewed), float(final_opacity))
        self.choices[trial_index] = rec
        return rec

    def core_dict(self):
        """Session content without choices - what (manifest, rater, seed) fixes."""
        return {
            "session_id": self.session_id,
            "rater_id": self.rater_id,
            "seed": self.seed,
            "study": self.study,
            "trials": [asdict(t) for t in self.trials],
        }

    def to_dict(self):
        d = self.core_dict()
        d["choices"] = {str(i): rec.to_dict() for i, rec in self.choices.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        trials = [Trial(**t) for t in d["trials"]]
        choices = {}
        for key, rec in d.get("choices", {}).items():
            rec = dict(rec)
            rec["slices_viewed"] = tuple(rec.get("slices_viewed", ()))
            choices[int(key)] = ChoiceRecord(**rec)
        return cls(d["session_id"], d["rater_id"], int(d["seed"]), d["study"],
                   trials, choices)


# ---------------------------------------------------------------------------
# study manifest


class StudyManifest:
    """An opened study: subject volumes, two blinded candidates each, and
    per-(subject, ROI) slice windows.

    Windows are data, not geometry the service computes: localization is an
    input.  Keys are either a bare ROI (applies to every subject) or
    ``"subject/ROI"`` for an override.
    """

    def __init__(self, name, candidate_tags, subjects, windows):
        if not name or not isinstance(name, str):
            raise ManifestError("study needs a non-empty name")
        tags = tuple(candidate_tags)
        if len(tags) != 2 or len(set(tags)) != 2 or not all(tags):
            raise ManifestError(f"need exactly two distinct candidate tags, got {tags!r}")
        if not subjects:
            raise ManifestError("study has no subjects")
        self.name = name
        self.candidate_tags = tags
        self._data = {}
        for sid, vol, lab1, lab2 in subjects:
            if sid in self._data:
                raise ManifestError(f"duplicate subject id {sid!r}")
            vol = np.asarray(getattr(vol, "data", vol))
            lab1 = np.asarray(getattr(lab1, "labels", lab1))
            lab2 = np.asarray(getattr(lab2, "labels", lab2))
            if vol.ndim != 3:
                raise ManifestError(f"{sid}: volume must be 3D, got {vol.shape}")
            for lab in (lab1, lab2):
                if lab.shape != vol.shape:
                    raise ManifestError(
                        f"{sid}: candidate labels {lab.shape} do not cover "
                        f"volume {vol.shape}")
                if not np.issubdtype(lab.dtype, np.integer):
                    raise ManifestError(f"{sid}: labels must be integers")
            self._data[sid] = (vol, lab1, lab2)
        self.windows = {}
        for key, win in windows.items():
            if isinstance(win, SliceWindow):
                self.windows[key] = win
            else:
                try:
                    lo, hi = win["range"]
                    self.windows[key] = SliceWindow(axis_index(win["axis"]),
                                                   int(lo), int(hi))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ManifestError(f"bad window for {key!r}: {exc}") from exc
        self._check_windows()
        self._display = {}   # subject -> greyscale display range
        self._base_png = {}
        self._overlay_png = {}

    def _check_windows(self):
        for sid in self._data:
            for roi in ROIS:
                win = self.resolve_window(sid, roi)
                if win.axis not in (0, 1, 2):
                    raise ManifestError(f"{sid}/{roi}: bad axis {win.axis}")
                extent = self._data[sid][0].shape[win.axis]
                if win.lo > win.hi:
                    raise ManifestError(f"{sid}/{roi}: window lo {win.lo} > hi {win.hi}")
                if win.lo - 2 < 0 or win.hi + 2 >= extent:
                    raise ManifestError(
                        f"{sid}/{roi}: window [{win.lo}, {win.hi}] leaves no +-2 "
                        f"margin inside extent {extent}")

    @property
    def subject_ids(self):
        return tuple(self._data)

    def resolve_window(self, subject_id, roi):
        win = self.windows.get(f"{subject_id}/{roi}", self.windows.get(roi))
        if win is None:
            raise ManifestError(f"no slice window for {subject_id}/{roi}")
        return win

    def volume(self, subject_id):
        return self._data[subject_id][0]

    def labels(self, subject_id, candidate):
        if candidate not in (1, 2):
            raise ValueError(f"candidate must be 1 or 2, got {candidate}")
        return self._data[subject_id][candidate]

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot read study manifest {path}: {exc}") from exc
        for key in ("candidates", "subjects", "windows"):
            if key not in doc:
                raise ManifestError(f"study manifest missing {key!r}")
        root = path.parent
        subjects = []
        for entry in doc["subjects"]:
            try:
                sid = entry["id"]
                vol = read_volume_file(root / entry["volume"])
                labs = entry["labels"]
                if len(labs) != 2:
                    raise ManifestError(f"{sid}: need two candidate label paths")
                lab1, lab2 = (read_label_file(root / p) for p in labs)
            except ManifestError:
                raise
            except Exception as exc:
                raise ManifestError(f"study entry {entry!r} unreadable: {exc}") from exc
            subjects.append((sid, vol, lab1, lab2))
        return cls(doc.get("name", path.stem), doc["candidates"], subjects,
                   doc["windows"])

    # --- slice imagery (cached per subject/axis/index) ---

    def _display_range(self, subject_id):
        if subject_id not in self._display:
            vol = self._data[subject_id][0]
            lo, hi = np.percentile(vol, [1.0, 99.0])
            if hi <= lo:
                hi = lo + 1.0
            self._display[subject_id] = (float(lo), float(hi))
        return self._display[subject_id]

    def base_png(self, subject_id, axis, index):
        key = (subject_id, axis, index)
        if key not in self._base_png:
            lo, hi = self._display_range(subject_id)
            plane = np.take(self.volume(subject_id), index, axis=axis)
            grey = np.clip((plane - lo) / (hi - lo), 0.0, 1.0)
            img = Image.fromarray((grey * 255).astype(np.uint8), mode="L")
            self._base_png[key] = _encode_png(img)
        return self._base_png[key]

    def overlay_png(self, subject_id, candidate, axis, index):
        key = (subject_id, candidate, axis, index)
        if key not in self._overlay_png:
            plane = np.take(self.labels(subject_id, candidate), index, axis=axis)
            rgba = np.zeros(plane.shape + (4,), dtype=np.uint8)
            rgba[..., :3] = np.asarray(CLASS_COLORS, dtype=np.uint8)[plane]
            rgba[..., 3] = np.where(plane > 0, 255, 0)
            self._overlay_png[key] = _encode_png(Image.fromarray(rgba, mode="RGBA"))
        return self._overlay_png[key]


def _encode_png(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# ---------------------------------------------------------------------------
# session construction and bookkeeping


def _rater_digest(rater_id):
    return int.from_bytes(hashlib.sha256(str(rater_id).encode()).digest()[:8],
                          "little")


def session_id_for(study, rater_id, seed):
    raw = f"{study}\x1f{rater_id}\x1f{int(seed)}".encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def create_session(manifest, rater_id, seed):
    """Seeded 56-trial session (at 7 subjects x 8 ROIs).

    (manifest, rater_id, seed) fully determines the session, id included:
    trial order is a seeded permutation of the subject x ROI grid, and each
    trial draws its centre slice uniformly from the manifest window plus a
    coin flip for which candidate appears as "A".
    """
    rng = np.random.default_rng([int(seed), _rater_digest(rater_id)])
    pairs = [(sid, roi) for sid in manifest.subject_ids for roi in ROIS]
    trials = []
    for k in rng.permutation(len(pairs)):
        sid, roi = pairs[k]
        win = manifest.resolve_window(sid, roi)
        center = int(rng.integers(win.lo, win.hi + 1))
        a_candidate = int(rng.integers(1, 3))
        trials.append(Trial(sid, roi, win.axis, center, a_candidate))
    return RatingSession(session_id_for(manifest.name, rater_id, seed),
                         str(rater_id), int(seed), manifest.name, trials)


def trial_payload(manifest, session, trial_index):
    """Everything a rater sees for one trial; no de-blinding data inside.

    Five base64 PNG base slices (centre +-2) and five overlay PNGs per
    candidate, keyed only "A"/"B".
    """
    if not isinstance(trial_index, int) or not 0 <= trial_index < len(session.trials):
        raise IndexOutOfRange(
            f"trial {trial_index} outside 0..{len(session.trials) - 1}")
    t = session.trials[trial_index]
    base, first, second = [], [], []
    for offset in (-2, -1, 0, 1, 2):
        idx = t.center_index + offset
        base.append(manifest.base_png(t.subject_id, t.axis, idx))
        first.append(manifest.overlay_png(t.subject_id, 1, t.axis, idx))
        second.append(manifest.overlay_png(t.subject_id, 2, t.axis, idx))
    a, b = (first, second) if t.a_candidate == 1 else (second, first)
    return {
        "trial": trial_index,
        "trial_count": len(session.trials),
        "subject": t.subject_id,
        "roi": t.roi,
        "axis": AXES[t.axis],
        "center_index": t.center_index,
        "offsets": [-2, -1, 0, 1, 2],
        "recorded": trial_index in session.choices,
        "base": base,
        "overlays": {"A": a, "B": b},
    }


def tally(sessions):
    """Per-ROI preference counts, de-blinded via each trial's side assignment.

    Only complete sessions count, so each ROI totals raters x subjects
    (choices A/B mapped back to candidate_1/candidate_2, skips kept apart).
    """
    done = [s for s in sessions if s.complete]
    if not done:
        raise NoData("no completed sessions to tally")
    counts = {roi: {"candidate_1": 0, "candidate_2": 0, "skip": 0} for roi in ROIS}
    for s in done:
        for i, t in enumerate(s.trials):
            rec = s.choices[i]
            if rec.choice == "skip":
                counts[t.roi]["skip"] += 1
            else:
                cand = t.a_candidate if rec.choice == "A" else 3 - t.a_candidate
                counts[t.roi][f"candidate_{cand}"] += 1
    return counts


# ---------------------------------------------------------------------------
# storage


class SessionStore:
    """Sessions on disk: one JSONL event log + one snapshot per session.

    The log is append-only and authoritative; the snapshot is a readable
    projection refreshed by atomic rename after every write.  Reloading a
    directory replays the logs, so a crash between append and rename loses
    nothing.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._mu = threading.Lock()
        self._locks = {}
        self._sessions = {}
        for log in sorted(self.root.glob("*.jsonl")):
            session = self._replay(log)
            if session is not None:
                self._sessions[session.session_id] = session

    @staticmethod
    def _replay(log_path):
        session = None
        for line in log_path.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if event["event"] == "created":
                session = RatingSession.from_dict(event["session"])
            elif event["event"] == "choice" and session is not None:
                session.record(event["trial"], event["choice"],
                               event.get("slices_viewed", ()),
                               event.get("final_opacity", 1.0),
                               timestamp=event.get("ts"))
        return session

    def _lock_for(self, session_id):
        with self._mu:
            return self._locks.setdefault(session_id, threading.Lock())

    def _append(self, session_id, event):
        event = dict(event, ts=event.get("ts", time.time()))
        with open(self.root / f"{session_id}.jsonl", "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _snapshot(self, session):
        payload = json.dumps(session.to_dict(), indent=2)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, self.root / f"{session.session_id}.json")
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def create(self, session):
        """Register a session; re-posting identical content is idempotent."""
        with self._lock_for(session.session_id):
            existing = self._sessions.get(session.session_id)
            if existing is not None:
                if existing.core_dict() != session.core_dict():
                    raise ManifestError(
                        f"session {session.session_id} already exists with "
                        f"different content")
                return existing
            self._append(session.session_id,
                         {"event": "created", "session": session.core_dict()})
            self._sessions[session.session_id] = session
            self._snapshot(session)
            return session

    def get(self, session_id):
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no session {session_id!r}") from None

    def record(self, session_id, trial_index, choice, slices_viewed=(),
               final_opacity=1.0):
        session = self.get(session_id)
        with self._lock_for(session_id):
            rec = session.record(trial_index, choice, slices_viewed, final_opacity)
            self._append(session_id, {
                "event": "choice", "trial": trial_index, "choice": rec.choice,
                "slices_viewed": list(rec.slices_viewed),
                "final_opacity": rec.final_opacity, "ts": rec.timestamp,
            })
            self._snapshot(session)
        return session

    def sessions(self):
        return list(self._sessions.values())


# ---------------------------------------------------------------------------
# a ready-to-serve example study


def build_phantom_study(out_dir, subjects=7, extent=(48, 48, 48), seed=0,
                        dither=0.25):
    """Write a complete phantom study and return the manifest path.

    Candidate 1 is the clean reference labelling; candidate 2 is the same
    labelling with boundary dither, so the two are visually close but
    distinguishable - enough to exercise the protocol for real.
    """
    from .nifti import write_label_file, write_volume_file
    from .phantom import _dither_boundaries, default_specs, generate_phantom

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, spec in enumerate(default_specs(subjects, extent=extent, seed=seed)):
        vol, labels = generate_phantom(spec)
        alt = _dither_boundaries(labels.labels, dither,
                                 np.random.default_rng([seed, 7, i]))
        sid = f"subject_{i:03d}"
        write_volume_file(out / f"{sid}.nii.gz", vol)
        write_label_file(out / f"{sid}_ref.nii.gz", labels)
        write_label_file(out / f"{sid}_alt.nii.gz", LabelMap(alt))
        entries.append({"id": sid, "volume": f"{sid}.nii.gz",
                        "labels": [f"{sid}_ref.nii.gz", f"{sid}_alt.nii.gz"]})
    doc = {
        "name": "phantom-study",
        "candidates": ["reference", "dithered"],
        "subjects": entries,
        "windows": phantom_windows(extent),
    }
    path = out / "study.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def phantom_windows(extent):
    """Illustrative per-ROI slice windows for the phantom geometry.

    The names keep the protocol's ROI vocabulary; on phantoms they map to
    regions that actually show the analog structures (posterior cap for CER,
    stem span for BST, blob plane for BGA) or generic shell slices.
    """
    def window(axis, lo_frac, hi_frac):
        i = axis_index(axis)
        lo = max(2, int(round(lo_frac * extent[i])))
        hi = min(extent[i] - 3, max(lo, int(round(hi_frac * extent[i]))))
        return {"axis": AXES[i], "range": [lo, hi]}

    return {
        "EVC": window("longitudinal", 0.58, 0.64),
        "HVC": window("coronal", 0.60, 0.70),
        "MCX": window("sagittal", 0.45, 0.55),
        "CER": window("longitudinal", 0.70, 0.78),
        "HIP": window("sagittal", 0.28, 0.36),
        "EAC": window("sagittal", 0.20, 0.27),
        "BST": window("longitudinal", 0.48, 0.62),
        "BGA": window("coronal", 0.43, 0.56),
    }
