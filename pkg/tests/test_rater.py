"""Rating-protocol core: sessions, blinding, tally, storage, imagery."""

import base64
import io
import json

import numpy as np
import pytest
from PIL import Image

from voxseg.errors import (
    DuplicateChoice,
    IndexOutOfRange,
    ManifestError,
    NoData,
    UnknownSession,
)
from voxseg.rater import (
    CLASS_COLORS,
    ROIS,
    RatingSession,
    SessionStore,
    SliceWindow,
    StudyManifest,
    Trial,
    build_phantom_study,
    create_session,
    phantom_windows,
    session_id_for,
    tally,
    trial_payload,
)

EXTENT = (16, 16, 16)


def subject_arrays(i, extent=EXTENT, fill=None):
    rng = np.random.default_rng(1000 + i)
    vol = rng.normal(0.5, 0.2, size=extent).astype(np.float32)
    if fill is not None:
        lab1 = np.full(extent, fill[0], dtype=np.uint8)
        lab2 = np.full(extent, fill[1], dtype=np.uint8)
    else:
        lab1 = np.zeros(extent, np.uint8)
        lab1[3:13, 3:13, 3:13] = 2
        lab1[6:10, 6:10, 6:10] = 5
        lab2 = lab1.copy()
        lab2[6:10, 6:10, 6:10] = 7
    return vol, lab1, lab2


def tiny_manifest(subjects=7, extent=EXTENT, name="tiny", fill=None):
    entries = []
    for i in range(subjects):
        vol, lab1, lab2 = subject_arrays(i, extent, fill)
        entries.append((f"s{i:02d}", vol, lab1, lab2))
    return StudyManifest(name, ("m1", "m2"), entries, phantom_windows(extent))


@pytest.fixture(scope="module")
def study():
    return tiny_manifest()


# ---------------------------------------------------------------------------
# session construction


def test_trial_count_is_subjects_times_rois(study):
    session = create_session(study, "alice", 0)
    assert len(session.trials) == 7 * 8 == 56
    pairs = {(t.subject_id, t.roi) for t in session.trials}
    assert pairs == {(s, r) for s in study.subject_ids for r in ROIS}


def test_same_inputs_reproduce_session_exactly(study):
    a = create_session(study, "alice", 42)
    b = create_session(study, "alice", 42)
    assert a.to_dict() == b.to_dict()
    assert a.session_id == session_id_for("tiny", "alice", 42)


def test_rater_or_seed_changes_the_walk(study):
    base = create_session(study, "alice", 0)
    assert create_session(study, "bob", 0).trials != base.trials
    assert create_session(study, "alice", 1).trials != base.trials
    assert create_session(study, "bob", 0).session_id != base.session_id


def test_centers_drawn_inside_the_manifest_window(study):
    for seed in range(5):
        for t in create_session(study, "alice", seed).trials:
            win = study.resolve_window(t.subject_id, t.roi)
            assert t.axis == win.axis
            assert win.lo <= t.center_index <= win.hi


def test_side_assignment_balanced_over_1000_sessions(study):
    total = as_one = 0
    for seed in range(1000):
        for t in create_session(study, "rater", seed).trials:
            total += 1
            as_one += t.a_candidate == 1
    assert 0.45 <= as_one / total <= 0.55


def test_per_subject_window_override():
    windows = phantom_windows(EXTENT)
    windows["s00/EVC"] = {"axis": "sagittal", "range": [7, 8]}
    vol, lab1, lab2 = subject_arrays(0)
    m = StudyManifest("t", ("m1", "m2"), [("s00", vol, lab1, lab2)], windows)
    assert m.resolve_window("s00", "EVC") == SliceWindow(0, 7, 8)
    assert m.resolve_window("s00", "HVC").axis == 1


# ---------------------------------------------------------------------------
# choice recording


def test_record_and_complete(study):
    session = create_session(study, "alice", 3)
    for i in range(len(session.trials)):
        choice = ("A", "B", "skip")[i % 3]
        session.record(i, choice, slices_viewed=(-1, 0), final_opacity=0.4)
    assert session.complete
    with pytest.raises(DuplicateChoice):
        session.record(0, "A")


def test_duplicate_choice_rejected(study):
    session = create_session(study, "alice", 4)
    session.record(5, "A")
    with pytest.raises(DuplicateChoice):
        session.record(5, "B")
    assert session.choices[5].choice == "A"


def test_bad_trial_index_rejected(study):
    session = create_session(study, "alice", 5)
    for bad in (-1, 56, 1000):
        with pytest.raises(IndexOutOfRange):
            session.record(bad, "A")


def test_bad_choice_rejected(study):
    session = create_session(study, "alice", 6)
    with pytest.raises(ValueError):
        session.record(0, "C")


# ---------------------------------------------------------------------------
# tally


def forced_session(sid, subjects, a_candidate, choice, study_name="forced"):
    """A complete session with every side assignment and choice pinned."""
    trials = [Trial(s, roi, 2, 8, a_candidate) for s in subjects for roi in ROIS]
    session = RatingSession(sid, "r", 0, study_name, trials)
    for i in range(len(trials)):
        session.record(i, choice, timestamp=float(i))
    return session


def test_all_a_with_candidate_one_up_front(study):
    subjects = [f"s{i:02d}" for i in range(7)]
    counts = tally([forced_session("x", subjects, 1, "A")])
    for roi in ROIS:
        assert counts[roi] == {"candidate_1": 7, "candidate_2": 0, "skip": 0}


def test_choice_b_deblinds_to_the_other_candidate():
    counts = tally([forced_session("x", ["s0"], 2, "B")])
    for roi in ROIS:
        assert counts[roi] == {"candidate_1": 1, "candidate_2": 0, "skip": 0}


def test_skips_kept_apart():
    counts = tally([forced_session("x", ["s0", "s1"], 1, "skip")])
    for roi in ROIS:
        assert counts[roi] == {"candidate_1": 0, "candidate_2": 0, "skip": 2}


def test_accounting_totals_raters_times_subjects(study):
    rng = np.random.default_rng(0)
    sessions = []
    for rater in range(5):
        s = create_session(study, f"rater{rater}", rater)
        for i in range(len(s.trials)):
            s.record(i, ("A", "B", "skip")[rng.integers(3)])
        sessions.append(s)
    counts = tally(sessions)
    for roi in ROIS:
        c = counts[roi]
        assert c["candidate_1"] + c["candidate_2"] + c["skip"] == 5 * 7


def test_tally_ignores_presentation_order():
    subjects = ["s0", "s1", "s2"]
    a = forced_session("x", subjects, 1, "A")
    flipped = RatingSession("y", "r", 0, "forced", list(reversed(a.trials)))
    for i in range(len(flipped.trials)):
        flipped.record(i, "A", timestamp=float(i))
    assert tally([a]) == tally([flipped])


def test_tally_needs_a_completed_session(study):
    with pytest.raises(NoData):
        tally([])
    partial = create_session(study, "alice", 7)
    partial.record(0, "A")
    with pytest.raises(NoData):
        tally([partial])


def test_incomplete_sessions_excluded(study):
    done = forced_session("x", ["s0"], 1, "A")
    partial = create_session(study, "alice", 8)
    partial.record(0, "B")
    counts = tally([done, partial])
    assert sum(sum(c.values()) for c in counts.values()) == 8


# ---------------------------------------------------------------------------
# trial payloads


def decode(b64):
    return Image.open(io.BytesIO(base64.b64decode(b64)))


def test_payload_carries_five_base_and_ten_overlay_slices(study):
    session = create_session(study, "alice", 9)
    payload = trial_payload(study, session, 0)
    assert len(payload["base"]) == 5
    assert set(payload["overlays"]) == {"A", "B"}
    assert all(len(v) == 5 for v in payload["overlays"].values())
    assert payload["offsets"] == [-2, -1, 0, 1, 2]
    assert payload["trial_count"] == 56


def test_overlay_grids_match_base_grids(study):
    session = create_session(study, "alice", 10)
    payload = trial_payload(study, session, 7)
    for i in range(5):
        base = decode(payload["base"][i])
        assert base.mode == "L"
        for tag in ("A", "B"):
            overlay = decode(payload["overlays"][tag][i])
            assert overlay.mode == "RGBA"
            assert overlay.size == base.size


def test_no_deblinding_tokens_in_payload(study):
    session = create_session(study, "alice", 11)
    for index in (0, 13, 55):
        payload = trial_payload(study, session, index)
        assert set(payload) == {"trial", "trial_count", "subject", "roi", "axis",
                                "center_index", "offsets", "recorded", "base",
                                "overlays"}
        assert set(payload["overlays"]) == {"A", "B"}
        # scan everything except the image bytes themselves (base64 text can
        # contain any short letter pair by chance)
        skeleton = {k: v for k, v in payload.items() if k not in ("base", "overlays")}
        text = json.dumps(skeleton)
        for token in ("m1", "m2", "candidate", ".nii", "ref", "alt"):
            assert token not in text


def test_side_flip_swaps_overlay_images():
    # uniform labellings make the mapping visible: candidate 1 is all class
    # 2 (one colour), candidate 2 all class 7 (another)
    study = tiny_manifest(subjects=2, fill=(2, 7))
    session = create_session(study, "alice", 1)
    want_a = {1: CLASS_COLORS[2], 2: CLASS_COLORS[7]}
    seen = set()
    for i, t in enumerate(session.trials):
        payload = trial_payload(study, session, i)
        rgba = np.asarray(decode(payload["overlays"]["A"][2]))
        assert tuple(rgba[4, 4, :3]) == want_a[t.a_candidate]
        assert rgba[4, 4, 3] == 255
        seen.add(t.a_candidate)
    assert seen == {1, 2}


def test_background_is_transparent(study):
    session = create_session(study, "alice", 12)
    payload = trial_payload(study, session, 0)
    rgba = np.asarray(decode(payload["overlays"]["A"][0]))
    assert rgba[0, 0, 3] == 0  # corners are unlabeled in the tiny study


def test_payload_index_out_of_range(study):
    session = create_session(study, "alice", 13)
    for bad in (-1, 56):
        with pytest.raises(IndexOutOfRange):
            trial_payload(study, session, bad)


# ---------------------------------------------------------------------------
# manifest validation


def entries(n=2, extent=EXTENT):
    return [(f"s{i:02d}",) + subject_arrays(i, extent) for i in range(n)]


def test_rejects_duplicate_subject_ids():
    rows = entries(2)
    rows[1] = ("s00",) + rows[1][1:]
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), rows, phantom_windows(EXTENT))


def test_rejects_bad_candidate_tags():
    for tags in (("m1",), ("m1", "m1"), ("m1", "m2", "m3"), ("", "m2")):
        with pytest.raises(ManifestError):
            StudyManifest("t", tags, entries(1), phantom_windows(EXTENT))


def test_rejects_label_volume_shape_mismatch():
    vol, lab1, _ = subject_arrays(0)
    lab2 = np.zeros((8, 8, 8), np.uint8)
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), [("s00", vol, lab1, lab2)],
                      phantom_windows(EXTENT))


def test_rejects_float_labels():
    vol, lab1, lab2 = subject_arrays(0)
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), [("s00", vol, lab1, lab2.astype(np.float32))],
                      phantom_windows(EXTENT))


def test_rejects_missing_window():
    windows = phantom_windows(EXTENT)
    del windows["CER"]
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), entries(1), windows)


def test_rejects_window_without_margin():
    windows = phantom_windows(EXTENT)
    windows["CER"] = {"axis": 2, "range": [1, 5]}
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), entries(1), windows)
    windows["CER"] = {"axis": 2, "range": [5, 14]}
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), entries(1), windows)


def test_rejects_inverted_or_malformed_windows():
    for bad in ({"axis": 2, "range": [9, 4]},
                {"axis": "diagonal", "range": [4, 9]},
                {"range": [4, 9]},
                {"axis": 2}):
        windows = phantom_windows(EXTENT)
        windows["EVC"] = bad
        with pytest.raises(ManifestError):
            StudyManifest("t", ("m1", "m2"), entries(1), windows)


def test_rejects_empty_study():
    with pytest.raises(ManifestError):
        StudyManifest("t", ("m1", "m2"), [], phantom_windows(EXTENT))


# ---------------------------------------------------------------------------
# storage


def test_store_roundtrip(tmp_path, study):
    store = SessionStore(tmp_path)
    session = store.create(create_session(study, "alice", 0))
    store.record(session.session_id, 3, "A", slices_viewed=(0, 1), final_opacity=0.7)
    store.record(session.session_id, 0, "skip")

    assert (tmp_path / f"{session.session_id}.jsonl").exists()
    assert (tmp_path / f"{session.session_id}.json").exists()

    reloaded = SessionStore(tmp_path).get(session.session_id)
    assert reloaded.to_dict() == session.to_dict()
    assert reloaded.choices[3].slices_viewed == (0, 1)
    assert reloaded.choices[3].final_opacity == 0.7


def test_store_recovers_from_log_alone(tmp_path, study):
    store = SessionStore(tmp_path)
    session = store.create(create_session(study, "bob", 1))
    store.record(session.session_id, 2, "B")
    (tmp_path / f"{session.session_id}.json").unlink()  # lost snapshot

    reloaded = SessionStore(tmp_path).get(session.session_id)
    assert reloaded.choices[2].choice == "B"
    assert reloaded.to_dict() == session.to_dict()


def test_create_is_idempotent_for_identical_content(tmp_path, study):
    store = SessionStore(tmp_path)
    first = store.create(create_session(study, "alice", 0))
    store.record(first.session_id, 1, "A")
    again = store.create(create_session(study, "alice", 0))
    assert again is first
    assert again.choices[1].choice == "A"
    log = (tmp_path / f"{first.session_id}.jsonl").read_text().splitlines()
    assert sum(1 for line in log if json.loads(line)["event"] == "created") == 1


def test_create_rejects_id_collision_with_different_content(tmp_path, study):
    store = SessionStore(tmp_path)
    session = store.create(create_session(study, "alice", 0))
    clone = RatingSession(session.session_id, "alice", 0, study.name,
                          list(reversed(session.trials)))
    with pytest.raises(ManifestError):
        store.create(clone)


def test_store_unknown_session(tmp_path):
    store = SessionStore(tmp_path)
    with pytest.raises(UnknownSession):
        store.get("deadbeef")
    with pytest.raises(UnknownSession):
        store.record("deadbeef", 0, "A")


def test_store_propagates_duplicate(tmp_path, study):
    store = SessionStore(tmp_path)
    session = store.create(create_session(study, "alice", 2))
    store.record(session.session_id, 0, "A")
    with pytest.raises(DuplicateChoice):
        store.record(session.session_id, 0, "B")


# ---------------------------------------------------------------------------
# shipped example study


@pytest.fixture(scope="module")
def phantom_study_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    path = build_phantom_study(out, subjects=2, extent=(24, 24, 24), seed=5)
    return path


def test_phantom_study_loads_clean(phantom_study_dir):
    m = StudyManifest.load(phantom_study_dir)
    assert m.name == "phantom-study"
    assert len(m.subject_ids) == 2
    assert m.candidate_tags == ("reference", "dithered")
    session = create_session(m, "alice", 0)
    assert len(session.trials) == 2 * 8


def test_phantom_study_candidates_differ(phantom_study_dir):
    m = StudyManifest.load(phantom_study_dir)
    sid = m.subject_ids[0]
    ref, alt = m.labels(sid, 1), m.labels(sid, 2)
    assert ref.shape == alt.shape
    diff = (ref != alt).mean()
    assert 0 < diff < 0.2  # dither nudges boundaries, not the bulk


def test_phantom_study_is_deterministic(tmp_path, phantom_study_dir):
    again = build_phantom_study(tmp_path, subjects=2, extent=(24, 24, 24), seed=5)
    assert again.read_text() == phantom_study_dir.read_text()
    name = "subject_000_ref.nii.gz"
    assert (tmp_path / name).read_bytes() == \
        (phantom_study_dir.parent / name).read_bytes()


def test_load_rejects_garbage(tmp_path):
    with pytest.raises(ManifestError):
        StudyManifest.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError):
        StudyManifest.load(bad)
    bad.write_text(json.dumps({"subjects": []}))
    with pytest.raises(ManifestError):
        StudyManifest.load(bad)


def test_load_rejects_missing_volume(tmp_path):
    doc = {"name": "x", "candidates": ["a", "b"],
           "subjects": [{"id": "s0", "volume": "nope.nii",
                         "labels": ["l1.nii", "l2.nii"]}],
           "windows": phantom_windows(EXTENT)}
    path = tmp_path / "study.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        StudyManifest.load(path)
