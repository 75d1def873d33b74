"""End-to-end runs of the six CLI verbs on tiny datasets."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from voxseg.cli import main
from voxseg.engine import backend_name, set_backend
from voxseg.nifti import read_label_file, read_softmap_file

EXTENT = ("16", "16", "16")
WIDTHS = ("2", "4", "6")


@pytest.fixture(autouse=True)
def numpy_backend():
    # CLI training runs stay quick on the GEMM path; restore afterwards
    before = backend_name()
    set_backend("numpy")
    yield
    set_backend(before)


@pytest.fixture()
def runner():
    return CliRunner()


def run(runner, *args):
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture()
def dataset(tmp_path, runner):
    out = tmp_path / "ds"
    run(runner, "phantom", "--out", out, "--counts", 4, 1, 1,
        "--extent", *EXTENT, "--seed", 3)
    return out


@pytest.fixture()
def trained(tmp_path, runner, dataset):
    out = tmp_path / "run"
    run(runner, "train", "--data", dataset / "manifest.json", "--out", out,
        "--epochs", 2, "--widths", *WIDTHS, "--seed", 1)
    ckpts = sorted(out.glob("ckpt_ep*.vxc"))
    assert ckpts
    return out, ckpts[-1]


def test_phantom_writes_dataset_and_run_manifest(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert len(manifest["entries"]) == 6
    run_doc = json.loads((dataset / "run_manifest.json").read_text())
    assert run_doc["verb"] == "phantom"
    assert run_doc["seed"] == 3
    assert any(p.endswith("manifest.json") for p in run_doc["artifacts"])


def test_train_logs_and_checkpoints(tmp_path, runner, dataset):
    out = tmp_path / "run"
    result = run(runner, "train", "--data", dataset / "manifest.json",
                 "--out", out, "--epochs", 2, "--widths", *WIDTHS)
    assert "epoch    1" in result.output and "val dice" in result.output
    doc = json.loads((out / "run_manifest.json").read_text())
    assert doc["verb"] == "train"
    assert doc["config"]["widths"] == [2, 4, 6]
    assert doc["epochs_run"] == 2


def test_train_resume(tmp_path, runner, dataset, trained):
    out, ckpt = trained
    result = run(runner, "train", "--data", dataset / "manifest.json",
                 "--out", out, "--epochs", 3, "--widths", *WIDTHS,
                 "--seed", 1, "--resume", ckpt)
    assert "finished at epoch 3" in result.output


def test_segment_with_4d_softmap(tmp_path, runner, dataset, trained):
    _, ckpt = trained
    vol = dataset / "phantom_005.nii.gz"
    out = tmp_path / "seg" / "labels.nii.gz"
    soft = tmp_path / "seg" / "probs.nii.gz"
    run(runner, "segment", "--checkpoint", ckpt, "--volume", vol,
        "--out", out, "--softmap", soft)
    labels = read_label_file(out)
    assert labels.shape == (16, 16, 16)
    probmap, _ = read_softmap_file(soft)
    assert probmap.shape == (8, 16, 16, 16)
    np.testing.assert_array_equal(np.argmax(probmap, axis=0), labels.labels)
    doc = json.loads((tmp_path / "seg" / "run_manifest.json").read_text())
    assert doc["verb"] == "segment"
    assert str(soft) in doc["artifacts"]


def test_segment_per_class_softmap(tmp_path, runner, dataset, trained):
    _, ckpt = trained
    out = tmp_path / "seg2"
    run(runner, "segment", "--checkpoint", ckpt,
        "--volume", dataset / "phantom_005.nii.gz",
        "--out", out / "labels.nii.gz",
        "--softmap", out / "probs.nii.gz", "--softmap-mode", "per-class")
    class_files = sorted(out.glob("probs_class*.nii.gz"))
    assert len(class_files) == 8


def test_evaluate_reports(tmp_path, runner, dataset, trained):
    _, ckpt = trained
    out = tmp_path / "eval"
    result = run(runner, "evaluate", "--checkpoint", ckpt,
                 "--data", dataset / "manifest.json", "--split", "test",
                 "--out", out, "--no-hd95")
    assert "mean dice" in result.output
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "subject,class,dice,hd95_mm,vs"
    assert len(rows) == 1 + 7  # one test subject x 7 structure classes
    agg = json.loads((out / "report.json").read_text())
    assert set(agg["classes"]) == {str(c) for c in range(1, 8)}


def test_sweep_writes_report(tmp_path, runner, dataset):
    out = tmp_path / "sweep"
    result = run(runner, "sweep", "--data", dataset / "manifest.json",
                 "--out", out, "--sizes", 1, "--sizes", 2,
                 "--repeats-small", 2, "--epochs", 1, "--widths", *WIDTHS)
    assert "mean dice" in result.output
    report = json.loads((out / "sweep_report.json").read_text())
    assert [row["size"] for row in report["rows"]] == [1, 2]
    assert all(row["repeats"] == 2 for row in report["rows"])


def test_compare_emits_four_reports(tmp_path, runner, dataset):
    out = tmp_path / "cmp"
    run(runner, "compare", "--data", dataset / "manifest.json", "--out", out,
        "--epochs", 1, "--widths", *WIDTHS, "--patch-extent", 8, 8, 8,
        "--no-hd95")
    names = {p.name for p in out.glob("report_*.csv")}
    assert names == {"report_slices2d.csv", "report_patches3d.csv",
                     "report_fullvolume-strided.csv",
                     "report_fullvolume-maxpool.csv"}
    doc = json.loads((out / "run_manifest.json").read_text())
    assert doc["verb"] == "compare"


def test_backend_flag(runner, tmp_path):
    run(runner, "--backend", "numpy", "phantom", "--out", tmp_path / "d",
        "--counts", 1, 0, 0, "--extent", *EXTENT)
    assert backend_name() == "numpy"


def test_missing_data_fails(runner, tmp_path):
    result = runner.invoke(main, ["train", "--data", str(tmp_path / "nope.json"),
                                  "--out", str(tmp_path / "o")])
    assert result.exit_code != 0
