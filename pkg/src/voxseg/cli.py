"""Command-line entry points.

Six verbs cover the whole workflow: ``phantom`` makes labeled datasets,
``train`` fits one regime, ``segment`` runs inference with optional
soft-map export, ``evaluate`` scores a checkpoint, ``sweep`` maps Dice
against training-set size, and ``compare`` trains the standard regime
bundle side by side.  Every verb that writes to a directory also drops a
``run_manifest.json`` with seeds, the config fingerprint and artifact
paths, so runs stay reconstructible.
"""

from pathlib import Path

import click

from .engine import set_backend
from .nifti import read_volume_file, write_label_file
from .pipeline import (
    Checkpoint,
    DatasetManifest,
    REGIMES,
    TrainConfig,
    build_phantom_dataset,
    compare_regimes,
    default_regime_set,
    evaluate_checkpoint,
    segment,
    sweep_training_size,
    train,
    write_run_manifest,
)
from .engine.adam import AdamHyper


@click.group()
@click.option("--backend", type=click.Choice(["cython", "numpy"]),
              default=None, help="Kernel backend (default: autodetect).")
def main(backend):
    """Desk-scale workbench for fully-volumetric brain-MRI segmentation."""
    if backend is not None:
        set_backend(backend)


@main.command()
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Dataset directory to create.")
@click.option("--counts", nargs=3, type=int, default=(5, 1, 2),
              show_default=True, metavar="TRAIN VAL TEST")
@click.option("--extent", nargs=3, type=int, default=(48, 48, 48),
              show_default=True, metavar="X Y Z")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--label-noise", type=float, default=0.0, show_default=True,
              help="Boundary dither probability on the ground truth.")
def phantom(out, counts, extent, seed, label_noise):
    """Generate a labeled phantom dataset with a manifest."""
    manifest = build_phantom_dataset(out, counts=counts, extent=extent,
                                     seed=seed, label_noise=label_noise)
    write_run_manifest(out, "phantom", None,
                       artifacts=[str(out / "manifest.json")],
                       extra={"seed": seed, "counts": list(counts),
                              "extent": list(extent), "label_noise": label_noise})
    click.echo(f"wrote {len(manifest.entries)} volumes under {out}")


def train_options(fn):
    """Options mirroring TrainConfig, shared by train/sweep/compare."""
    opts = [
        click.option("--regime", type=click.Choice(REGIMES),
                     default="fullvolume", show_default=True),
        click.option("--epochs", type=int, default=40, show_default=True),
        click.option("--batch-size", type=int, default=1, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--learning-rate", type=float, default=42e-5,
                     show_default=True),
        click.option("--widths", nargs=3, type=int, default=(32, 96, 192),
                     show_default=True, metavar="L1 L2 L3"),
        click.option("--downsample", "downsample_mode",
                     type=click.Choice(["strided_conv", "max_pool"]),
                     default="strided_conv", show_default=True),
        click.option("--patch-extent", nargs=3, type=int, default=(64, 64, 64),
                     show_default=True, metavar="X Y Z"),
        click.option("--patch-stride", nargs=3, type=int, default=None,
                     metavar="X Y Z", help="Inference overlap stride "
                     "(default: half the patch extent)."),
        click.option("--patches-per-volume", type=int, default=None,
                     help="Training crops per volume per epoch "
                     "(default: enough to cover the volume once)."),
        click.option("--checkpoint-every", type=int, default=1, show_default=True),
        click.option("--keep-last", type=int, default=3, show_default=True),
        click.option("--memory-ceiling", type=float, default=4.5e9,
                     show_default=True, help="Working-set budget in bytes."),
        click.option("--early-stop-dice", type=float, default=None,
                     help="Stop once train-set mean Dice reaches this."),
        click.option("--early-stop-every", type=int, default=10, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def config_from(kw):
    return TrainConfig(
        epochs=kw["epochs"],
        batch_size=kw["batch_size"],
        adam=AdamHyper(learning_rate=kw["learning_rate"]),
        seed=kw["seed"],
        regime=kw["regime"],
        widths=kw["widths"],
        downsample_mode=kw["downsample_mode"],
        patch_extent=kw["patch_extent"],
        patch_stride=kw["patch_stride"] or None,
        patches_per_volume=kw["patches_per_volume"],
        checkpoint_every=kw["checkpoint_every"],
        keep_last=kw["keep_last"],
        memory_ceiling_bytes=int(kw["memory_ceiling"]),
        early_stop_dice=kw["early_stop_dice"],
        early_stop_every=kw["early_stop_every"],
    )


@main.command("train")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path),
              help="Dataset manifest JSON.")
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Run directory for checkpoints and the run manifest.")
@click.option("--resume", type=click.Path(exists=True, path_type=Path),
              default=None, help="Checkpoint to continue from.")
@train_options
def train_cmd(data, out, resume, **kw):
    """Train one regime on a dataset manifest."""
    config = config_from(kw)
    manifest = DatasetManifest.load(data)

    def log(epoch, loss, val_dice):
        tail = "" if val_dice is None else f"  val dice {val_dice:.4f}"
        click.echo(f"epoch {epoch:4d}  loss {loss:.4f}{tail}")

    ckpt = train(manifest, config, out_dir=out, resume=resume, log=log)
    click.echo(f"finished at epoch {ckpt.epoch}; checkpoints in {out}")


@main.command("segment")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--volume", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Label output (.nii or .nii.gz).")
@click.option("--softmap", type=click.Path(path_type=Path), default=None,
              help="Also export class probabilities to this path.")
@click.option("--softmap-mode", type=click.Choice(["4d", "per-class"]),
              default="4d", show_default=True,
              help="One 4D file, or one 3D file per class.")
def segment_cmd(ckpt_path, volume, out, softmap, softmap_mode):
    """Segment one volume with a trained checkpoint."""
    ckpt = Checkpoint.load(ckpt_path)
    vol = read_volume_file(volume)
    out.parent.mkdir(parents=True, exist_ok=True)
    if softmap is not None:
        softmap.parent.mkdir(parents=True, exist_ok=True)
    labels, _, exported = segment(ckpt, vol, softmap_path=softmap,
                                  softmap_mode=softmap_mode)
    write_label_file(out, labels)
    artifacts = [str(out)] + [str(p) for p in exported]
    write_run_manifest(out.parent, "segment", ckpt.config, artifacts=artifacts,
                       extra={"checkpoint": str(ckpt_path), "volume": str(volume)})
    click.echo(f"wrote {out}" + (f" and {len(exported)} soft-map file(s)"
                                 if exported else ""))


@main.command("evaluate")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--split", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Directory for report.csv / report.json.")
@click.option("--hd95/--no-hd95", default=True, show_default=True)
def evaluate_cmd(ckpt_path, data, split, out, hd95):
    """Score a checkpoint against a manifest split."""
    ckpt = Checkpoint.load(ckpt_path)
    manifest = DatasetManifest.load(data)
    report = evaluate_checkpoint(ckpt, manifest, split=split, with_hd95=hd95)
    for c in report.classes:
        agg = report.aggregate(c)
        hd = agg["hd95_mean"]
        click.echo(f"class {c}: dice {agg['dice_mean']:.4f} "
                   f"+- {agg['dice_std']:.4f}  vs {agg['vs_mean']:.4f}"
                   + (f"  hd95 {hd:.2f}mm" if hd is not None else ""))
    click.echo(f"mean dice {report.mean_dice():.4f} over {len(report.subjects)} "
               f"{split} subject(s)")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.json").write_text(report.to_json() + "\n")
        write_run_manifest(out, "evaluate", ckpt.config,
                           artifacts=[str(out / "report.csv"),
                                      str(out / "report.json")],
                           extra={"split": split, "checkpoint": str(ckpt_path)})


@main.command("sweep")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--sizes", required=True, type=int, multiple=True,
              help="Training-set sizes; repeat the flag per size.")
@click.option("--repeats-small", type=int, default=5, show_default=True,
              help="Disjoint repeats at the two smallest sizes.")
@click.option("--hd95/--no-hd95", default=False, show_default=True)
@train_options
def sweep_cmd(data, out, sizes, repeats_small, hd95, **kw):
    """Dice as a function of training-set size."""
    config = config_from(kw)
    manifest = DatasetManifest.load(data)

    def log(size, rep, score):
        click.echo(f"size {size:4d} rep {rep}  dice {score:.4f}")

    report = sweep_training_size(manifest, list(sizes), config,
                                 repeats_small=repeats_small, out_dir=out,
                                 with_hd95=hd95, log=log)
    for row in report["rows"]:
        click.echo(f"size {row['size']:4d} x{row['repeats']}  "
                   f"mean dice {row['mean_dice']:.4f}")
    click.echo(f"report in {out}")


@main.command("compare")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--hd95/--no-hd95", default=True, show_default=True)
@train_options
def compare_cmd(data, out, hd95, **kw):
    """Train and score the standard regime bundle on identical data."""
    base = config_from(kw)
    manifest = DatasetManifest.load(data)

    def log(name, mean_dice):
        click.echo(f"{name:20s} mean dice {mean_dice:.4f}")

    compare_regimes(manifest, default_regime_set(base), out_dir=out,
                    with_hd95=hd95, log=log)
    click.echo(f"reports in {out}")


if __name__ == "__main__":
    main()
