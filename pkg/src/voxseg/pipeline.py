"""Datasets, training loops, inference dispatch, and experiment harnesses.

Three context regimes share one training loop:

``fullvolume``
    one whole volume per optimizer step;
``slices2d``
    three planar models (one per principal axis) trained on rotated volumes
    whose depth-1 kernels keep slices independent, combined at inference by
    view averaging;
``patches3d``
    random sub-cubes at train time, an overlapping grid stitched by
    averaging at inference.

Checkpoints are single-file containers holding parameters, optimizer
moments and run history; resuming is bit-deterministic because each
epoch's shuffle and crop draws come from a (seed, epoch) stream, not a
long-lived generator.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .engine import categorical_cross_entropy
from .engine.adam import AdamHyper, AdamState, adam_step, zero_grads
from .engine.checkpoint import pack_tensors, unpack_tensors
from .errors import (
    ConfigMismatch,
    DataError,
    InsufficientData,
    InvalidConfig,
    PatchLargerThanVolume,
    ShapeIncompatible,
)
from .metrics import dice, evaluate
from .model import ArchitectureConfig, build, predict_labels
from .nifti import (
    NUM_CLASSES,
    LabelMap,
    VoxelVolume,
    read_label_file,
    read_volume_file,
    write_label_file,
    write_softmap_file,
    write_volume_file,
)
from .patchwork import (
    AXES,
    aggregate_views,
    extract_patch,
    patch_model_config,
    plan_patches,
    slice_model_config,
    stitch,
    volume_axis_back,
    volume_axis_first,
)
from .phantom import default_specs, generate_phantom

REGIMES = ("fullvolume", "slices2d", "patches3d")
SPLITS = ("train", "val", "test")
STRUCTURE_CLASSES = tuple(range(1, NUM_CLASSES))


def _derive_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _utcnow():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# dataset manifests


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ManifestEntry:
    volume: str
    labels: str
    split: str
    volume_sha256: str = ""
    labels_sha256: str = ""

    @property
    def subject(self):
        name = Path(self.volume).name
        for suffix in (".nii.gz", ".nii"):
            if name.endswith(suffix):
                return name[: -len(suffix)]
        return name


@dataclass
class DatasetManifest:
    """Paths plus split assignment; the unit every harness below consumes."""
    entries: list
    root: Path = Path(".")

    def __post_init__(self):
        self.root = Path(self.root)
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r} for {e.volume}")
            for p in (e.volume, e.labels):
                if seen.setdefault(p, e.split) != e.split:
                    raise DataError(f"{p} appears in two splits "
                                    f"({seen[p]} and {e.split})")

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def resolve(self, relpath):
        p = Path(relpath)
        return p if p.is_absolute() else self.root / p

    def check_exists(self):
        for e in self.entries:
            for p in (e.volume, e.labels):
                if not self.resolve(p).exists():
                    raise DataError(f"manifest entry missing on disk: {p}")

    def verify_checksums(self):
        for e in self.entries:
            for p, want in ((e.volume, e.volume_sha256), (e.labels, e.labels_sha256)):
                if want and _sha256_file(self.resolve(p)) != want:
                    raise DataError(f"checksum mismatch for {p}")

    def to_dict(self):
        return {"entries": [asdict(e) for e in self.entries]}

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        manifest = cls(entries=[ManifestEntry(**e) for e in doc["entries"]],
                       root=path.parent)
        manifest.check_exists()
        return manifest

    def subset(self, train_entries):
        """A view keeping the given train entries plus all val/test entries."""
        kept = list(train_entries) + [e for e in self.entries if e.split != "train"]
        return DatasetManifest(entries=kept, root=self.root)


def build_phantom_dataset(out_dir, counts=(5, 1, 2), extent=(48, 48, 48),
                          seed=0, **spec_overrides):
    """Generate a labeled phantom dataset on disk and return its manifest.

    ``counts`` is (train, val, test).  Files land in ``out_dir`` with the
    manifest at ``out_dir/manifest.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = sum(counts)
    specs = default_specs(total, extent=extent, seed=seed, **spec_overrides)
    split_of = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    entries = []
    for i, (spec, split) in enumerate(zip(specs, split_of)):
        vol, lab = generate_phantom(spec)
        vpath = out_dir / f"phantom_{i:03d}.nii.gz"
        lpath = out_dir / f"phantom_{i:03d}_labels.nii.gz"
        write_volume_file(vpath, vol)
        write_label_file(lpath, lab)
        entries.append(ManifestEntry(
            volume=vpath.name, labels=lpath.name, split=split,
            volume_sha256=_sha256_file(vpath), labels_sha256=_sha256_file(lpath)))
    manifest = DatasetManifest(entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def _load_split(manifest, name):
    """Volumes and label arrays for one split, loaded up front."""
    vols, labs, subjects = [], [], []
    for e in manifest.split(name):
        try:
            v = read_volume_file(manifest.resolve(e.volume))
            l = read_label_file(manifest.resolve(e.labels))
        except Exception as exc:
            raise DataError(f"cannot load {e.volume}: {exc}") from exc
        vols.append(v.data.astype(np.float32, copy=False))
        labs.append(l.labels)
        subjects.append(e.subject)
    return vols, labs, subjects


# ---------------------------------------------------------------------------
# training configuration


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 1
    adam: AdamHyper = field(default_factory=AdamHyper)
    seed: int = 0
    regime: str = "fullvolume"
    widths: tuple = (32, 96, 192)
    downsample_mode: str = "strided_conv"
    patch_extent: tuple = (64, 64, 64)   # patches3d only
    patch_stride: tuple = None           # inference overlap; None = half extent
    patches_per_volume: int = None       # crops per volume per epoch; None = cover once
    checkpoint_every: int = 1
    keep_last: int = 3
    memory_ceiling_bytes: int = int(4.5e9)
    early_stop_dice: float = None        # stop once train-set mean Dice reaches this
    early_stop_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.regime not in REGIMES:
            raise InvalidConfig(f"unknown regime {self.regime!r}; pick from {REGIMES}")
        if isinstance(self.adam, dict):
            self.adam = AdamHyper(**self.adam)
        self.widths = tuple(int(w) for w in self.widths)
        self.patch_extent = tuple(int(e) for e in self.patch_extent)
        if self.patch_stride is None:
            self.patch_stride = tuple(max(1, e // 2) for e in self.patch_extent)
        else:
            self.patch_stride = tuple(int(s) for s in self.patch_stride)

    def arch(self):
        if self.regime == "slices2d":
            base = slice_model_config(self.widths)
        elif self.regime == "patches3d":
            base = patch_model_config(self.widths)
        else:
            base = ArchitectureConfig(level_channels=self.widths)
        return replace(base, downsample_mode=self.downsample_mode,
                       memory_ceiling_bytes=self.memory_ceiling_bytes)

    def to_dict(self):
        d = asdict(self)
        d["adam"] = asdict(self.adam)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["adam"] = AdamHyper(**d.get("adam", {}))
        for key in ("widths", "patch_extent", "patch_stride"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def fingerprint(self):
        """Digest of everything that shapes the optimization trajectory.

        Cadence, retention and stopping knobs are excluded so a resumed or
        extended run still matches its own checkpoints.
        """
        core = {
            "arch": self.arch().to_json(),
            "adam": asdict(self.adam),
            "seed": self.seed,
            "regime": self.regime,
            "batch_size": self.batch_size,
            "patch_extent": self.patch_extent,
            "patches_per_volume": self.patches_per_volume,
        }
        blob = json.dumps(core, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_parts(config, seed=None):
    """The models a regime trains: one, or one per principal axis."""
    seed = config.seed if seed is None else seed
    arch = config.arch()
    if config.regime == "slices2d":
        return {axis: build(arch, seed=_derive_seed(seed, i))
                for i, axis in enumerate(AXES)}
    return {"model": build(arch, seed=_derive_seed(seed, 0))}


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict          # "part/param" -> ndarray
    opt_moments: dict     # "m/part/param", "v/part/param" -> ndarray
    opt_steps: dict       # part -> int
    epoch: int
    loss_history: list
    val_history: list

    @property
    def fingerprint(self):
        return self.config.fingerprint()

    def save(self, path):
        tensors = {}
        for k, a in self.params.items():
            tensors[f"param/{k}"] = a
        for k, a in self.opt_moments.items():
            tensors[f"adam/{k}"] = a
        meta = {
            "epoch": self.epoch,
            "loss_history": self.loss_history,
            "val_history": self.val_history,
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "opt_steps": self.opt_steps,
        }
        Path(path).write_bytes(pack_tensors(tensors, meta))
        return Path(path)

    @classmethod
    def load(cls, path):
        tensors, meta = unpack_tensors(Path(path).read_bytes())
        params, moments = {}, {}
        for k, a in tensors.items():
            kind, rest = k.split("/", 1)
            (params if kind == "param" else moments)[rest] = a
        return cls(
            config=TrainConfig.from_dict(meta["config"]),
            params=params,
            opt_moments=moments,
            opt_steps={k: int(v) for k, v in meta["opt_steps"].items()},
            epoch=int(meta["epoch"]),
            loss_history=list(meta["loss_history"]),
            val_history=list(meta["val_history"]),
        )

    def build_models(self):
        parts = build_parts(self.config)
        for part, model in parts.items():
            arrays = {name: arr for key, arr in self.params.items()
                      for prefix, name in [key.split("/", 1)] if prefix == part}
            model.load_state_arrays(arrays)
        return parts


def _snapshot(parts, opt, config, epoch, loss_history, val_history):
    params, moments, steps = {}, {}, {}
    for part, model in parts.items():
        for name, t in model.params.items():
            params[f"{part}/{name}"] = t.data.copy()
            moments[f"m/{part}/{name}"] = opt[part].first_moment[name].copy()
            moments[f"v/{part}/{name}"] = opt[part].second_moment[name].copy()
        steps[part] = opt[part].step_count
    return Checkpoint(config=config, params=params, opt_moments=moments,
                      opt_steps=steps, epoch=epoch,
                      loss_history=list(loss_history), val_history=list(val_history))


def _restore(parts, opt, ckpt):
    for part, model in parts.items():
        arrays = {}
        for key, arr in ckpt.params.items():
            p, name = key.split("/", 1)
            if p == part:
                arrays[name] = arr
        model.load_state_arrays(arrays)
        st = opt[part]
        st.step_count = ckpt.opt_steps.get(part, 0)
        for name in model.params:
            st.first_moment[name] = np.array(ckpt.opt_moments[f"m/{part}/{name}"])
            st.second_moment[name] = np.array(ckpt.opt_moments[f"v/{part}/{name}"])


def _prune_checkpoints(out_dir, keep):
    files = sorted(Path(out_dir).glob("ckpt_ep*.vxc"))
    for stale in files[:-keep]:
        stale.unlink()


# ---------------------------------------------------------------------------
# inference


def infer_probmap(parts, config, vol):
    """Per-class probabilities (C, D, H, W) for one volume, regime-aware."""
    data = vol.data if isinstance(vol, VoxelVolume) else np.asarray(vol)
    if config.regime == "slices2d":
        views = []
        for axis, model in parts.items():
            pm = model.forward(volume_axis_first(data, axis)).data
            views.append(volume_axis_back(pm, axis))
        return aggregate_views(views)
    if config.regime == "patches3d":
        model = parts["model"]
        grid = plan_patches(data.shape, config.patch_extent, config.patch_stride)
        maps = [model.forward(extract_patch(data, o, config.patch_extent)).data
                for o in grid.origins]
        return stitch(maps, grid)
    return parts["model"].forward(data).data


def _mean_train_dice(parts, config, vols, labs):
    per_volume = []
    for v, l in zip(vols, labs):
        pred = np.argmax(infer_probmap(parts, config, v), axis=0)
        per_volume.append(np.mean([dice(pred, l, c) for c in STRUCTURE_CLASSES]))
    return float(np.mean(per_volume))


def segment(checkpoint, volume, softmap_path=None, softmap_mode="4d"):
    """Labels plus the soft probability map for one volume.

    ``softmap_path`` exports the probabilities: one 4D file, or (mode
    ``"per-class"``) one 3D float32 file per class next to the given path.
    """
    config = checkpoint.config
    parts = checkpoint.build_models()
    data = volume.data if isinstance(volume, VoxelVolume) else np.asarray(volume)
    spacing = volume.spacing if isinstance(volume, VoxelVolume) else (1.0, 1.0, 1.0)
    try:
        probmap = infer_probmap(parts, config, data)
    except PatchLargerThanVolume as exc:
        raise ShapeIncompatible(
            f"checkpointed patch extent {config.patch_extent} does not fit "
            f"volume {data.shape}") from exc
    labels = predict_labels(probmap, spacing=spacing)
    exported = []
    if softmap_path is not None:
        softmap_path = Path(softmap_path)
        if softmap_mode == "4d":
            exported.append(write_softmap_file(softmap_path, probmap, spacing))
        elif softmap_mode == "per-class":
            stem = softmap_path.name
            for suffix in (".nii.gz", ".nii"):
                if stem.endswith(suffix):
                    stem = stem[: -len(suffix)]
                    break
            for k in range(probmap.shape[0]):
                p = softmap_path.parent / f"{stem}_class{k}.nii.gz"
                exported.append(write_volume_file(p, VoxelVolume(probmap[k], spacing)))
        else:
            raise ValueError(f"unknown softmap mode {softmap_mode!r}")
    return labels, probmap, exported


# ---------------------------------------------------------------------------
# training


def _epoch_samples(config, vols, labs, rng):
    """(input, target) pairs for one epoch, already shuffled."""
    if config.regime == "patches3d":
        samples = []
        for v, l in zip(vols, labs):
            if any(p > e for p, e in zip(config.patch_extent, v.shape)):
                raise ShapeIncompatible(
                    f"patch {config.patch_extent} larger than volume {v.shape}")
            k = config.patches_per_volume or \
                max(1, round(v.size / np.prod(config.patch_extent)))
            for _ in range(k):
                origin = tuple(int(rng.integers(0, e - p + 1))
                               for e, p in zip(v.shape, config.patch_extent))
                samples.append((extract_patch(v, origin, config.patch_extent),
                                extract_patch(l, origin, config.patch_extent)))
        order = rng.permutation(len(samples))
        return [samples[i] for i in order]
    order = rng.permutation(len(vols))
    return [(vols[i], labs[i]) for i in order]


def _step_chunk(parts, opt, config, chunk):
    """One optimizer step over ``chunk`` samples; returns the mean loss."""
    losses = []
    for part, model in parts.items():
        zero_grads(model.params)
    for x, target in chunk:
        for part, model in parts.items():
            if config.regime == "slices2d":
                x_in = volume_axis_first(x, part)
                t_in = volume_axis_first(target, part)
            else:
                x_in, t_in = x, target
            loss = categorical_cross_entropy(model.forward_logits(x_in), t_in)
            loss.backward()
            losses.append(float(loss.data))
    if len(chunk) > 1:
        inv = 1.0 / len(chunk)
        for model in parts.values():
            for p in model.params.values():
                if p.grad is not None:
                    p.grad *= inv
    for part, model in parts.items():
        adam_step(model.params, opt[part], config.adam)
    return float(np.mean(losses))


def train(manifest, config, out_dir=None, resume=None, log=None):
    """Run the configured regime over the manifest's train split.

    Returns the final :class:`Checkpoint`.  With ``out_dir`` set, periodic
    checkpoints (pruned to ``keep_last``) and a run manifest are written.
    ``resume`` accepts a Checkpoint or a path to one; the continued run is
    step-identical to an uninterrupted one.
    """
    vols, labs, _ = _load_split(manifest, "train")
    if not vols:
        raise DataError("manifest has no train entries")
    val_vols, val_labs, _ = _load_split(manifest, "val")

    parts = build_parts(config)
    opt = {part: AdamState.for_params(m.params) for part, m in parts.items()}
    loss_history, val_history = [], []
    start_epoch = 0
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else Checkpoint.load(resume)
        if ckpt.fingerprint != config.fingerprint():
            raise ConfigMismatch(
                "checkpoint was produced by a different configuration "
                f"({ckpt.fingerprint} != {config.fingerprint()})")
        _restore(parts, opt, ckpt)
        start_epoch = ckpt.epoch
        loss_history = list(ckpt.loss_history)
        val_history = list(ckpt.val_history)

    train_shape = (config.patch_extent if config.regime == "patches3d"
                   else vols[0].shape)
    for model in parts.values():
        model.check_memory(train_shape)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    ckpt = None
    for epoch in range(start_epoch + 1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        samples = _epoch_samples(config, vols, labs, rng)
        step_losses = []
        for i in range(0, len(samples), config.batch_size):
            step_losses.append(
                _step_chunk(parts, opt, config, samples[i:i + config.batch_size]))
        loss_history.append(float(np.mean(step_losses)))
        if val_vols:
            val_history.append(_mean_train_dice(parts, config, val_vols, val_labs))
        if log:
            log(epoch, loss_history[-1], val_history[-1] if val_vols else None)

        done = epoch == config.epochs
        if config.early_stop_dice is not None and not done \
                and epoch % config.early_stop_every == 0:
            if _mean_train_dice(parts, config, vols, labs) >= config.early_stop_dice:
                done = True
        if out_dir is not None and (done or epoch % config.checkpoint_every == 0):
            ckpt = _snapshot(parts, opt, config, epoch, loss_history, val_history)
            ckpt.save(out_dir / f"ckpt_ep{epoch:04d}.vxc")
            _prune_checkpoints(out_dir, config.keep_last)
        if done:
            if ckpt is None or ckpt.epoch != epoch:
                ckpt = _snapshot(parts, opt, config, epoch, loss_history, val_history)
            break

    if ckpt is None:  # resume already at/beyond the requested epoch count
        ckpt = _snapshot(parts, opt, config, start_epoch, loss_history, val_history)
    if out_dir is not None:
        write_run_manifest(out_dir, "train", config,
                           artifacts=sorted(str(p) for p in out_dir.glob("ckpt_ep*.vxc")),
                           extra={"epochs_run": ckpt.epoch,
                                  "final_loss": loss_history[-1] if loss_history else None})
    return ckpt


def evaluate_checkpoint(checkpoint, manifest, split="test", classes=STRUCTURE_CLASSES,
                        with_hd95=True):
    """MetricReport for a checkpoint over one split of a manifest."""
    vols, labs, subjects = _load_split(manifest, split)
    if not vols:
        raise DataError(f"manifest has no {split} entries")
    parts = checkpoint.build_models()
    preds = {}
    refs = {}
    for v, l, s in zip(vols, labs, subjects):
        pm = infer_probmap(parts, checkpoint.config, v)
        preds[s] = np.argmax(pm, axis=0).astype(np.uint8)
        refs[s] = l
    return evaluate(preds, refs, classes=classes, with_hd95=with_hd95)


# ---------------------------------------------------------------------------
# experiment harnesses


def sweep_training_size(manifest, sizes, config, repeats_small=5, out_dir=None,
                        eval_split="test", with_hd95=False, log=None):
    """Dice as a function of training-set size.

    The two smallest sizes are repeated ``repeats_small`` times on pairwise
    disjoint subsets and averaged; larger sizes run once.  Returns a report
    dict with one row per size.
    """
    train_entries = manifest.split("train")
    n = len(train_entries)
    sizes = sorted(int(s) for s in sizes)
    if not sizes or sizes[0] < 1:
        raise InsufficientData(f"sizes must be positive, got {sizes}")
    if sizes[-1] > n:
        raise InsufficientData(f"size {sizes[-1]} exceeds the {n} train entries")
    repeated = set(sizes[:2])
    rows = []
    for size in sizes:
        repeats = repeats_small if size in repeated else 1
        if repeats * size > n:
            raise InsufficientData(
                f"{repeats} disjoint subsets of {size} need {repeats * size} "
                f"train entries, manifest has {n}")
        perm = np.random.default_rng([config.seed, size]).permutation(n)
        scores, subset_ids = [], []
        for rep in range(repeats):
            chosen = [train_entries[i] for i in perm[rep * size:(rep + 1) * size]]
            subset_ids.append(sorted(e.subject for e in chosen))
            cell_cfg = replace(config, seed=_derive_seed(config.seed, size, rep))
            ckpt = train(manifest.subset(chosen), cell_cfg)
            report = evaluate_checkpoint(ckpt, manifest, eval_split,
                                         with_hd95=with_hd95)
            scores.append(report.mean_dice())
            if log:
                log(size, rep, scores[-1])
        rows.append({"size": size, "repeats": repeats,
                     "scores": scores, "mean_dice": float(np.mean(scores)),
                     "subsets": subset_ids})
    report = {"sizes": sizes, "rows": rows, "eval_split": eval_split,
              "seed": config.seed}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "sweep_report.json"
        path.write_text(json.dumps(report, indent=2) + "\n")
        write_run_manifest(out_dir, "sweep", config, artifacts=[str(path)])
    return report


def default_regime_set(base):
    """The standard four-way comparison derived from one base config."""
    return {
        "slices2d": replace(base, regime="slices2d"),
        "patches3d": replace(base, regime="patches3d"),
        "fullvolume-strided": replace(base, regime="fullvolume",
                                      downsample_mode="strided_conv"),
        "fullvolume-maxpool": replace(base, regime="fullvolume",
                                      downsample_mode="max_pool"),
    }


def compare_regimes(manifest, configs, out_dir=None, with_hd95=True, log=None):
    """Train each configured regime on identical data and report side by side.

    Refuses to run unless every config shares the seed, epoch budget and
    batch size — otherwise the comparison would not be like for like.
    """
    if isinstance(configs, (list, tuple)):
        named = {}
        for cfg in configs:
            name = cfg.regime
            if cfg.regime == "fullvolume":
                name += "-maxpool" if cfg.downsample_mode == "max_pool" else "-strided"
            if name in named:
                raise ConfigMismatch(f"two configs map to the same regime name {name!r}")
            named[name] = cfg
    else:
        named = dict(configs)
    if len(named) < 2:
        raise ConfigMismatch("need at least two regimes to compare")
    ref = next(iter(named.values()))
    for name, cfg in named.items():
        for fld in ("seed", "epochs", "batch_size"):
            if getattr(cfg, fld) != getattr(ref, fld):
                raise ConfigMismatch(
                    f"regime {name!r} differs on {fld}: "
                    f"{getattr(cfg, fld)} != {getattr(ref, fld)}")
    bundle = {}
    for name, cfg in named.items():
        ckpt = train(manifest, cfg)
        bundle[name] = evaluate_checkpoint(ckpt, manifest, "test", with_hd95=with_hd95)
        if log:
            log(name, bundle[name].mean_dice())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, report in bundle.items():
            p = out_dir / f"report_{name}.csv"
            p.write_text(report.to_csv())
            paths.append(str(p))
        write_run_manifest(out_dir, "compare", ref, artifacts=paths,
                           extra={"regimes": sorted(named)})
    return bundle


def write_run_manifest(out_dir, verb, config, artifacts=(), extra=None):
    """Machine-readable record of a run: seeds, config digest, outputs.

    ``config`` may be None for verbs that have no training configuration.
    """
    doc = {"verb": verb, "created": _utcnow(), "artifacts": list(artifacts)}
    if config is not None:
        doc.update(seed=config.seed, config=config.to_dict(),
                   fingerprint=config.fingerprint())
    if extra:
        doc.update(extra)
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
