"""NIfTI-1 reading/writing and label-map remapping.

Covers exactly what the workbench needs: single-file .nii (optionally
gzipped), the five datatypes a T1w-plus-labels workflow encounters, endian
auto-detection, and intensity scaling applied at read time.  Orientation
fields (qform/sform) are carried through as opaque provenance — volumes are
used on their native grids, never resampled.
"""

import gzip as _gzip
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    LabelOutOfRange,
    LossyDowncast,
    ShapeMismatch,
    TruncatedData,
    UnmappedLabel,
    UnsupportedDatatype,
)

HEADER_SIZE = 348
SINGLE_MAGIC = b"n+1\x00"
PAIR_MAGIC = b"ni1\x00"

# NIfTI-1 datatype codes we accept (code -> numpy dtype)
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_CODE_FOR_DTYPE = {dt: code for code, dt in DATATYPES.items()}

# the 8-class palette: 7 structures + background
PALETTE = {
    0: "background",
    1: "gray_matter",
    2: "white_matter",
    3: "csf",
    4: "ventricles",
    5: "cerebellum",
    6: "brainstem",
    7: "basal_ganglia",
}
NUM_CLASSES = len(PALETTE)

# every header field we either interpret or carry as provenance
_HDR = np.dtype({
    "names": [
        "sizeof_hdr", "dim_info", "dim", "intent_p1", "intent_p2", "intent_p3",
        "intent_code", "datatype", "bitpix", "slice_start", "pixdim",
        "vox_offset", "scl_slope", "scl_inter", "slice_end", "slice_code",
        "xyzt_units", "cal_max", "cal_min", "slice_duration", "toffset",
        "descrip", "aux_file", "qform_code", "sform_code",
        "quatern_b", "quatern_c", "quatern_d",
        "qoffset_x", "qoffset_y", "qoffset_z",
        "srow_x", "srow_y", "srow_z", "intent_name", "magic",
    ],
    "formats": [
        "<i4", "u1", ("<i2", 8), "<f4", "<f4", "<f4",
        "<i2", "<i2", "<i2", "<i2", ("<f4", 8),
        "<f4", "<f4", "<f4", "<i2", "u1",
        "u1", "<f4", "<f4", "<f4", "<f4",
        "S80", "S24", "<i2", "<i2",
        "<f4", "<f4", "<f4",
        "<f4", "<f4", "<f4",
        ("<f4", 4), ("<f4", 4), ("<f4", 4), "S16", "S4",
    ],
    "offsets": [
        0, 39, 40, 56, 60, 64,
        68, 70, 72, 74, 76,
        108, 112, 116, 120, 122,
        123, 124, 128, 132, 136,
        148, 228, 252, 254,
        256, 260, 264,
        268, 272, 276,
        280, 296, 312, 328, 344,
    ],
    "itemsize": HEADER_SIZE,
})


@dataclass
class NiftiHeader:
    dims: tuple
    datatype_code: int
    voxel_spacing: tuple
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    magic: bytes = SINGLE_MAGIC
    vox_offset: int = 352
    byte_order: str = "little"
    header_size: int = HEADER_SIZE
    # opaque provenance (not interpreted, but preserved on rewrite)
    qform_code: int = 0
    sform_code: int = 0
    quaternion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    srow: tuple = ((0.0,) * 4, (0.0,) * 4, (0.0,) * 4)
    descrip: bytes = b""


@dataclass
class VoxelVolume:
    """A 3D scalar grid; axes ordered (sagittal, coronal, longitudinal)."""
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    header: NiftiHeader = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatch(f"volume must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class LabelMap:
    """Integer grid over the 8-class palette."""
    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    header: NiftiHeader = None
    palette: dict = field(default_factory=lambda: dict(PALETTE))

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ShapeMismatch(f"label map must be 3D, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise LabelOutOfRange(f"labels must be integers, got {self.labels.dtype}")
        if self.labels.size:
            lo, hi = int(self.labels.min()), int(self.labels.max())
            if lo < min(self.palette) or hi > max(self.palette):
                raise LabelOutOfRange(
                    f"labels span [{lo}, {hi}], palette allows "
                    f"[{min(self.palette)}, {max(self.palette)}]")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return self.labels.shape

    def class_mask(self, class_id):
        return self.labels == class_id

    def class_counts(self):
        counts = np.bincount(self.labels.ravel(), minlength=NUM_CLASSES)
        return {cls: int(counts[cls]) for cls in self.palette}


# ---------------------------------------------------------------------------
# reading


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise TruncatedData(f"need {HEADER_SIZE} header bytes, got {len(raw)}")
    rec = np.frombuffer(raw[:HEADER_SIZE], dtype=_HDR)[0]
    byte_order = "little"
    if int(rec["sizeof_hdr"]) != HEADER_SIZE:
        rec = np.frombuffer(raw[:HEADER_SIZE], dtype=_HDR.newbyteorder(">"))[0]
        byte_order = "big"
        if int(rec["sizeof_hdr"]) != HEADER_SIZE:
            raise BadMagic("sizeof_hdr is not 348 in either byte order; not NIfTI-1")
    magic = bytes(rec["magic"]).ljust(4, b"\x00")  # S4 strips trailing NULs
    if magic not in (SINGLE_MAGIC, PAIR_MAGIC):
        raise BadMagic(f"unrecognized magic {magic!r}")
    ndim = int(rec["dim"][0])
    if not 1 <= ndim <= 7:
        raise BadMagic(f"dim[0] = {ndim} outside [1, 7]")
    dims = tuple(int(d) for d in rec["dim"][1:1 + ndim])
    if any(d < 1 for d in dims):
        raise BadMagic(f"non-positive extent in dims {dims}")
    code = int(rec["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {code} not supported")
    spacing = tuple(float(p) for p in rec["pixdim"][1:4])
    header = NiftiHeader(
        dims=dims,
        datatype_code=code,
        voxel_spacing=spacing,
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        magic=magic,
        vox_offset=int(rec["vox_offset"]),
        byte_order=byte_order,
        qform_code=int(rec["qform_code"]),
        sform_code=int(rec["sform_code"]),
        quaternion=tuple(float(rec[k]) for k in
                         ("quatern_b", "quatern_c", "quatern_d",
                          "qoffset_x", "qoffset_y", "qoffset_z")),
        srow=tuple(tuple(float(v) for v in rec[k]) for k in ("srow_x", "srow_y", "srow_z")),
        descrip=bytes(rec["descrip"]).rstrip(b"\x00"),
    )
    return header


def read_volume(raw):
    """Decode a single-file NIfTI-1 byte string into a VoxelVolume."""
    header = _parse_header(raw)
    if header.magic == PAIR_MAGIC:
        raise TruncatedData("paired-file NIfTI (.hdr/.img): voxel data is not in this stream")
    dims = header.dims
    if len(dims) < 3:
        dims = dims + (1,) * (3 - len(dims))
    if len(dims) > 3:
        if any(d != 1 for d in dims[3:]):
            raise UnsupportedDatatype(f"only 3D volumes supported, got dims {header.dims}")
        dims = dims[:3]
    dtype = DATATYPES[header.datatype_code]
    if header.byte_order == "big":
        dtype = dtype.newbyteorder(">")
    count = int(np.prod(dims))
    start = int(header.vox_offset)
    need = start + count * dtype.itemsize
    if len(raw) < need:
        raise TruncatedData(f"header promises {need} bytes, stream has {len(raw)}")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    data = np.asfortranarray(flat.reshape(dims, order="F")).astype(dtype.newbyteorder("="), copy=False)
    data = np.ascontiguousarray(data)
    slope, inter = header.scl_slope, header.scl_inter
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        out_dtype = np.float64 if data.dtype == np.float64 else np.float32
        data = (data.astype(out_dtype) * out_dtype(slope)) + out_dtype(inter)
    spacing = header.voxel_spacing
    if any(s <= 0 for s in spacing):
        spacing = (1.0, 1.0, 1.0)
    return VoxelVolume(data=data, spacing=spacing, header=header)


# ---------------------------------------------------------------------------
# writing


def write_volume(volume, datatype=None, strict=True):
    """Encode a VoxelVolume as single-file NIfTI-1 bytes (little-endian).

    ``datatype`` is a NIfTI code; defaults to the code matching the data's
    dtype.  In strict mode values that do not survive the cast raise
    LossyDowncast.
    """
    data = np.asarray(volume.data)
    if datatype is None:
        code = _CODE_FOR_DTYPE.get(data.dtype.newbyteorder("="))
        if code is None:
            raise UnsupportedDatatype(f"no NIfTI code for dtype {data.dtype}; pass one explicitly")
        datatype = code
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported")
    target = DATATYPES[datatype]
    cast = data.astype(target)
    if strict and not np.array_equal(cast.astype(data.dtype, copy=False), data, equal_nan=True):
        raise LossyDowncast(f"values not representable as {target} (strict mode)")

    rec = np.zeros((), dtype=_HDR)
    rec["sizeof_hdr"] = HEADER_SIZE
    dim = np.ones(8, dtype=np.int16)
    dim[0] = 3
    dim[1:4] = data.shape
    rec["dim"] = dim
    rec["datatype"] = datatype
    rec["bitpix"] = target.itemsize * 8
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = volume.spacing
    rec["pixdim"] = pixdim
    rec["vox_offset"] = 352.0
    rec["scl_slope"] = 1.0
    rec["scl_inter"] = 0.0
    rec["xyzt_units"] = 2  # millimetres
    src = volume.header
    if src is not None:
        rec["qform_code"] = src.qform_code
        rec["sform_code"] = src.sform_code
        for name, val in zip(("quatern_b", "quatern_c", "quatern_d",
                              "qoffset_x", "qoffset_y", "qoffset_z"), src.quaternion):
            rec[name] = val
        for name, row in zip(("srow_x", "srow_y", "srow_z"), src.srow):
            rec[name] = row
        rec["descrip"] = src.descrip[:79]
    rec["magic"] = SINGLE_MAGIC
    return rec.tobytes() + b"\x00" * 4 + cast.tobytes(order="F")


def write_softmap(probmap, spacing=(1.0, 1.0, 1.0)):
    """Encode a (classes, D, H, W) probability map as one 4D NIfTI-1 blob.

    The class axis is stored as the file's 4th dimension so each class reads
    back as one contiguous sub-volume.
    """
    arr = np.asarray(probmap, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeMismatch(f"probability map must be (classes, D, H, W), got {arr.shape}")
    data = np.moveaxis(arr, 0, -1)  # (D, H, W, classes)
    rec = np.zeros((), dtype=_HDR)
    rec["sizeof_hdr"] = HEADER_SIZE
    dim = np.ones(8, dtype=np.int16)
    dim[0] = 4
    dim[1:5] = data.shape
    rec["dim"] = dim
    rec["datatype"] = 16
    rec["bitpix"] = 32
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = spacing
    pixdim[4] = 1.0
    rec["pixdim"] = pixdim
    rec["vox_offset"] = 352.0
    rec["scl_slope"] = 1.0
    rec["xyzt_units"] = 2
    rec["magic"] = SINGLE_MAGIC
    return rec.tobytes() + b"\x00" * 4 + data.astype(np.float32).tobytes(order="F")


def read_softmap(raw):
    """Inverse of :func:`write_softmap`; returns ((classes, D, H, W), spacing)."""
    header = _parse_header(raw)
    if header.magic == PAIR_MAGIC:
        raise TruncatedData("paired-file NIfTI (.hdr/.img): voxel data is not in this stream")
    dims = header.dims
    if len(dims) != 4:
        raise ShapeMismatch(f"expected a 4D probability map, got dims {dims}")
    dtype = DATATYPES[header.datatype_code]
    if header.byte_order == "big":
        dtype = dtype.newbyteorder(">")
    count = int(np.prod(dims))
    start = int(header.vox_offset)
    if len(raw) < start + count * dtype.itemsize:
        raise TruncatedData(f"stream shorter than the {count} voxels promised")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    data = flat.reshape(dims, order="F").astype(np.float32, copy=False)
    spacing = header.voxel_spacing
    if any(s <= 0 for s in spacing):
        spacing = (1.0, 1.0, 1.0)
    return np.ascontiguousarray(np.moveaxis(data, -1, 0)), spacing


# ---------------------------------------------------------------------------
# files


def _maybe_decompress(raw):
    if raw[:2] == b"\x1f\x8b":
        return _gzip.decompress(raw)
    return raw


def read_volume_file(path):
    return read_volume(_maybe_decompress(Path(path).read_bytes()))


def _write_blob(path, blob):
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime so identical volumes produce identical files
        buf = io.BytesIO()
        with _gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as fh:
            fh.write(blob)
        blob = buf.getvalue()
    path.write_bytes(blob)
    return path


def write_volume_file(path, volume, datatype=None, strict=True):
    return _write_blob(path, write_volume(volume, datatype, strict))


def write_softmap_file(path, probmap, spacing=(1.0, 1.0, 1.0)):
    return _write_blob(path, write_softmap(probmap, spacing))


def read_softmap_file(path):
    return read_softmap(_maybe_decompress(Path(path).read_bytes()))


def read_label_file(path):
    """Read a label volume and validate it against the palette."""
    vol = read_volume_file(path)
    labels = vol.data
    if not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int32)
        if not np.array_equal(as_int.astype(labels.dtype), labels):
            raise LabelOutOfRange("label volume contains non-integer values")
        labels = as_int
    return LabelMap(labels=labels, spacing=vol.spacing, header=vol.header)


def write_label_file(path, labelmap):
    vol = VoxelVolume(data=labelmap.labels.astype(np.uint8),
                      spacing=labelmap.spacing, header=labelmap.header)
    return write_volume_file(path, vol, datatype=2)


# ---------------------------------------------------------------------------
# relabelling


class RelabelTable:
    """Maps arbitrary source labels onto the 8-class palette.

    ``default_class`` is either a palette class applied to unmapped sources
    or the string "error" to reject them.
    """

    def __init__(self, mapping, default_class=0):
        self.mapping = {}
        for src, dst in dict(mapping).items():
            src, dst = int(src), int(dst)
            if dst not in PALETTE:
                raise LabelOutOfRange(f"target class {dst} not in palette")
            self.mapping[src] = dst
        if default_class != "error" and int(default_class) not in PALETTE:
            raise LabelOutOfRange(f"default class {default_class} not in palette")
        self.default_class = default_class if default_class == "error" else int(default_class)

    @classmethod
    def from_csv(cls, text, default_class=0):
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0].replace(" ", "") != "source_label,target_class":
            raise ValueError("relabel CSV must start with header 'source_label,target_class'")
        mapping = {}
        for ln in lines[1:]:
            src_s, dst_s = (tok.strip() for tok in ln.split(","))
            src = int(src_s)
            if src in mapping:
                raise ValueError(f"duplicate source label {src} in relabel table")
            mapping[src] = int(dst_s)
        return cls(mapping, default_class)

    @classmethod
    def from_csv_file(cls, path, default_class=0):
        return cls.from_csv(Path(path).read_text(), default_class)

    def to_csv(self):
        lines = ["source_label,target_class"]
        lines += [f"{src},{dst}" for src, dst in sorted(self.mapping.items())]
        return "\n".join(lines) + "\n"


def default_relabel_table():
    """The shipped FreeSurfer-lookup-derived mapping (subcortical volume labels)."""
    text = resources.files("voxseg").joinpath("data/freesurfer_7class.csv").read_text()
    return RelabelTable.from_csv(text)


def relabel(source_labels, table):
    """Apply a RelabelTable to an integer volume; returns a LabelMap."""
    src = source_labels.labels if isinstance(source_labels, LabelMap) else np.asarray(source_labels)
    if not np.issubdtype(src.dtype, np.integer):
        raise LabelOutOfRange(f"source labels must be integers, got {src.dtype}")
    uniques, inverse = np.unique(src, return_inverse=True)
    lut = np.empty(len(uniques), dtype=np.uint8)
    for i, u in enumerate(uniques):
        u = int(u)
        if u in table.mapping:
            lut[i] = table.mapping[u]
        elif table.default_class == "error":
            raise UnmappedLabel(f"source label {u} has no mapping")
        else:
            lut[i] = table.default_class
    out = lut[np.ravel(inverse)].reshape(src.shape)
    spacing = source_labels.spacing if isinstance(source_labels, LabelMap) else (1.0, 1.0, 1.0)
    header = source_labels.header if isinstance(source_labels, LabelMap) else None
    return LabelMap(labels=out, spacing=spacing, header=header)
