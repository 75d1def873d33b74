"""One-shot generator for the NIfTI golden fixtures in this directory.

The headers are assembled with struct.pack at the byte offsets published in
the NIfTI-1 standard header table (nifti1.h), deliberately *not* using the
package's own writer, so the fixtures exercise the parser from an
independent encoding path.  Run from this directory:

    python3 make_goldens.py
"""

import gzip
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def build_header(order, dims, datatype, bitpix, spacing=(1.0, 1.0, 1.0),
                 slope=1.0, inter=0.0, vox_offset=352.0):
    """348-byte NIfTI-1 header; ``order`` is '<' or '>'."""
    hdr = bytearray(348)
    struct.pack_into(order + "i", hdr, 0, 348)                  # sizeof_hdr
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into(order + "8h", hdr, 40, *dim)               # dim[8]
    struct.pack_into(order + "h", hdr, 70, datatype)            # datatype
    struct.pack_into(order + "h", hdr, 72, bitpix)              # bitpix
    pixdim = [1.0] + list(spacing) + [0.0] * (7 - len(spacing))
    struct.pack_into(order + "8f", hdr, 76, *pixdim)            # pixdim[8]
    struct.pack_into(order + "f", hdr, 108, vox_offset)         # vox_offset
    struct.pack_into(order + "f", hdr, 112, slope)              # scl_slope
    struct.pack_into(order + "f", hdr, 116, inter)              # scl_inter
    struct.pack_into("B", hdr, 123, 2)                          # xyzt_units: mm
    struct.pack_into("4s", hdr, 344, b"n+1\x00")                # magic
    return bytes(hdr)


def emit(name, blob):
    (HERE / name).write_bytes(blob)
    print(f"wrote {name} ({len(blob)} bytes)")


def main():
    # 2x2x2 float32 with values 0..7 in file order (x fastest)
    vals = np.arange(8, dtype="<f4")
    blob = build_header("<", (2, 2, 2), 16, 32) + b"\x00" * 4 + vals.tobytes()
    emit("golden_2x2x2_f32.nii", blob)

    # byte-swapped twin: identical logical content, big-endian encoding
    blob_be = build_header(">", (2, 2, 2), 16, 32) + b"\x00" * 4 + vals.astype(">f4").tobytes()
    emit("golden_2x2x2_f32_bigendian.nii", blob_be)

    # gzipped copy of the little-endian file
    buf = gzip.compress(blob, mtime=0)
    emit("golden_2x2x2_f32.nii.gz", buf)

    # 3x3x3 uint8 labels 0..7 tiled, anisotropic spacing
    labels = (np.arange(27, dtype=np.uint8) % 8)
    blob = build_header("<", (3, 3, 3), 2, 8, spacing=(1.0, 1.25, 2.5)) \
        + b"\x00" * 4 + labels.tobytes()
    emit("golden_3x3x3_u8_labels.nii", blob)

    # int16 with intensity scaling: stored k, decoded 2k - 1
    stored = np.arange(8, dtype="<i2")
    blob = build_header("<", (2, 2, 2), 4, 16, slope=2.0, inter=-1.0) \
        + b"\x00" * 4 + stored.tobytes()
    emit("golden_2x2x2_i16_scaled.nii", blob)


if __name__ == "__main__":
    main()
