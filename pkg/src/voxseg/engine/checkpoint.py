"""Single-file binary container for named parameter tensors.

Layout: magic ``VXTC``, u32 version, u64 header length, a JSON header
(tensor index plus free-form metadata), raw little-endian payloads, and a
trailing CRC32 of everything before it.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import BadContainer, ChecksumMismatch

MAGIC = b"VXTC"
VERSION = 1


def pack_tensors(tensors, meta=None):
    """Serialize ``{name: ndarray}`` plus JSON-able ``meta`` to bytes."""
    index = []
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        index.append({
            "name": str(name),
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": index}).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(payloads)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def unpack_tensors(blob):
    """Inverse of :func:`pack_tensors`; returns (tensors, meta)."""
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise BadContainer("not a tensor container (bad magic)")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumMismatch("container checksum mismatch")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise BadContainer(f"unsupported container version {version}")
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadContainer(f"corrupt container header: {exc}") from exc
    payload = blob[16 + hlen:-4]
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise BadContainer(f"payload truncated for tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = np.ascontiguousarray(
            arr.astype(arr.dtype.newbyteorder("="), copy=False))
    return tensors, header.get("meta", {})


def save_tensors(path, tensors, meta=None):
    Path(path).write_bytes(pack_tensors(tensors, meta))


def load_tensors(path):
    return unpack_tensors(Path(path).read_bytes())
