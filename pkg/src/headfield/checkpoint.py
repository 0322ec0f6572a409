"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u64 header length,
a UTF-8 JSON header, then the raw array payload. The header carries
arbitrary run metadata plus an ordered array manifest (name, dtype, shape),
so load(save(x)) returns x bit for bit. All multi-byte values, including
the arrays themselves, are stored little-endian.
"""

import json
import struct
import numpy as np

MAGIC = b"HEADFLD\x00"
VERSION = 1


def save_checkpoint(path, meta, arrays):
    """Write ``meta`` (JSON-serializable dict) and named arrays to ``path``.

    ``arrays`` is a mapping name -> ndarray; insertion order is preserved.
    """
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.dtype.newbyteorder("<")
        manifest.append({"name": name, "dtype": le.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(le, copy=False).tobytes())
    header = json.dumps({"meta": meta, "arrays": manifest},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, ordered dict of arrays).

    Raises ValueError on a bad magic or an unsupported version.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValueError(f"{path}: checkpoint version {version} "
                             f"unsupported (expected {VERSION})")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dt = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            raw = fh.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated payload at {entry['name']}")
            arr = np.frombuffer(raw, dtype=dt).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return header["meta"], arrays
