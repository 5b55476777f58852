"""CMFEAT container and manifest writers/readers.

Implemented from the published format contract so the exporter stays
independent of the workbench package:

    magic "CMF1" | u32 version=1 | u32 K | u32 N | u32 D
    K*N*D float32 little-endian, layer-major then row-major
    u32 CRC32 of the float payload bytes

Manifest: UTF-8 TSV, header ``trial_id<TAB>path``, one row per trial.
"""

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"CMF1"
VERSION = 1


class CmfeatError(Exception):
    pass


def write_cmfeat(path, layers) -> None:
    """Atomically write a (K, N, D) float32 array (temp file + rename)."""
    arr = np.ascontiguousarray(np.asarray(layers, dtype="<f4"))
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise CmfeatError(f"payload must be (K, N, D) with K,N,D >= 1, got {arr.shape}")
    payload = arr.tobytes(order="C")
    blob = (
        MAGIC
        + struct.pack("<IIII", VERSION, *arr.shape)
        + payload
        + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    )
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cmfeat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise CmfeatError(f"{path}: not a CMFEAT file")
    version, k, n, d = struct.unpack("<IIII", blob[4:20])
    if version != VERSION:
        raise CmfeatError(f"{path}: unsupported version {version}")
    if len(blob) != 20 + 4 * k * n * d + 4:
        raise CmfeatError(f"{path}: truncated or oversized payload")
    payload = blob[20:-4]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", blob[-4:])[0]:
        raise CmfeatError(f"{path}: CRC mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(k, n, d).copy()


def read_cmfeat_header(path):
    """(K, N, D) from the header without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(20)
    if len(head) < 20 or head[:4] != MAGIC:
        raise CmfeatError(f"{path}: not a CMFEAT file")
    version, k, n, d = struct.unpack("<IIII", head[4:20])
    if version != VERSION:
        raise CmfeatError(f"{path}: unsupported version {version}")
    return k, n, d


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial_id\tpath\n")
        for trial_id, rel in entries:
            fh.write(f"{trial_id}\t{rel}\n")


def read_manifest(path):
    """List of (trial_id, relative_path)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["trial_id", "path"]:
        raise CmfeatError(f"{path}: manifest must start with 'trial_id<TAB>path'")
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise CmfeatError(f"{path}: malformed manifest row {line!r}")
        entries.append((fields[0], fields[1]))
    return entries
