"""Persistence: PFM float images, JSON manifests/reports, binary checkpoints.

PFM layout (grayscale only, the interchange format for every dataset image):

    Pf\n
    <width> <height>\n
    -1.0\n            # negative scale token = little-endian samples
    <height rows of width float32 values, bottom row first>

Checkpoint container layout (all integers little-endian):

    bytes 0..3    magic "LGDX"
    bytes 4..7    u32 format version (currently 1)
    bytes 8..11   u32 length of the JSON header
    ...           JSON header (utf-8)
    ...           blob region: raw float32 little-endian arrays

The JSON header carries arbitrary metadata plus a `blobs` table of
(name, shape, offset, dtype) entries; offsets are byte offsets into the blob
region.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

PFM_SCALE_TOKEN = "-1.0"

MANIFEST_SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"LGDX"
CHECKPOINT_VERSION = 1


class PfmError(Exception):
    """Base class for PFM read failures."""


class MalformedPfmHeaderError(PfmError):
    pass


class UnsupportedPfmFormatError(PfmError):
    pass


class TruncatedPfmError(PfmError):
    pass


class SchemaVersionError(Exception):
    """Manifest or checkpoint written by an unknown format version."""


def write_pfm(path, values: np.ndarray) -> None:
    """Write a 2-D float array as grayscale little-endian PFM (bit-exact float32)."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM writer takes 2-D arrays, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n{PFM_SCALE_TOKEN}\n".encode("ascii"))
        f.write(np.flipud(arr).tobytes())


def _read_token_line(f, path) -> str:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise MalformedPfmHeaderError(f"{path}: unterminated header line")
    return line[:-1].decode("ascii", errors="replace")


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM written by `write_pfm` (or any single-channel PFM)."""
    with open(path, "rb") as f:
        tag = _read_token_line(f, path)
        if tag == "PF":
            raise UnsupportedPfmFormatError(f"{path}: color 'PF' images are not supported")
        if tag != "Pf":
            raise MalformedPfmHeaderError(f"{path}: bad magic {tag!r}")
        dims = _read_token_line(f, path).split()
        if len(dims) != 2:
            raise MalformedPfmHeaderError(f"{path}: bad dimensions line {dims!r}")
        try:
            w, h = int(dims[0]), int(dims[1])
        except ValueError as e:
            raise MalformedPfmHeaderError(f"{path}: non-integer dimensions") from e
        if w <= 0 or h <= 0:
            raise MalformedPfmHeaderError(f"{path}: non-positive dimensions {w}x{h}")
        try:
            scale = float(_read_token_line(f, path))
        except ValueError as e:
            raise MalformedPfmHeaderError(f"{path}: bad scale token") from e
        byte_order = "<" if scale < 0 else ">"
        payload = f.read(4 * w * h)
        if len(payload) != 4 * w * h:
            raise TruncatedPfmError(
                f"{path}: expected {4 * w * h} payload bytes, got {len(payload)}"
            )
    arr = np.frombuffer(payload, dtype=f"{byte_order}f4").reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def dumps_canonical(doc: dict) -> str:
    """Canonical JSON text: sorted keys, fixed separators, trailing newline.

    Serialize -> parse -> serialize of any manifest is byte-identical.
    """
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_manifest(path, doc: dict) -> None:
    doc = dict(doc)
    doc["schema_version"] = MANIFEST_SCHEMA_VERSION
    Path(path).write_text(dumps_canonical(doc), encoding="utf-8")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: manifest schema version {version!r}, expected {MANIFEST_SCHEMA_VERSION}"
        )
    return doc


def write_checkpoint(path, header: dict, blobs: dict[str, np.ndarray]) -> None:
    """Write metadata + named float32 arrays in the LGDX container."""
    table = []
    chunks = []
    offset = 0
    for name in sorted(blobs):
        arr = np.asarray(blobs[name], dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "f4"})
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    doc = dict(header)
    doc["blobs"] = table
    header_bytes = dumps_canonical(doc).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for raw in chunks:
            f.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise SchemaVersionError(f"{path}: bad checkpoint magic {magic!r}")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise SchemaVersionError(
                f"{path}: checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
            )
        header = json.loads(f.read(header_len).decode("utf-8"))
        blob_region = f.read()
    blobs = {}
    for entry in header.pop("blobs", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        raw = blob_region[start : start + 4 * count]
        if len(raw) != 4 * count:
            raise SchemaVersionError(f"{path}: blob {entry['name']!r} truncated")
        blobs[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return header, blobs
