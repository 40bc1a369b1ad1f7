"""Model checkpoint file.

Layout: 5-byte magic ``FTWN1``, little-endian uint32 header length, UTF-8
JSON header, then one little-endian float32 blob holding every parameter
tensor in the order listed by the header's manifest. The header records the
model config, the feature schema and its hash, optional metrics, and a
SHA-256 checksum of the blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..schema import FeatureSchema
from .model import ForecastConfig

MAGIC = b"FTWN1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def schema_hash(schema: FeatureSchema) -> str:
    doc = json.dumps(schema.to_jsonable(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def save_checkpoint(path: Path, variants: dict, cfg: ForecastConfig,
                    schema: FeatureSchema, metrics: dict | None = None) -> None:
    """variants: {variant_name: {param_name: float64 array}}."""
    manifest = []
    chunks = []
    for vname in sorted(variants):
        params = variants[vname]
        for pname in sorted(params):
            arr = np.ascontiguousarray(params[pname], dtype="<f4")
            manifest.append([vname, pname, list(arr.shape)])
            chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_jsonable(),
        "schema": schema.to_jsonable(),
        "schema_hash": schema_hash(schema),
        "manifest": manifest,
        "metrics": metrics or {},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_checkpoint(path: Path) -> tuple:
    """Returns (variants, config, schema, header)."""
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise CheckpointError("bad magic; not a forecaster checkpoint")
    (hlen,) = struct.unpack("<I", data[5:9])
    try:
        header = json.loads(data[9:9 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')}")
    blob = data[9 + hlen:]
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CheckpointError("blob checksum mismatch")
    variants: dict = {}
    offset = 0
    for vname, pname, shape in header["manifest"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(blob):
            raise CheckpointError("truncated parameter blob")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        variants.setdefault(vname, {})[pname] = arr.astype(np.float64)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after parameter blob")
    cfg = ForecastConfig.from_jsonable(header["config"])
    schema = FeatureSchema.from_jsonable(header["schema"])
    return variants, cfg, schema, header
