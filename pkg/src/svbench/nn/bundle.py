"""Model bundle: spec, scaler, label map and little-endian float32 weights in one file.

Layout::

    magic        8 bytes   b"SVBMODEL"
    version      uint16 LE
    header_len   uint32 LE
    header       JSON, utf-8 (spec, scaler, labels, shapes, n_params, sha256)
    payload      concatenated float32 LE arrays in parameter order
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..preprocess import Scaler
from .network import ModelSpec, Network

MAGIC = b"SVBMODEL"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")


class BundleError(ValueError):
    pass


class ChecksumError(BundleError):
    pass


class VersionError(BundleError):
    pass


@dataclass
class ModelBundle:
    network: Network
    scaler: Scaler
    class_labels: dict[int, str]
    metadata: dict

    @property
    def spec(self) -> ModelSpec:
        return self.network.spec


def save_bundle(path: str | Path, network: Network, scaler: Scaler,
                class_labels: dict[int, str] | None = None, metadata: dict | None = None) -> None:
    arrays = [np.ascontiguousarray(p, dtype="<f4") for p in network.params]
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "spec": network.spec.to_dict(),
        "scaler": scaler.to_dict(),
        "class_labels": {str(k): v for k, v in (class_labels or {}).items()},
        "shapes": [list(a.shape) for a in arrays],
        "n_params": network.n_params,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        fh.write(payload)


def load_bundle(path: str | Path) -> ModelBundle:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise ChecksumError(f"{path}: truncated bundle prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BundleError(f"{path}: not a model bundle (magic {magic!r})")
    if version != VERSION:
        raise VersionError(f"{path}: bundle version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise ChecksumError(f"{path}: truncated header")
    try:
        header = json.loads(data[start : start + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupt header ({exc})") from None
    payload = data[start + header_len :]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")

    spec = ModelSpec.from_dict(header["spec"])
    net = Network.create(spec)
    arrays, offset = [], 0
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape))
        offset += 4 * count
    net.set_params(arrays)
    if net.n_params != header["n_params"]:
        raise BundleError(f"{path}: parameter count {net.n_params} != recorded {header['n_params']}")
    labels = {int(k): v for k, v in header["class_labels"].items()}
    return ModelBundle(net, Scaler.from_dict(header["scaler"]), labels, header.get("metadata", {}))
