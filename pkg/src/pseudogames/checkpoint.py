"""Flat-array checkpoints: a small self-describing binary format.

Layout: magic, a length-prefixed JSON header carrying the array shape and a
hash of the architecture descriptor, then raw little-endian float64 bytes.
Loading verifies the descriptor hash so a checkpoint cannot silently attach
to the wrong parameterization.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .game import SpecificationError

MAGIC = b"PGCK\x01"


def descriptor_hash(descriptor: dict) -> str:
    blob = json.dumps(descriptor, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_params(path, vec, descriptor: dict):
    vec = np.ascontiguousarray(vec, dtype="<f8")
    header = json.dumps(
        {"arch_hash": descriptor_hash(descriptor), "shape": list(vec.shape)},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(vec.tobytes())


def load_params(path, descriptor: dict | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise SpecificationError(f"{path}: not a parameter checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype="<f8").copy()
    if descriptor is not None and header["arch_hash"] != descriptor_hash(descriptor):
        raise SpecificationError(
            f"{path}: checkpoint was written for a different architecture"
        )
    return data.reshape(header["shape"])
