"""Binary checkpoint and mask files, plan digests and atomic writes.

Checkpoint (``.ckpt``)::

    b"SIBC" | u32 LE version | u32 LE header length | JSON header
    | d_total float64 LE | sha256 of all preceding bytes (32 bytes)

Mask (``.mask``)::

    b"SIBM" | u32 LE version | u32 LE header length | JSON header
    | ceil(d/8) packed bytes, LSB first, ascending index | sha256 (32 bytes)

Headers are UTF-8 JSON with sorted keys and no whitespace, so equal content
always serializes to equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptionError, FormatError
from .nncore import ParamSpace, WeightVector
from .pruning import PruneMask

CKPT_MAGIC = b"SIBC"
MASK_MAGIC = b"SIBM"
FORMAT_VERSION = 1
DIGEST_LEN = 32
_PREFIX = struct.Struct("<4sII")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path, data: bytes) -> bool:
    """Write via temp file + rename; skip when the file already holds ``data``."""
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return True


def _frame(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = canonical_json(header)
    body = _PREFIX.pack(magic, FORMAT_VERSION, len(head)) + head + payload
    return body + hashlib.sha256(body).digest()


def _unframe(raw: bytes, magic: bytes, what: str):
    if len(raw) < _PREFIX.size + DIGEST_LEN:
        raise FormatError(f"{what} file truncated ({len(raw)} bytes)", len(raw))
    found, version, head_len = _PREFIX.unpack_from(raw, 0)
    if found != magic:
        raise FormatError(f"{what} file has magic {found!r}, expected {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {what} format version {version}", 4)
    head_end = _PREFIX.size + head_len
    if head_end + DIGEST_LEN > len(raw):
        raise FormatError(f"{what} header length {head_len} runs past end of file", 8)
    body, digest = raw[:-DIGEST_LEN], raw[-DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError(f"{what} digest mismatch", len(body))
    try:
        header = json.loads(raw[_PREFIX.size:head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{what} header is not valid JSON: {exc}", _PREFIX.size) from None
    if not isinstance(header, dict):
        raise FormatError(f"{what} header must be a JSON object", _PREFIX.size)
    return header, raw[head_end:-DIGEST_LEN], head_end, digest.hex()


@dataclass(eq=False)
class Checkpoint:
    """Weights at a training iteration plus lineage.

    ``info`` carries the remaining header fields (model spec, role, seeds).
    """

    weights: WeightVector
    iteration: int
    manifest_digest: str
    parent_digest: Optional[str] = None
    info: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {**self.info, "iteration": int(self.iteration),
                "manifest_digest": self.manifest_digest,
                "parent_digest": self.parent_digest,
                "space": self.weights.space.to_dict(),
                "d_total": self.weights.space.d_total}

    def to_bytes(self) -> bytes:
        return _frame(CKPT_MAGIC, self.header(), self.weights.values.astype("<f8").tobytes())

    @property
    def digest(self) -> str:
        return self.to_bytes()[-DIGEST_LEN:].hex()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        header, payload, offset, _ = _unframe(raw, CKPT_MAGIC, "checkpoint")
        try:
            space = ParamSpace.from_dict(header.pop("space"))
            d_total = int(header.pop("d_total"))
            iteration = int(header.pop("iteration"))
            manifest = header.pop("manifest_digest")
            parent = header.pop("parent_digest")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"checkpoint header missing field: {exc}", _PREFIX.size) from None
        if d_total != space.d_total or len(payload) != 8 * d_total:
            raise FormatError(
                f"checkpoint payload holds {len(payload)} bytes, expected {8 * d_total}", offset)
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise FormatError("checkpoint holds non-finite weights", offset + 8 * bad)
        return cls(WeightVector(values, space), iteration, manifest, parent, header)


@dataclass(eq=False)
class MaskFile:
    mask: PruneMask
    strategy: str
    per_sibling_sparsity: float
    parent_digests: list
    info: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {**self.info, "space": self.mask.space.to_dict(),
                "d_prunable": self.mask.d,
                "per_sibling_sparsity": float(self.per_sibling_sparsity),
                "strategy": self.strategy, "parent_digests": list(self.parent_digests)}

    def to_bytes(self) -> bytes:
        return _frame(MASK_MAGIC, self.header(), self.mask.packed())

    @property
    def digest(self) -> str:
        return self.to_bytes()[-DIGEST_LEN:].hex()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "MaskFile":
        header, payload, offset, _ = _unframe(raw, MASK_MAGIC, "mask")
        try:
            space = ParamSpace.from_dict(header.pop("space"))
            d = int(header.pop("d_prunable"))
            s = float(header.pop("per_sibling_sparsity"))
            strategy = str(header.pop("strategy"))
            parents = list(header.pop("parent_digests"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"mask header missing field: {exc}", _PREFIX.size) from None
        if d != space.d_prunable or len(payload) != (d + 7) // 8:
            raise FormatError(f"mask payload holds {len(payload)} bytes for d={d}", offset)
        packed = np.frombuffer(payload, dtype=np.uint8)
        if d % 8 and packed[-1] >> (d % 8):
            raise FormatError("mask payload has bits set past d_prunable", offset + len(payload) - 1)
        return cls(PruneMask.from_packed(packed, space), strategy, s, parents, header)


def write_checkpoint(path, ckpt: Checkpoint) -> str:
    atomic_write(path, ckpt.to_bytes())
    return ckpt.digest


def read_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def write_mask(path, mf: MaskFile) -> str:
    atomic_write(path, mf.to_bytes())
    return mf.digest


def read_mask(path) -> MaskFile:
    return MaskFile.from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    """Trailing digest of a checkpoint or mask file, verified against its body."""
    raw = Path(path).read_bytes()
    if len(raw) < DIGEST_LEN or hashlib.sha256(raw[:-DIGEST_LEN]).digest() != raw[-DIGEST_LEN:]:
        raise CorruptionError(f"{path}: digest mismatch")
    return raw[-DIGEST_LEN:].hex()
