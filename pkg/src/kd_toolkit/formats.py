"""Binary file formats.

Array containers (little-endian)::

    magic    4 bytes   b"TLGT" teacher logits, b"DSET" features, b"LBLS" labels
    version  u16
    n        u32       rows
    k        u32       columns (classes for TLGT/LBLS, feature dim for DSET)
    payload            n*k float32 (TLGT, DSET) or n uint32 (LBLS)
    checksum u64       first 8 bytes of blake2b(payload), little-endian

Checkpoints (``b"KDCK"``) hold an architecture descriptor followed by all
parameters as float64; see :func:`save_checkpoint`.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .data import Dataset
from .nn import Layer, NetworkParams, predict

VERSION = 1
_HEADER = struct.Struct("<4sHII")
_FOOTER = struct.Struct("<Q")
_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class CorruptFileError(ValueError):
    """A file is truncated, has a bad header, or fails its checksum."""


def checksum64(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _write_container(path, magic: bytes, n: int, k: int, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, n, k))
        fh.write(payload)
        fh.write(_FOOTER.pack(checksum64(payload)))


def _read_container(path, magic: bytes, itemsize: int, per_row_k: bool = True):
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size or size < _HEADER.size + _FOOTER.size:
            raise CorruptFileError(f"{path}: file too short for header")
        got_magic, version, n, k = _HEADER.unpack(head)
        if got_magic != magic:
            raise CorruptFileError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
        if version != VERSION:
            raise CorruptFileError(f"{path}: unsupported version {version}")
        count = n * k if per_row_k else n
        expected = _HEADER.size + count * itemsize + _FOOTER.size
        # size check comes before the payload is read
        if size != expected:
            raise CorruptFileError(f"{path}: size {size} does not match header ({expected} bytes expected)")
        payload = fh.read(count * itemsize)
        (stored,) = _FOOTER.unpack(fh.read(_FOOTER.size))
    if stored != checksum64(payload):
        raise CorruptFileError(f"{path}: checksum mismatch")
    return n, k, payload


def write_logits(path, logits) -> None:
    arr = np.ascontiguousarray(np.asarray(logits), dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("logits must be a 2-D array")
    _write_container(path, b"TLGT", arr.shape[0], arr.shape[1], arr.tobytes())


def load_teacher_logits(path) -> np.ndarray:
    """Load a TLGT file as a float64 ``(n, k)`` array."""
    n, k, payload = _read_container(path, b"TLGT", 4)
    return np.frombuffer(payload, dtype="<f4").reshape(n, k).astype(np.float64)


def export_teacher_logits(teacher: NetworkParams, dataset: Dataset, path) -> np.ndarray:
    if teacher.dims[0] != dataset.d:
        raise ValueError(f"teacher expects {teacher.dims[0]} features, dataset has {dataset.d}")
    logits = predict(teacher, dataset.features)
    write_logits(path, logits)
    return logits


def save_dataset(dataset: Dataset, directory, name: str | None = None) -> tuple[Path, Path]:
    """Write ``<name>.dset`` and ``<name>.lbls`` (name defaults to the split tag)."""
    directory = Path(directory)
    name = name or dataset.split_tag
    fpath, lpath = directory / f"{name}.dset", directory / f"{name}.lbls"
    x = np.ascontiguousarray(dataset.features, dtype="<f4")
    _write_container(fpath, b"DSET", x.shape[0], x.shape[1], x.tobytes())
    y = np.ascontiguousarray(dataset.labels, dtype="<u4")
    _write_container(lpath, b"LBLS", len(y), dataset.k, y.tobytes())
    return fpath, lpath


def load_dataset(directory, name: str) -> Dataset:
    directory = Path(directory)
    n, d, fpayload = _read_container(directory / f"{name}.dset", b"DSET", 4)
    m, k, lpayload = _read_container(directory / f"{name}.lbls", b"LBLS", 4, per_row_k=False)
    if n != m:
        raise CorruptFileError(f"{directory}/{name}: {n} feature rows but {m} labels")
    x = np.frombuffer(fpayload, dtype="<f4").reshape(n, d).astype(np.float64)
    y = np.frombuffer(lpayload, dtype="<u4").astype(np.int64)
    if len(y) and y.max() >= k:
        raise CorruptFileError(f"{directory}/{name}: label out of range [0, {k})")
    return Dataset(x, y, k, name)


def save_checkpoint(params: NetworkParams, path) -> None:
    """Layout: magic, u16 version, u64 seed, u16 tag length, tag (utf-8),
    u32 layer count, per layer (u32 fan_in, u32 fan_out, u8 activation), then
    every layer's weights (row-major) and bias as float64, then the u64
    checksum of everything after the magic."""
    params.validate()
    tag = params.arch_tag.encode()
    body = bytearray()
    body += struct.pack("<HQH", VERSION, params.seed & (2**64 - 1), len(tag)) + tag
    body += struct.pack("<I", len(params.layers))
    for l in params.layers:
        body += struct.pack("<IIB", l.weights.shape[0], l.weights.shape[1], _ACT_CODES[l.activation])
    for l in params.layers:
        body += np.ascontiguousarray(l.weights, dtype="<f8").tobytes()
        body += np.ascontiguousarray(l.bias, dtype="<f8").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"KDCK" + bytes(body) + _FOOTER.pack(checksum64(bytes(body))))


def load_checkpoint(path) -> NetworkParams:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 + 12 + 4 + _FOOTER.size or data[:4] != b"KDCK":
        raise CorruptFileError(f"{path}: not a KDCK checkpoint")
    body = data[4:-_FOOTER.size]
    (stored,) = _FOOTER.unpack_from(data, len(data) - _FOOTER.size)
    if stored != checksum64(body):
        raise CorruptFileError(f"{path}: checksum mismatch")
    try:
        version, seed, tag_len = struct.unpack_from("<HQH", body, 0)
        if version != VERSION:
            raise CorruptFileError(f"{path}: unsupported version {version}")
        off = 12
        tag = body[off:off + tag_len].decode()
        off += tag_len
        (n_layers,) = struct.unpack_from("<I", body, off)
        off += 4
        shapes = []
        for _ in range(n_layers):
            fi, fo, act = struct.unpack_from("<IIB", body, off)
            off += 9
            shapes.append((fi, fo, _ACT_NAMES[act]))
        need = sum(fi * fo + fo for fi, fo, _ in shapes) * 8
        if len(body) - off != need:
            raise CorruptFileError(f"{path}: parameter block has wrong size")
        layers = []
        for fi, fo, act in shapes:
            w = np.frombuffer(body, dtype="<f8", count=fi * fo, offset=off).reshape(fi, fo).astype(np.float64)
            off += fi * fo * 8
            b = np.frombuffer(body, dtype="<f8", count=fo, offset=off).astype(np.float64)
            off += fo * 8
            layers.append(Layer(w, b, act))
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{path}: malformed checkpoint ({exc})") from exc
    params = NetworkParams(layers, seed, tag)
    params.validate()
    return params
