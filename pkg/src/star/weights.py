"""Versioned weight containers.

Both the float and the quantized container share one layout::

    magic (8 bytes) | header struct | manifest length (u32) | manifest text
    | tensor payloads in manifest order

The header records format version, feature count, hidden size, layer
count, the two head sizes, and the init seed.  The manifest is UTF-8
text, one line per tensor::

    name kind dim0xdim1 crc32 [scale zero_point]

with kind ``f32`` (row-major little-endian float32) or ``i8`` (int8 plus
its quantization scale and zero point).  CRCs are verified on load.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import WeightsFormatError
from .gru import GruConfig, GruNetwork, init_params

MAGIC_F32 = b"STARWGT\x00"
MAGIC_QUANT = b"STARQNT\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IIIIIIQ")  # version, feature, hidden, layers, act, pres, seed


@dataclass(frozen=True)
class _Entry:
    name: str
    kind: str
    shape: tuple
    crc: int
    scale: float | None = None
    zero_point: int | None = None

    def line(self) -> str:
        dims = "x".join(str(d) for d in self.shape)
        base = f"{self.name} {self.kind} {dims} {self.crc:08x}"
        if self.kind == "i8":
            return f"{base} {self.scale!r} {self.zero_point}"
        return base


def _parse_line(line: str) -> _Entry:
    parts = line.split()
    if len(parts) not in (4, 6):
        raise WeightsFormatError(f"bad manifest line: {line!r}")
    name, kind, dims, crc = parts[:4]
    shape = tuple(int(d) for d in dims.split("x"))
    scale = zero_point = None
    if kind == "i8":
        if len(parts) != 6:
            raise WeightsFormatError(f"i8 entry missing scale/zero_point: {line!r}")
        scale = float(parts[4])
        zero_point = int(parts[5])
    elif kind != "f32":
        raise WeightsFormatError(f"unknown tensor kind {kind!r}")
    return _Entry(name, kind, shape, int(crc, 16), scale, zero_point)


def _tensor_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype == np.int8:
        return np.ascontiguousarray(arr).tobytes()
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _write(path, magic: bytes, header_fields, entries_payloads) -> None:
    manifest_lines = []
    payloads = []
    for entry, payload in entries_payloads:
        manifest_lines.append(entry.line())
        payloads.append(payload)
    manifest = ("\n".join(manifest_lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(FORMAT_VERSION, *header_fields))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for payload in payloads:
            fh.write(payload)


def _read(path, expected_magic: bytes):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != expected_magic:
            raise WeightsFormatError(
                f"{path}: bad magic {magic!r}, expected {expected_magic!r}"
            )
        header = _HEADER.unpack(fh.read(_HEADER.size))
        if header[0] != FORMAT_VERSION:
            raise WeightsFormatError(f"{path}: unsupported format version {header[0]}")
        (manifest_len,) = struct.unpack("<I", fh.read(4))
        manifest = fh.read(manifest_len).decode("utf-8")
        entries = [_parse_line(line) for line in manifest.splitlines() if line]
        tensors = {}
        for entry in entries:
            count = int(np.prod(entry.shape, dtype=np.int64)) if entry.shape else 1
            itemsize = 1 if entry.kind == "i8" else 4
            raw = fh.read(count * itemsize)
            if len(raw) != count * itemsize:
                raise WeightsFormatError(f"{path}: truncated payload for {entry.name}")
            if zlib.crc32(raw) != entry.crc:
                raise WeightsFormatError(f"{path}: checksum mismatch for {entry.name}")
            dtype = np.int8 if entry.kind == "i8" else np.dtype("<f4")
            tensors[entry.name] = (
                np.frombuffer(raw, dtype=dtype).reshape(entry.shape).copy(),
                entry,
            )
    return header, entries, tensors


def peek_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(8)


def save_network(path, net: GruNetwork) -> None:
    entries_payloads = []
    for name, tensor in net.tensors().items():
        payload = _tensor_bytes(tensor)
        entry = _Entry(name, "f32", tensor.shape, zlib.crc32(payload))
        entries_payloads.append((entry, payload))
    header = (
        net.feature_count,
        net.hidden,
        len(net.layers),
        net.w_activity.shape[0],
        net.w_presence.shape[0],
        net.seed,
    )
    _write(path, MAGIC_F32, header, entries_payloads)


def load_network(path) -> GruNetwork:
    header, entries, tensors = _read(path, MAGIC_F32)
    _, feature, hidden, layers, act, pres, seed = header
    config = GruConfig(
        feature_count=feature,
        hidden=hidden,
        layers=layers,
        activity_classes=act,
        presence_classes=pres,
    )
    skeleton = init_params(config, seed=int(seed), dtype=np.float32)
    wanted = skeleton.tensors()
    if set(wanted) != set(tensors):
        raise WeightsFormatError(f"{path}: tensor set does not match header layout")
    loaded = {}
    for name, ref in wanted.items():
        arr, _entry = tensors[name]
        if arr.shape != ref.shape:
            raise WeightsFormatError(
                f"{path}: tensor {name} has shape {arr.shape}, expected {ref.shape}"
            )
        loaded[name] = arr
    net = skeleton.with_tensors(loaded)
    return GruNetwork(
        layers=net.layers,
        w_activity=net.w_activity,
        b_activity=net.b_activity,
        w_presence=net.w_presence,
        b_presence=net.b_presence,
        feature_count=feature,
        hidden=hidden,
        seed=int(seed),
        version=0,
    )


def manifest_text(path) -> str:
    """The stored manifest (names, kinds, shapes, checksums) as text."""
    magic = peek_magic(path)
    expected = MAGIC_F32 if magic == MAGIC_F32 else MAGIC_QUANT
    _, entries, _ = _read(path, expected)
    return "\n".join(e.line() for e in entries)


def save_quant_network(path, qnet) -> None:
    """Persist a QuantGruNetwork (import-free of quant to avoid a cycle)."""
    entries_payloads = []
    for name, item in qnet.stored_tensors().items():
        if hasattr(item, "values"):  # QuantTensor
            payload = item.values.tobytes()
            entry = _Entry(
                name,
                "i8",
                item.values.shape,
                zlib.crc32(payload),
                scale=float(item.scale),
                zero_point=int(item.zero_point),
            )
        else:
            payload = _tensor_bytes(item)
            entry = _Entry(name, "f32", np.asarray(item).shape, zlib.crc32(payload))
        entries_payloads.append((entry, payload))
    header = (
        qnet.feature_count,
        qnet.hidden,
        len(qnet.layers),
        qnet.w_activity.values.shape[0],
        qnet.w_presence.values.shape[0],
        qnet.seed,
    )
    _write(path, MAGIC_QUANT, header, entries_payloads)


def load_quant_network(path):
    from .quant import QuantGruNetwork

    header, entries, tensors = _read(path, MAGIC_QUANT)
    _, feature, hidden, layers, act, pres, seed = header
    return QuantGruNetwork.from_stored(
        {name: (arr, entry.scale, entry.zero_point) for name, (arr, entry) in tensors.items()},
        feature_count=feature,
        hidden=hidden,
        layer_count=layers,
        seed=int(seed),
    )
