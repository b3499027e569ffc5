"""Reader and writer for the NPY v1.0/v2.0 container (float32/float64 only)."""

from __future__ import annotations

import ast
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"\x93NUMPY"
_SUPPORTED = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
# spare room numpy leaves after the header dict so the leading axis can grow in place
_GROWTH_AXIS_MAX_DIGITS = 21


class NpyFormatError(ValueError):
    """Base class for malformed NPY files."""


class BadMagicError(NpyFormatError):
    pass


class UnsupportedVersionError(NpyFormatError):
    pass


class MalformedHeaderError(NpyFormatError):
    pass


class UnsupportedDtypeError(NpyFormatError):
    pass


class TruncatedPayloadError(NpyFormatError):
    pass


@dataclass
class NpyArray:
    descr: str
    shape: tuple[int, ...]
    fortran_order: bool
    data: np.ndarray

    @property
    def dtype(self) -> str:
        return self.descr[1:]


@dataclass(frozen=True)
class NpyHeader:
    version: tuple[int, int]
    descr: str
    shape: tuple[int, ...]
    fortran_order: bool
    data_offset: int


def _parse_header(buf: bytes, where: str) -> NpyHeader:
    if len(buf) < 10 or buf[:6] != MAGIC:
        raise BadMagicError(f"{where}: not an NPY file (magic {buf[:6]!r})")
    major, minor = buf[6], buf[7]
    if (major, minor) == (1, 0):
        (hlen,) = struct.unpack("<H", buf[8:10])
        start = 10
    elif (major, minor) == (2, 0):
        if len(buf) < 12:
            raise MalformedHeaderError(f"{where}: header length field truncated")
        (hlen,) = struct.unpack("<I", buf[8:12])
        start = 12
    else:
        raise UnsupportedVersionError(f"{where}: NPY version {major}.{minor} is not supported")
    raw = buf[start:start + hlen]
    if len(raw) != hlen:
        raise MalformedHeaderError(f"{where}: header declares {hlen} bytes, file has {len(raw)}")
    try:
        header = ast.literal_eval(raw.decode("latin1").strip())
    except (SyntaxError, ValueError) as exc:
        raise MalformedHeaderError(f"{where}: cannot parse header dictionary: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeaderError(f"{where}: header must hold exactly descr, fortran_order, shape")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise MalformedHeaderError(f"{where}: bad shape {shape!r}")
    if not isinstance(fortran, bool):
        raise MalformedHeaderError(f"{where}: fortran_order must be a bool")
    if descr not in _SUPPORTED:
        raise UnsupportedDtypeError(f"{where}: dtype {descr!r} is not supported (need <f4 or <f8)")
    return NpyHeader((major, minor), descr, shape, fortran, start + hlen)


def read_npy_header(path) -> NpyHeader:
    """Parse only the header (no payload read)."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) >= 12 and head[:6] == MAGIC:
            if head[6] == 1:
                total = 10 + struct.unpack("<H", head[8:10])[0]
            else:
                total = 12 + struct.unpack("<I", head[8:12])[0]
            head += fh.read(max(0, total - len(head)))
    return _parse_header(head, str(path))


def parse_npy(buf: bytes, where: str = "<bytes>") -> NpyArray:
    hdr = _parse_header(buf, where)
    dtype = _SUPPORTED[hdr.descr]
    count = int(np.prod(hdr.shape, dtype=np.int64))
    need = count * dtype.itemsize
    payload = buf[hdr.data_offset:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"{where}: payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise MalformedHeaderError(f"{where}: {len(payload) - need} trailing bytes after payload")
    flat = np.frombuffer(payload, dtype=dtype, count=count)
    order = "F" if hdr.fortran_order else "C"
    arr = np.asarray(flat.reshape(hdr.shape, order=order), order="C")
    return NpyArray(hdr.descr, hdr.shape, hdr.fortran_order, arr)


def read_npy(path) -> NpyArray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_npy(buf, str(path))


def encode_npy(array) -> bytes:
    """Serialise as NPY v1.0, little-endian, C order, header padded to 64 bytes."""
    arr = np.asarray(array)
    if arr.dtype.kind != "f" or arr.dtype.itemsize not in (4, 8):
        raise UnsupportedDtypeError(f"cannot write dtype {arr.dtype} (need float32 or float64)")
    descr = "<f4" if arr.dtype.itemsize == 4 else "<f8"
    arr = np.asarray(arr, dtype=_SUPPORTED[descr], order="C")
    shape = tuple(int(n) for n in arr.shape)
    text = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (descr, shape)
    if shape:
        text += " " * (_GROWTH_AXIS_MAX_DIGITS - len(repr(shape[0])))
    pad = 64 - (len(MAGIC) + 4 + len(text) + 1) % 64
    text = text + " " * (pad % 64) + "\n"
    header = text.encode("latin1")
    if len(header) > 0xFFFF:
        raise MalformedHeaderError("header too long for NPY v1.0")
    return MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header + arr.tobytes()


def write_npy(array, path) -> None:
    data = encode_npy(array)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
