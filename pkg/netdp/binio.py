'''Little-endian, length-prefixed binary codec for netdp artifacts.

Every artifact starts with a 4-byte magic and a u32 format version. Payload
fields are fixed-width little-endian scalars, length-prefixed numpy arrays
(u64 element count followed by the raw elements) and length-prefixed UTF-8
strings (u32 byte count followed by the bytes). The writers never emit
anything that depends on time or platform, so writing the same data twice
yields byte-identical files.
'''
import struct
from typing import BinaryIO, Iterable, List

import numpy as np

from .errors import FormatError

_U32 = struct.Struct('<I')
_U64 = struct.Struct('<Q')
_F64 = struct.Struct('<d')


def write_header(fh: BinaryIO, magic: bytes, version: int) -> None:
    if len(magic) != 4:
        raise ValueError(f"magic must be 4 bytes, got {magic!r}")
    fh.write(magic)
    fh.write(_U32.pack(version))


def read_header(fh: BinaryIO, magic: bytes, supported_versions: Iterable[int]) -> int:
    """Reads and checks the magic and version, returning the version found.

    Raises:
        FormatError: If the magic differs or the version is not supported.
    """
    found = fh.read(4)
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}")
    version = read_u32(fh)
    if version not in tuple(supported_versions):
        raise FormatError(f"unsupported format version {version} for {magic!r}")
    return version


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated payload: wanted {n} bytes, got {len(data)}")
    return data


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(_U32.pack(value))


def read_u32(fh: BinaryIO) -> int:
    return _U32.unpack(_read_exact(fh, 4))[0]


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(_U64.pack(value))


def read_u64(fh: BinaryIO) -> int:
    return _U64.unpack(_read_exact(fh, 8))[0]


def write_f64(fh: BinaryIO, value: float) -> None:
    fh.write(_F64.pack(value))


def read_f64(fh: BinaryIO) -> float:
    return _F64.unpack(_read_exact(fh, 8))[0]


def write_array(fh: BinaryIO, values: np.ndarray, dtype: str) -> None:
    """Writes a 1-D or flattened array as u64 count + little-endian elements.

    Args:
        dtype: numpy dtype string with explicit byte order, e.g. '<u8', '<f4'.
    """
    flat = np.ascontiguousarray(values, dtype=np.dtype(dtype)).reshape(-1)
    write_u64(fh, flat.size)
    fh.write(flat.tobytes())


def read_array(fh: BinaryIO, dtype: str) -> np.ndarray:
    dt = np.dtype(dtype)
    count = read_u64(fh)
    data = _read_exact(fh, count * dt.itemsize)
    # Native-order copy so callers get ordinary writable arrays.
    return np.frombuffer(data, dtype=dt).astype(dt.newbyteorder('='))


def write_strings(fh: BinaryIO, strings: List[str]) -> None:
    write_u64(fh, len(strings))
    for s in strings:
        encoded = s.encode('utf-8')
        write_u32(fh, len(encoded))
        fh.write(encoded)


def read_strings(fh: BinaryIO) -> List[str]:
    count = read_u64(fh)
    out = []
    for _ in range(count):
        n = read_u32(fh)
        out.append(_read_exact(fh, n).decode('utf-8'))
    return out
