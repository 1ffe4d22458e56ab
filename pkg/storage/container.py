"""
KMTF 张量容器

文件布局（全部小端）：
    magic "KMTF" | version u32 | record count u32
    每条记录: name length u32 | name (UTF-8) | dtype code u8 | ndim u32 | dims u64×ndim | payload
"""
import os
import struct
from pathlib import Path
from typing import Iterable, List, Union

from models.tensor_record import TensorRecord, DTYPES, DTYPE_BY_CODE
from models.validation import ValidationError

MAGIC = b"KMTF"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")
_U64 = struct.Struct("<Q")


class ContainerError(ValidationError):
    """KMTF 容器读写错误"""
    pass


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class UnknownDtypeError(ContainerError):
    pass


class DuplicateRecordError(ContainerError):
    pass


def encode_records(records: Iterable[TensorRecord]) -> bytes:
    records = list(records)
    seen = set()
    for r in records:
        if r.name in seen:
            raise DuplicateRecordError(f"duplicate record name {r.name!r}")
        seen.add(r.name)

    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(records))]
    for r in records:
        name = r.name.encode('utf-8')
        parts.append(_U32.pack(len(name)))
        parts.append(name)
        parts.append(_U8.pack(DTYPES[r.dtype][0]))
        parts.append(_U32.pack(len(r.shape)))
        parts.extend(_U64.pack(dim) for dim in r.shape)
        parts.append(r.payload)
    return b"".join(parts)


class _Reader:
    """按偏移顺序读取字节，越界即视为截断。"""

    def __init__(self, data: bytes, source: str):
        self.data = data
        self.ofs = 0
        self.source = source

    def read(self, n: int) -> bytes:
        chunk = self.data[self.ofs:self.ofs + n]
        if len(chunk) != n:
            raise TruncatedPayloadError(f"{self.source}: truncated at byte {self.ofs}, need {n} more bytes")
        self.ofs += n
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.read(fmt.size))


def decode_records(data: bytes, source: str = "<bytes>") -> List[TensorRecord]:
    if data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    reader = _Reader(data, source)
    _, version, count = reader.unpack(_HEADER)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{source}: unsupported format version {version}")

    records = []
    for _ in range(count):
        (name_len,) = reader.unpack(_U32)
        name = reader.read(name_len).decode('utf-8')
        (code,) = reader.unpack(_U8)
        if code not in DTYPE_BY_CODE:
            raise UnknownDtypeError(f"{source}: record {name!r} has unknown dtype code {code}")
        dtype = DTYPE_BY_CODE[code]
        (ndim,) = reader.unpack(_U32)
        shape = tuple(reader.unpack(_U64)[0] for _ in range(ndim))
        n_elem = 1
        for dim in shape:
            n_elem *= dim
        payload = reader.read(n_elem * DTYPES[dtype][1].itemsize)
        records.append(TensorRecord(name=name, dtype=dtype, shape=shape, payload=payload))

    if reader.ofs != len(data):
        raise ContainerError(f"{source}: {len(data) - reader.ofs} trailing bytes after last record")
    return records


def write_tensor_container(records: Iterable[TensorRecord], path: Union[str, Path]) -> None:
    """
    写 KMTF 容器文件。

    相同输入产生逐字节相同的文件。

    Args:
        records: 记录列表，名称必须唯一
        path: 目标文件路径

    Raises:
        DuplicateRecordError: 记录名重复
        OSError: 路径不可写
    """
    data = encode_records(records)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, 'wb') as f:
        f.write(data)
    os.replace(tmp, path)


def read_tensor_container(path: Union[str, Path]) -> List[TensorRecord]:
    """读 KMTF 容器文件，write_tensor_container 的逆操作。"""
    with open(path, 'rb') as f:
        data = f.read()
    return decode_records(data, source=str(path))


def records_to_dict(records: Iterable[TensorRecord]):
    return {r.name: r.to_array() for r in records}
