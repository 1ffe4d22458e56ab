from dataclasses import dataclass
from typing import Tuple

import numpy as np

from models.validation import ValidationError


# dtype 名称 -> (容器中的类型码, 小端 numpy dtype)
DTYPES = {
    'float32': (0, np.dtype('<f4')),
    'int64': (1, np.dtype('<i8')),
}
DTYPE_BY_CODE = {code: name for name, (code, _) in DTYPES.items()}


@dataclass(frozen=True)
class TensorRecord:
    """KMTF 容器中的一条记录：名称、类型、形状和行优先小端字节。"""
    name: str
    dtype: str
    shape: Tuple[int, ...]
    payload: bytes

    def __post_init__(self):
        if not self.name:
            raise ValidationError("record name must be non-empty")
        if self.dtype not in DTYPES:
            raise ValidationError(f"record {self.name!r}: unsupported dtype {self.dtype!r}")
        shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in shape):
            raise ValidationError(f"record {self.name!r}: negative dimension in {shape}")
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'payload', bytes(self.payload))
        expected = self.element_count * DTYPES[self.dtype][1].itemsize
        if len(self.payload) != expected:
            raise ValidationError(
                f"record {self.name!r}: payload has {len(self.payload)} bytes, expected {expected}")

    @property
    def element_count(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @classmethod
    def from_array(cls, name: str, array) -> 'TensorRecord':
        """float 数组存为 float32，整数数组存为 int64。"""
        arr = np.asarray(array)
        dtype = 'int64' if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else 'float32'
        arr = np.ascontiguousarray(arr, dtype=DTYPES[dtype][1])
        return cls(name=name, dtype=dtype, shape=arr.shape, payload=arr.tobytes(order='C'))

    def to_array(self) -> np.ndarray:
        arr = np.frombuffer(self.payload, dtype=DTYPES[self.dtype][1]).reshape(self.shape)
        return arr.astype(DTYPES[self.dtype][1].newbyteorder('='), copy=True)
