import numpy as np


class ValidationError(Exception):
    """自定义验证错误异常"""
    pass


def as_float_array(values, name: str, ndim: int) -> np.ndarray:
    """
    转换为只读浮点数组并校验维度与有限性。

    float64 输入保持 float64（梯度检查需要），其余一律转为 float32。
    """
    arr = np.asarray(values)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32)
    else:
        arr = arr.copy()
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def as_index_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def arrays_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
