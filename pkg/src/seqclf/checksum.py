"""64-bit FNV-1a used by the embedding and checkpoint containers."""

import numba
import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@numba.njit(cache=True)
def _fnv1a64(buf):
    h = np.uint64(FNV_OFFSET)
    p = np.uint64(FNV_PRIME)
    for b in buf:
        h ^= np.uint64(b)
        h *= p
    return h


def fnv1a64(data):
    buf = np.frombuffer(bytes(data) if not isinstance(data, (bytes, bytearray, memoryview)) else data, dtype=np.uint8)
    return int(_fnv1a64(buf))
