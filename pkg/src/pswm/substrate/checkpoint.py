"""Binary checkpoint format.

Layout (little-endian throughout):

    magic   4 bytes  "PSWM"
    version u32
    then per entry:
        name_len u32, name utf-8,
        dtype    u8   (0=f32, 1=f64, 2=complex64, 3=complex128),
        ndim     u32, dims u64 * ndim,
        raw values

Optimizer moments are stored under "<name>.m" / "<name>.v"; the shared
step counter under "optim.step" as an f64 scalar. Entries are written in
sorted-name order so identical state produces identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from .params import ParamStore

MAGIC = b"PSWM"
VERSION = 1

_DTYPE_CODE = {
    torch.float32: 0,
    torch.float64: 1,
    torch.complex64: 2,
    torch.complex128: 3,
}
_CODE_NP = {0: np.float32, 1: np.float64, 2: np.complex64, 3: np.complex128}


def _write_entry(f, name: str, tensor: torch.Tensor) -> None:
    data = tensor.detach().contiguous().cpu().numpy()
    code = _DTYPE_CODE[tensor.dtype]
    raw = data.astype(_CODE_NP[code], copy=False)
    if raw.dtype.byteorder not in ("<", "=", "|"):
        raw = raw.byteswap().newbyteorder()
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", code))
    f.write(struct.pack("<I", raw.ndim))
    for d in raw.shape:
        f.write(struct.pack("<Q", d))
    f.write(raw.tobytes(order="C"))


def save(path: str, store: ParamStore) -> None:
    store.ensure_moments()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        entries: list[tuple[str, torch.Tensor]] = []
        for name in sorted(store.params):
            entries.append((name, store.params[name]))
            entries.append((name + ".m", store.m[name]))
            entries.append((name + ".v", store.v[name]))
        for name in sorted(store.buffers):
            entries.append((name, store.buffers[name]))
        entries.append(("optim.step", torch.tensor(float(store.step), dtype=torch.float64)))
        for name, tensor in entries:
            _write_entry(f, name, tensor)


def read_entries(path: str) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            (code,) = struct.unpack("<B", f.read(1))
            (ndim,) = struct.unpack("<I", f.read(4))
            dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(ndim)]
            np_dtype = np.dtype(_CODE_NP[code]).newbyteorder("<")
            count = 1
            for d in dims:
                count *= d
            raw = np.frombuffer(f.read(count * np_dtype.itemsize), dtype=np_dtype)
            out[name] = torch.from_numpy(raw.astype(_CODE_NP[code]).reshape(dims).copy())
    return out


def load(path: str, store: ParamStore) -> None:
    store.load_values(read_entries(path))
