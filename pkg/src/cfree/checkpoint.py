"""Named parameter stores and the CFREE-CKPT-1 checkpoint format.

A checkpoint is one file: the magic line ``CFREE-CKPT-1``, a u64
little-endian manifest length, a JSON manifest mapping flattened
parameter names to shape/dtype/offset plus a free-form ``meta`` dict,
then the raw little-endian parameter values. Offsets are relative to
the start of the value blob.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore", "CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC"]

MAGIC = b"CFREE-CKPT-1\n"

_DTYPE_CODES = {np.dtype("float64"): "<f8", np.dtype("float32"): "<f4"}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


class ParamStore:
    """Ordered name -> Tensor mapping for one model component."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, p in params.items():
                self[name] = p

    def __setitem__(self, name: str, p: Tensor) -> None:
        if not isinstance(name, str) or not name:
            raise ValueError("parameter names must be non-empty strings")
        if "/" in name:
            raise ValueError(f"parameter name {name!r} may not contain '/'")
        if not isinstance(p, Tensor):
            raise TypeError(f"parameter {name!r} must be a Tensor")
        self._params[name] = p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def keys(self):
        return self._params.keys()

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def n_scalars(self) -> int:
        return sum(p.size for p in self._params.values())

    def copy(self, requires_grad: bool | None = None) -> "ParamStore":
        """Deep copy of values; grad state is not copied."""
        out = ParamStore()
        for name, p in self._params.items():
            rg = p.requires_grad if requires_grad is None else requires_grad
            out[name] = Tensor(p.data.copy(), requires_grad=rg)
        return out

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def checksum(self) -> str:
        """sha256 over names, shapes, and little-endian values."""
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(repr(p.shape).encode())
            h.update(np.ascontiguousarray(p.data).astype(p.data.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    def same_structure(self, other: "ParamStore") -> bool:
        return self.names() == other.names() and all(
            self[n].shape == other[n].shape for n in self.names())


def save_checkpoint(path, stores: dict[str, ParamStore], meta: dict | None = None) -> None:
    entries = {}
    chunks = []
    offset = 0
    for store_name, store in stores.items():
        if "/" in store_name:
            raise ValueError(f"store name {store_name!r} may not contain '/'")
        for pname, p in store.items():
            code = _DTYPE_CODES.get(p.data.dtype)
            if code is None:
                raise CheckpointError(f"unsupported dtype {p.data.dtype} for {pname!r}")
            raw = np.ascontiguousarray(p.data).astype(code).tobytes()
            entries[f"{store_name}/{pname}"] = {
                "shape": list(p.shape),
                "dtype": code,
                "offset": offset,
            }
            chunks.append(raw)
            offset += len(raw)
    manifest = json.dumps({"params": entries, "meta": meta or {}},
                          sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path, requires_grad: bool = False) -> tuple[dict[str, ParamStore], dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint file") from None
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a CFREE-CKPT-1 file")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointError(f"{path}: truncated manifest header")
    (mlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    if len(blob) < pos + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[pos:pos + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON: {exc}") from exc
    data_start = pos + mlen
    stores: dict[str, ParamStore] = {}
    for full_name, info in manifest.get("params", {}).items():
        store_name, _, pname = full_name.partition("/")
        if not pname:
            raise CheckpointError(f"{path}: malformed parameter name {full_name!r}")
        dtype = _CODE_DTYPES.get(info.get("dtype"))
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {info.get('dtype')!r}")
        shape = tuple(info["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        lo = data_start + int(info["offset"])
        if lo + nbytes > len(blob):
            raise CheckpointError(f"{path}: values for {full_name!r} run past end of file")
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=lo).reshape(shape).copy()
        stores.setdefault(store_name, ParamStore())[pname] = Tensor(
            arr, requires_grad=requires_grad)
    return stores, manifest.get("meta", {})
