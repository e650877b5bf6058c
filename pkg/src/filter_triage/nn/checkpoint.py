"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"FTRG"
    version u32      currently 1
    header  u32 length + UTF-8 JSON: architecture descriptor
            {"arch": str, "input_shape": [c,h,w], "seed": int,
             "dtype": "float32"|"float64", "layers": [layer spec dicts]}
    count   u32      number of records
    record  u32 name length + name bytes
            u8  dtype code (0 = float32, 1 = float64)
            u32 ndim, then ndim * u64 dims
            raw array bytes, C order

Records hold every parameter, every batchnorm running statistic and any
caller-supplied metadata arrays, in that order.  A round trip is bit-exact,
so save(load(save(n))) == save(n).
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..errors import FormatError
from . import functional as F
from .layers import BatchNorm, LayerSpec
from .network import Network

MAGIC = b"FTRG"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _write_record(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr)
    code = _DTYPE_CODES[np.dtype(data.dtype)]
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", code))
    buf.write(struct.pack("<I", data.ndim))
    for d in data.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(data.astype(data.dtype.newbyteorder("<")).tobytes())


def _read_exact(buf: io.BytesIO, n: int, what: str) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return b


def _read_record(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", _read_exact(buf, 4, "record name length"))
    name = _read_exact(buf, nlen, "record name").decode("utf-8")
    (code,) = struct.unpack("<B", _read_exact(buf, 1, f"dtype of {name}"))
    if code not in _DTYPES:
        raise FormatError(f"record {name}: unknown dtype code {code}")
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4, f"ndim of {name}"))
    shape = tuple(struct.unpack("<Q", _read_exact(buf, 8, f"shape of {name}"))[0]
                  for _ in range(ndim))
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(buf, count * dtype.itemsize, f"data of {name}")
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def checkpoint_save(network: Network, arch: str = "",
                    meta: dict[str, np.ndarray] | None = None) -> bytes:
    """Serialize a network; ``meta`` arrays ride along under "meta." names."""
    for p in network.params():
        F.assert_finite(p.value, f"parameter {p.name}")
    header = {
        "arch": arch,
        "input_shape": list(network.input_shape),
        "seed": network.seed,
        "dtype": network.dtype.name,
        "layers": [s.to_dict() for s in network.specs],
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    records: list[tuple[str, np.ndarray]] = [(p.name, p.value) for p in network.params()]
    records += sorted(network.state_arrays().items())
    for key in sorted(meta or {}):
        records.append((f"meta.{key}", np.asarray(meta[key])))

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(hdr)))
    buf.write(hdr)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    return buf.getvalue()


def checkpoint_load(data: bytes) -> tuple[Network, str, dict[str, np.ndarray]]:
    """Inverse of :func:`checkpoint_save`; returns (network, arch, meta)."""
    buf = io.BytesIO(data)
    if _read_exact(buf, 4, "magic") != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", _read_exact(buf, 4, "header length"))
    try:
        header = json.loads(_read_exact(buf, hlen, "header").decode("utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt architecture descriptor: {e}") from e
    (count,) = struct.unpack("<I", _read_exact(buf, 4, "record count"))
    records = dict(_read_record(buf) for _ in range(count))

    specs = [LayerSpec.from_dict(d) for d in header["layers"]]
    network = Network(specs, tuple(header["input_shape"]), header["seed"],
                      dtype=np.dtype(header["dtype"]))
    for p in network.params():
        if p.name not in records:
            raise FormatError(f"checkpoint missing parameter {p.name}")
        stored = records.pop(p.name)
        if stored.shape != p.value.shape:
            raise FormatError(f"parameter {p.name}: stored shape {stored.shape} "
                              f"!= expected {p.value.shape}")
        p.value = stored.astype(network.dtype)
        p.adam_m = np.zeros_like(p.value)
        p.adam_v = np.zeros_like(p.value)
    for layer in network.layers:
        if isinstance(layer, BatchNorm):
            for attr in ("running_mean", "running_var"):
                key = f"{layer.name}.{attr}"
                if key not in records:
                    raise FormatError(f"checkpoint missing state {key}")
                stored = records.pop(key)
                if stored.shape != getattr(layer, attr).shape:
                    raise FormatError(f"state {key}: stored shape {stored.shape} "
                                      f"!= expected {getattr(layer, attr).shape}")
                setattr(layer, attr, stored.astype(network.dtype))
    meta = {k[len("meta."):]: v for k, v in records.items() if k.startswith("meta.")}
    return network, header.get("arch", ""), meta
