"""
Checkpoint file format

    16-byte header: magic b"PXADCKPT" | version u32 | text length u32
    text:           `key = value` lines (specs, config, tensor index)
    payload:        raw little-endian tensor bytes in declaration order,
                    followed by memory bank blobs

Round-trips are bit-exact.
"""

import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ModelStateError
from .logs import get_logger
from .memory_bank import MemoryBank

log = get_logger("train")

MAGIC = b"PXADCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sII")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


def _module_tensors(name, module):
    for key, tensor in module.state_dict().items():
        # Memory buffers travel as a bank blob
        if key.startswith("memory."):
            continue
        yield f"{name}.{key}", tensor


def write_checkpoint(path, modules, meta):
    """`modules` maps a section name to an nn.Module; `meta` is flat str → str"""
    lines = [f"{key} = {value}" for key, value in meta.items()]
    chunks = []
    offset = 0
    for name, module in modules.items():
        for key, tensor in _module_tensors(name, module):
            dtype = _DTYPES[tensor.dtype]
            data = tensor.detach().cpu().contiguous().numpy().astype(dtype).tobytes()
            shape = "x".join(str(s) for s in tensor.shape) or "scalar"
            lines.append(f"tensor.{key} = {dtype}|{shape}|{offset}|{len(data)}")
            chunks.append(data)
            offset += len(data)
        memory = getattr(module, "memory", None)
        if isinstance(memory, MemoryBank):
            data = memory.to_bytes()
            lines.append(f"blob.{name}.memory = {offset}|{len(data)}")
            chunks.append(data)
            offset += len(data)

    text = ("\n".join(lines) + "\n").encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(text)))
        f.write(text)
        for chunk in chunks:
            f.write(chunk)
    log.info(f"✓ Checkpoint written: {path} ({offset} payload bytes)")
    return path


def read_checkpoint(path):
    """Returns (meta, tensors, blobs)"""
    path = Path(path)
    if not path.exists():
        raise ModelStateError(f"no checkpoint at {path}; train the model first")
    raw = path.read_bytes()
    magic, version, text_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC or version != VERSION:
        raise ModelStateError(f"{path} is not a checkpoint (bad magic or version)")
    start = _HEADER.size
    text = raw[start:start + text_len].decode("utf-8")
    payload = memoryview(raw)[start + text_len:]

    meta, tensors, blobs = {}, {}, {}
    for line in text.splitlines():
        if " = " not in line:
            continue
        key, value = line.split(" = ", 1)
        if key.startswith("tensor."):
            dtype, shape, off, size = value.split("|")
            shape = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            array = np.frombuffer(payload, dtype=dtype, count=int(size) // np.dtype(dtype).itemsize,
                                  offset=int(off)).reshape(shape)
            tensors[key[len("tensor."):]] = torch.from_numpy(array.copy())
        elif key.startswith("blob."):
            off, size = (int(v) for v in value.split("|"))
            blobs[key[len("blob."):]] = bytes(payload[off:off + size])
        else:
            meta[key] = value
    return meta, tensors, blobs


def section_state(tensors, name):
    prefix = f"{name}."
    return {key[len(prefix):]: t for key, t in tensors.items() if key.startswith(prefix)}
