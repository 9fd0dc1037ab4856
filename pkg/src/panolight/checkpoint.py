"""Parameter checkpoints and ``key = value`` config files.

Checkpoint layout (all integers little-endian)::

    b"PLCK"  uint32 version  uint32 config_bytes  uint32 n_tensors
    config text (utf-8, ``key = value`` lines)
    per tensor: uint16 name_len, name (utf-8), uint8 ndim, uint32 dims[ndim],
                float32 LE payload, C order

The model config travels inside the checkpoint so a single file is enough
for inference; it is also written next to it as plain text.
"""
import os
import struct

import numpy as np

MAGIC = b"PLCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def parse_config(text):
    """``key = value`` lines; ``#`` starts a comment; blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def format_config(d):
    return "".join(f"{k} = {v}\n" for k, v in d.items())


def read_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def write_config(path, d):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config(d))


def save_checkpoint(path, params, config=None):
    """Write ``params`` (name -> array) as float32 plus an optional config dict."""
    cfg = format_config(config or {}).encode("utf-8")
    names = sorted(params)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<III", VERSION, len(cfg), len(names)))
        f.write(cfg)
        for name in names:
            a = np.ascontiguousarray(params[name], dtype="<f4")
            key = name.encode("utf-8")
            f.write(struct.pack("<H", len(key)) + key)
            f.write(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(params, config)``; params are float32 arrays."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, n_cfg, n_tensors = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    config = parse_config(data[pos:pos + n_cfg].decode("utf-8"))
    pos += n_cfg
    params = {}
    try:
        for _ in range(n_tensors):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
            pos += 1 + 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"{path}: tensor {name!r} truncated at byte {pos}")
            params[name] = np.frombuffer(data, "<f4", count, pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated at byte {pos}") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return params, config
