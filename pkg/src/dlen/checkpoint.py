"""Binary checkpoint format.

Layout::

    DLEN1\\n
    <name>\\tf32\\t<shape ints, space separated>\\t<offset>\\t<length>\\n   (one per parameter)
    \\n
    <raw little-endian float32 payloads, concatenated>

Offsets are relative to the first payload byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = b"DLEN1\n"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray]) -> bytes:
    lines, blobs, offset = [], [], 0
    for name, arr in params.items():
        if any(c in name for c in " \t\n"):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        data = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        shape = " ".join(str(int(d)) for d in np.shape(arr))
        lines.append(f"{name}\tf32\t{shape}\t{offset}\t{len(data)}\n")
        blobs.append(data)
        offset += len(data)
    header = MAGIC + "".join(lines).encode("utf-8") + b"\n"
    return header + b"".join(blobs)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if not buf.startswith(MAGIC):
        raise CheckpointError("bad magic; not a DLEN1 checkpoint")
    end = buf.find(b"\n\n", len(MAGIC) - 1)
    if end < 0:
        raise CheckpointError("manifest not terminated by a blank line")
    manifest = buf[len(MAGIC):end + 1].decode("utf-8")
    payload = memoryview(buf)[end + 2:]
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(manifest.splitlines(), start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5 or parts[1] != "f32":
            raise CheckpointError(f"manifest line {lineno} malformed: {line!r}")
        name, _, shape_s, off_s, len_s = parts
        shape = tuple(int(s) for s in shape_s.split()) if shape_s else ()
        off, length = int(off_s), int(len_s)
        if length != 4 * int(np.prod(shape, dtype=np.int64)) or off + length > len(payload):
            raise CheckpointError(f"manifest line {lineno}: bad extent for {name}")
        arr = np.frombuffer(payload[off:off + length], dtype=_LE_F32).reshape(shape)
        out[name] = arr.astype(np.float32)
    return out


def save(path, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
