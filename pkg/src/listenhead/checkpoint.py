"""Single-file binary checkpoint container.

Layout: 4 magic bytes `LHG1`, a little-endian u32 format version, a section
table, then the section payloads back to back. Sections are `meta`
(canonical JSON: config, epoch, RNG state), `params`, `buffers`, and `opt`
(each a length-prefixed dict of float64 arrays, names sorted). Everything
is written in a canonical order so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "FORMAT_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"LHG1"
FORMAT_VERSION = 1
_SECTIONS = ("meta", "params", "buffers", "opt")


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or wrong-version checkpoint files."""


def _pack_arrays(arrays: dict) -> bytes:
    chunks = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        # no ascontiguousarray here: it would promote 0-d arrays to 1-d,
        # and tobytes(order="C") copies into C order regardless of layout
        arr = np.asarray(arrays[name], dtype=np.float64)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        if arr.ndim:
            chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def _unpack_arrays(buf: bytes) -> dict:
    out = {}
    off = 0
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        if off + nlen > len(buf):
            raise CheckpointError("truncated checkpoint file (array name)")
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off) if ndim else ()
        off += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        end = off + 8 * n
        if end > len(buf):
            raise CheckpointError(f"truncated checkpoint file (array {name!r} data)")
        out[name] = np.frombuffer(buf[off:end], dtype="<f8").reshape(shape).copy()
        off = end
    if off != len(buf):
        raise CheckpointError("trailing bytes after array section")
    return out


def save_checkpoint(ckpt, path) -> None:
    """Serialize a trainer Checkpoint; repeated saves are byte-identical."""
    meta = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(ckpt.config),
        "epoch": int(ckpt.epoch),
        "rng": ckpt.rng_state,
    }
    payloads = {
        "meta": json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8"),
        "params": _pack_arrays(ckpt.params),
        "buffers": _pack_arrays(ckpt.buffers),
        "opt": _pack_arrays(ckpt.opt_state),
    }
    table = [struct.pack("<I", len(_SECTIONS))]
    offset = 0
    for name in _SECTIONS:
        nb = name.encode("utf-8")
        table.append(struct.pack("<H", len(nb)) + nb + struct.pack("<QQ", offset, len(payloads[name])))
        offset += len(payloads[name])
    blob = (
        MAGIC
        + struct.pack("<I", FORMAT_VERSION)
        + b"".join(table)
        + b"".join(payloads[name] for name in _SECTIONS)
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Read a checkpoint file back into a trainer Checkpoint."""
    from .trainer import Checkpoint, TrainConfig

    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported; this build reads version {FORMAT_VERSION}"
        )
    try:
        off = 8
        (n_sections,) = struct.unpack_from("<I", blob, off)
        off += 4
        entries = []
        for _ in range(n_sections):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            sec_off, sec_len = struct.unpack_from("<QQ", blob, off)
            off += 16
            entries.append((name, sec_off, sec_len))
    except struct.error:
        raise CheckpointError("truncated checkpoint file (section table)") from None
    payload = blob[off:]
    sections = {}
    for name, sec_off, sec_len in entries:
        if sec_off + sec_len > len(payload):
            raise CheckpointError(f"truncated checkpoint file (section {name!r})")
        sections[name] = payload[sec_off : sec_off + sec_len]
    missing = [name for name in _SECTIONS if name not in sections]
    if missing:
        raise CheckpointError(f"checkpoint is missing sections: {', '.join(missing)}")
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
        params = _unpack_arrays(sections["params"])
        buffers = _unpack_arrays(sections["buffers"])
        opt_state = _unpack_arrays(sections["opt"])
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint payload: {e}") from None
    if meta.get("format_version") != version:
        raise CheckpointError("section metadata disagrees with the header version")
    return Checkpoint(
        config=TrainConfig(**meta["config"]),
        params=params,
        buffers=buffers,
        opt_state=opt_state,
        epoch=int(meta["epoch"]),
        rng_state=meta["rng"],
    )
