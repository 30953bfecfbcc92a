"""Self-describing binary checkpoint container (``.gnet``).

Layout: 8-byte magic, little-endian uint32 header length, uint32 CRC-32 of
the header, UTF-8 key=value header lines, then a payload of little-endian
float32 tensors. The header carries the architecture descriptor, a named
tensor index (name; shape; byte offsets) and the payload's own CRC-32, so
any single corrupted byte is detected and the load fails closed.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

from .network import NablaArchitecture
from .params import ParamEntry, ParamStore

MAGIC = b"GNETCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be written or parsed."""


def _arch_lines(arch: NablaArchitecture, seed: int | None) -> list[str]:
    return [
        f"format_version={FORMAT_VERSION}",
        "encoder_widths=" + ",".join(str(w) for w in arch.encoder_widths),
        "decoder_widths=" + ",".join(str(w) for w in arch.decoder_widths),
        f"n_decode_levels={arch.n_decode_levels}",
        f"input_channels={arch.input_channels}",
        f"output_channels={arch.output_channels}",
        f"patch_side={arch.patch_side}",
        f"t_steps={arch.t_steps}",
        f"seed={'' if seed is None else int(seed)}",
    ]


def save_checkpoint(
    store: ParamStore,
    arch: NablaArchitecture,
    path: str | os.PathLike,
    seed: int | None = None,
    include_adam: bool = True,
) -> None:
    """Write store and architecture descriptor; the write is atomic."""
    chunks: list[bytes] = []
    rows: list[str] = []
    offset = 0

    def push(arr: np.ndarray) -> int:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(raw)
        start = offset
        offset += len(raw)
        return start

    for name, entry in store.entries.items():
        if ";" in name or "\n" in name:
            raise CheckpointError(f"parameter name {name!r} not serializable")
        shape = ",".join(str(s) for s in entry.weight.shape)
        offs = [push(entry.weight)]
        if include_adam:
            offs.append(push(entry.adam_m))
            offs.append(push(entry.adam_v))
        rows.append(f"tensor={name};{shape};" + ";".join(str(o) for o in offs))

    payload = b"".join(chunks)
    lines = _arch_lines(arch, seed)
    lines.append(f"step_count={store.step_count}")
    lines.append(f"has_adam={1 if include_adam else 0}")
    lines.append(f"payload_bytes={len(payload)}")
    lines.append(f"payload_crc32={zlib.crc32(payload) & 0xFFFFFFFF}")
    lines.extend(rows)
    header = ("\n".join(lines) + "\n").encode("utf-8")

    blob = (
        MAGIC
        + len(header).to_bytes(4, "little")
        + (zlib.crc32(header) & 0xFFFFFFFF).to_bytes(4, "little")
        + header
        + payload
    )
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def _parse_header(header: bytes) -> tuple[dict[str, str], list[str]]:
    keys: dict[str, str] = {}
    tensors: list[str] = []
    for line in header.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed header line {line!r}")
        key, value = line.split("=", 1)
        if key == "tensor":
            tensors.append(value)
        else:
            keys[key] = value
    return keys, tensors


def _ints(csv: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in csv.split(",") if v != "")
    except ValueError as exc:
        raise CheckpointError(f"bad integer list {csv!r} in header") from exc


def read_checkpoint_info(path: str | os.PathLike) -> dict:
    """Header metadata only (architecture descriptor, seed, step count)."""
    _, arch, keys = _load(path, weights=False)
    return {
        "architecture": arch,
        "seed": None if keys["seed"] == "" else int(keys["seed"]),
        "step_count": int(keys["step_count"]),
        "has_adam": keys["has_adam"] == "1",
    }


def load_checkpoint(
    path: str | os.PathLike, expect_arch: NablaArchitecture | None = None
) -> tuple[ParamStore, NablaArchitecture]:
    """Read a checkpoint; bit-exact inverse of save_checkpoint.

    Any inconsistency (magic, version, CRC, truncation, index overlap or
    shape mismatch) raises CheckpointError without returning a partial store.
    """
    store, arch, _ = _load(path, weights=True)
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointError(
            f"checkpoint architecture {arch} does not match expected {expect_arch}"
        )
    return store, arch


def _load(path, weights: bool):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    hlen = int.from_bytes(blob[8:12], "little")
    hcrc = int.from_bytes(blob[12:16], "little")
    header = blob[16 : 16 + hlen]
    if len(header) != hlen:
        raise CheckpointError("truncated header")
    if (zlib.crc32(header) & 0xFFFFFFFF) != hcrc:
        raise CheckpointError("header corrupted (CRC mismatch)")
    keys, tensor_rows = _parse_header(header)

    version = keys.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported format version {version!r}")
    required = ("encoder_widths", "decoder_widths", "n_decode_levels", "input_channels",
                "output_channels", "patch_side", "t_steps", "seed", "step_count",
                "has_adam", "payload_bytes", "payload_crc32")
    for key in required:
        if key not in keys:
            raise CheckpointError(f"header missing key {key!r}")

    try:
        arch = NablaArchitecture(
            encoder_widths=_ints(keys["encoder_widths"]),
            decoder_widths=_ints(keys["decoder_widths"]),
            n_decode_levels=int(keys["n_decode_levels"]),
            input_channels=int(keys["input_channels"]),
            output_channels=int(keys["output_channels"]),
            patch_side=int(keys["patch_side"]),
            t_steps=int(keys["t_steps"]),
        )
    except ValueError as exc:
        raise CheckpointError(f"invalid architecture descriptor: {exc}") from exc

    payload = blob[16 + hlen :]
    if len(payload) != int(keys["payload_bytes"]):
        raise CheckpointError(
            f"truncated payload: expected {keys['payload_bytes']} bytes, found {len(payload)}"
        )
    if (zlib.crc32(payload) & 0xFFFFFFFF) != int(keys["payload_crc32"]):
        raise CheckpointError("payload corrupted (CRC mismatch)")
    if not weights:
        return None, arch, keys

    has_adam = keys["has_adam"] == "1"
    store = ParamStore(step_count=int(keys["step_count"]))
    spans: list[tuple[int, int]] = []

    def read_tensor(shape: tuple[int, ...], off: int) -> np.ndarray:
        nbytes = int(np.prod(shape)) * 4
        if off < 0 or off + nbytes > len(payload):
            raise CheckpointError(f"tensor index out of payload bounds (offset {off})")
        spans.append((off, off + nbytes))
        return np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)), offset=off).reshape(
            shape
        ).copy()

    for row in tensor_rows:
        parts = row.split(";")
        expected_parts = 5 if has_adam else 3
        if len(parts) != expected_parts:
            raise CheckpointError(f"malformed tensor row {row!r}")
        name = parts[0]
        shape = _ints(parts[1])
        if any(s < 1 for s in shape):
            raise CheckpointError(f"invalid tensor shape {shape} for {name!r}")
        if name in store.entries:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        w = read_tensor(shape, int(parts[2]))
        if has_adam:
            m = read_tensor(shape, int(parts[3]))
            v = read_tensor(shape, int(parts[4]))
        else:
            m = np.zeros(shape, dtype=np.float32)
            v = np.zeros(shape, dtype=np.float32)
        store.entries[name] = ParamEntry(w, m, v)

    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CheckpointError("tensor index overlaps in payload")
    return store, arch, keys
