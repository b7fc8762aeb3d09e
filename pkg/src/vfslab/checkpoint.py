"""Single-file checkpoint archive.

Layout (all little-endian):

    bytes 0..7    magic b"VFSLCKP1"
    bytes 8..15   uint64 header length N
    bytes 16..16+N  header JSON (utf-8)
    remainder     raw tensor bytes, C-order, concatenated

The header carries the format version, the full model config, an optional
"extra" dict, and an array table: for every state-dict entry its name,
dtype, shape, byte offset into the blob region and byte count. Loading
rebuilds the model from the header config and rejects a mismatched
expected config, a bad magic, or a truncated blob region.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .models import ModelConfig, build_model

MAGIC = b"VFSLCKP1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(model: torch.nn.Module, path: Path | str, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    state = model.state_dict()
    arrays = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        raw = arr.tobytes()
        arrays.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "extra": extra or {},
        "arrays": arrays,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    return path


def _read_header(path: Path) -> tuple[dict, int]:
    with path.open("rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError(f"{path}: truncated header")
    header = json.loads(header_bytes.decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, len(MAGIC) + 8 + header_len


def read_header(path: Path | str) -> dict:
    header, _ = _read_header(Path(path))
    return header


def load_checkpoint(
    path: Path | str, expected_config: Optional[ModelConfig] = None
) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model stored at path. Raises CheckpointError when the
    header's architecture/config differs from expected_config, or when
    the file is damaged; on error no partial model escapes."""
    path = Path(path)
    header, blob_start = _read_header(path)
    cfg = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError(
            f"{path}: checkpoint config {cfg.to_dict()} does not match expected "
            f"{expected_config.to_dict()}"
        )
    data = path.read_bytes()
    state = {}
    for entry in header["arrays"]:
        start = blob_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise CheckpointError(f"{path}: truncated array data for {entry['name']!r}")
        arr = np.frombuffer(data[start:end], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model = build_model(cfg)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: state dict does not fit the declared config: {exc}") from exc
    return model, header
