"""Bit-exact persistence: tensor files, triplet datasets, checkpoints.

Tensor files carry the magic "GNRF", a dtype code, rank, little-endian u32
dims, and a little-endian row-major payload. Images are stored as 8-bit PNG
(quantized); depth and masks stay float32 so metric tolerances survive a
round-trip. Manifests are UTF-8 JSON, written atomically.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_VERSION = "gnerf-dataset-v1"
TENSOR_MAGIC = b"GNRF"
CHECKPOINT_MAGIC = b"GNRFCKPT"

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class DatasetIOError(Exception):
    """Raised for corrupt or inconsistent on-disk data."""


def write_tensor(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    code = _DTYPE_TO_CODE.get(array.dtype)
    if code is None:
        raise DatasetIOError(f"unsupported dtype {array.dtype} for {path}")
    header = TENSOR_MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = array.astype(_DTYPE_CODES[code], copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 6 or data[:4] != TENSOR_MAGIC:
        raise DatasetIOError(f"{path}: bad magic bytes")
    code, rank = struct.unpack("<BB", data[4:6])
    if code not in _DTYPE_CODES:
        raise DatasetIOError(f"{path}: unknown dtype code {code}")
    dims_end = 6 + 4 * rank
    if len(data) < dims_end:
        raise DatasetIOError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", data[6:dims_end])
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = data[dims_end:]
    if len(payload) != expected:
        raise DatasetIOError(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_image_png(path, image: np.ndarray) -> None:
    """Quantize a float image in [0, 1] to 8-bit PNG."""
    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized).save(path)


def load_image_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _pose_to_list(pose) -> list[float]:
    return [float(v) for v in pose.to_matrix().reshape(-1)]


def _pose_from_list(values) -> "CameraPose":
    from .cameras import CameraPose

    return CameraPose.from_matrix(np.asarray(values, dtype=np.float64).reshape(4, 4))


def prepare_dataset_dir(out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def save_triplet(out_dir, index: int, triplet) -> dict:
    """Write one triplet's files and return its manifest record."""
    out_dir = Path(out_dir)
    names = {
        "img_f": f"img_f_{index:06d}.png",
        "img_s": f"img_s_{index:06d}.png",
        "depth": f"depth_{index:06d}.gnrf",
        "mask": f"mask_{index:06d}.gnrf",
    }
    save_image_png(out_dir / names["img_f"], triplet.image_f)
    save_image_png(out_dir / names["img_s"], triplet.image_s)
    write_tensor(out_dir / names["depth"], triplet.depth.astype(np.float32))
    write_tensor(out_dir / names["mask"], triplet.mask.astype(np.float32))
    return {
        "index": index,
        **names,
        "pose_f": _pose_to_list(triplet.pose_f),
        "pose_s": _pose_to_list(triplet.pose_s),
        "pose_d": _pose_to_list(triplet.pose_d),
        "w_prime": [float(v) for v in triplet.w_prime],
    }


def load_triplet(dataset_dir, record: dict):
    """Rebuild a Triplet from its manifest record."""
    from .oracle import Triplet

    dataset_dir = Path(dataset_dir)
    mask = read_tensor(dataset_dir / record["mask"])
    return Triplet(
        image_f=load_image_png(dataset_dir / record["img_f"]),
        image_s=load_image_png(dataset_dir / record["img_s"]),
        depth=read_tensor(dataset_dir / record["depth"]),
        mask=mask >= 0.5,
        pose_f=_pose_from_list(record["pose_f"]),
        pose_s=_pose_from_list(record["pose_s"]),
        pose_d=_pose_from_list(record["pose_d"]),
        w_prime=np.asarray(record["w_prime"], dtype=np.float64),
    )


def write_manifest(dataset_dir, manifest: dict) -> None:
    """Atomic write: temp file then rename, so readers never see partial data."""
    dataset_dir = Path(dataset_dir)
    tmp = dataset_dir / "manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp, dataset_dir / "manifest.json")


def read_manifest(dataset_dir) -> dict:
    dataset_dir = Path(dataset_dir)
    path = dataset_dir / "manifest.json"
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DatasetIOError(f"{path}: manifest not found")
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{path}: invalid JSON ({exc})")
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetIOError(
            f"{path}: unrecognized version {manifest.get('version')!r}"
        )
    records = manifest.get("records", [])
    if manifest.get("count") != len(records):
        raise DatasetIOError(
            f"{path}: count {manifest.get('count')} != {len(records)} records"
        )
    for record in records:
        for key in ("img_f", "img_s", "depth", "mask"):
            if not (dataset_dir / record[key]).exists():
                raise DatasetIOError(f"{path}: missing file {record[key]}")
    return manifest


def save_checkpoint(path, tensors: dict[str, np.ndarray], config_hash: str) -> None:
    """Single-file checkpoint: JSON header plus concatenated raw payloads."""
    entries = []
    payloads = []
    offset = 0
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor)
        code = _DTYPE_TO_CODE.get(arr.dtype)
        if code is None:
            raise DatasetIOError(f"unsupported dtype {arr.dtype} for tensor {name}")
        raw = arr.astype(_DTYPE_CODES[code], copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": "f32" if code == 1 else "f64",
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"config_hash": config_hash, "tensors": entries}).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(
    path, expected_names: list[str] | None = None
) -> tuple[dict[str, np.ndarray], str]:
    """Read a checkpoint; verify all expected tensor names are present."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DatasetIOError(f"{path}: bad checkpoint magic")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype("<f4") if entry["dtype"] == "f32" else np.dtype("<f8")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise DatasetIOError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(payload[start : start + nbytes], dtype=dtype)
            .reshape(entry["shape"])
            .copy()
        )
    if expected_names is not None:
        missing = sorted(set(expected_names) - set(tensors))
        if missing:
            raise DatasetIOError(f"{path}: missing tensors {missing}")
    return tensors, header["config_hash"]
