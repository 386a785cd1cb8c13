"""File formats: depth maps, masks, normal images, intrinsics, reports.

Depth files are chosen by extension: .pfm (float32), .pgm / .png (16-bit
through Pillow, depth = raw / 256, raw 0 is a hole). Every writer replaces
its target atomically.
"""
import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from app.core.errors import StorageError
from app.modules.geometry.schemas import CameraIntrinsics, DepthKind, DepthMap, NormalMap
from app.modules.photometric.schemas import Image, Pose

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEPTH_UNITS_PER_METER = 256.0
UINT16_MAX = 65535
PIL_FORMATS = {".png": "PNG", ".pgm": "PPM"}
DEPTH_SUFFIXES = (".pfm", ".pgm", ".png")
MASK_SUFFIXES = (".png", ".pgm")
NORMALS_SUFFIXES = (".png", ".pgm", ".pfm")


# --- Low level ---


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e.strerror or e}") from e


def atomic_write(path: PathLike, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e.strerror or e}") from e
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        Path(tmp).unlink(missing_ok=True)
        raise StorageError(f"cannot write {path}: {e.strerror or e}") from e
    logger.debug("wrote %s (%d bytes)", path, len(data))


def check_suffix(path: PathLike, allowed) -> str:
    """Lower-cased extension of path; StorageError unless it is one of allowed."""
    suffix = Path(path).suffix.lower()
    if suffix not in allowed:
        raise StorageError(f"{path}: unsupported extension '{suffix}', expected one of {sorted(allowed)}")
    return suffix


# --- PFM ---


def decode_pfm(data: bytes, name: str = "<pfm>") -> np.ndarray:
    stream = io.BytesIO(data)
    try:
        header = stream.readline().strip()
        width, height = (int(x) for x in stream.readline().split())
        scale = float(stream.readline().strip())
    except ValueError as e:
        raise StorageError(f"{name}: malformed PFM header") from e
    if header == b"PF":
        channels = 3
    elif header == b"Pf":
        channels = 1
    else:
        raise StorageError(f"{name}: not a PFM file")
    if width <= 0 or height <= 0 or scale == 0:
        raise StorageError(f"{name}: invalid PFM dimensions or scale")

    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    body = stream.read()
    if len(body) < count * 4:
        raise StorageError(f"{name}: truncated PFM data")
    pixels = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    # PFM rows run bottom-to-top
    return np.flipud(pixels.reshape(shape)).copy()


def encode_pfm(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim == 2:
        header = b"Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        header = b"PF"
    else:
        raise StorageError(f"PFM holds one or three channels, got shape {array.shape}")
    height, width = array.shape[:2]
    body = np.flipud(array).astype("<f4").tobytes()
    return header + b"\n%d %d\n-1.0\n" % (width, height) + body


# --- Depth maps ---

MAX_ENCODED_DEPTH = UINT16_MAX / DEPTH_UNITS_PER_METER


def _decode_integer_depth(data: bytes, name: str) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as img:
            if img.mode not in ("I", "I;16", "I;16B", "L"):
                raise StorageError(f"{name}: depth image must be single-channel integer, got {img.mode}")
            return np.asarray(img, dtype=np.float64) / DEPTH_UNITS_PER_METER
    except (UnidentifiedImageError, OSError) as e:
        raise StorageError(f"{name}: unreadable depth image ({e})") from e


def _depth_to_raw(depth: DepthMap, name: str = "<depth>") -> np.ndarray:
    """16-bit samples at 1/256 m; refuses valid depths the encoding cannot hold."""
    raw = np.round(depth.values * DEPTH_UNITS_PER_METER)
    too_far = depth.valid & (raw > UINT16_MAX)
    too_near = depth.valid & (raw < 1)
    if too_far.any() or too_near.any():
        raise StorageError(
            f"{name}: {int(too_far.sum())} pixels beyond {MAX_ENCODED_DEPTH:.4f} m and "
            f"{int(too_near.sum())} below {0.5 / DEPTH_UNITS_PER_METER:.6f} m do not fit 16-bit depth; use .pfm"
        )
    raw[~depth.valid] = 0
    return raw.astype(np.uint16)


def decode_depth(data: bytes, suffix: str, kind: DepthKind = DepthKind.RELATIVE, name: str = "<depth>") -> DepthMap:
    suffix = suffix.lower()
    if suffix == ".pfm":
        values = decode_pfm(data, name)
        if values.ndim != 2:
            raise StorageError(f"{name}: depth PFM must be single channel")
    elif suffix in (".pgm", ".png"):
        values = _decode_integer_depth(data, name)
    else:
        raise StorageError(f"{name}: unsupported depth format '{suffix}'")
    return DepthMap.from_array(values, kind)


def read_depth(path: PathLike, kind: DepthKind = DepthKind.RELATIVE) -> DepthMap:
    suffix = check_suffix(path, DEPTH_SUFFIXES)
    return decode_depth(_read_bytes(path), suffix, kind, str(path))


def write_depth(path: PathLike, depth: DepthMap) -> None:
    if check_suffix(path, DEPTH_SUFFIXES) == ".pfm":
        atomic_write(path, encode_pfm(depth.values))
    else:
        _write_pil(path, PILImage.fromarray(_depth_to_raw(depth, str(path))))


# --- Masks and images ---


def _write_pil(path: PathLike, img: PILImage.Image) -> None:
    suffix = check_suffix(path, PIL_FORMATS)
    buffer = io.BytesIO()
    img.save(buffer, format=PIL_FORMATS[suffix])
    atomic_write(path, buffer.getvalue())


def _open_image(path: PathLike) -> PILImage.Image:
    data = _read_bytes(path)
    try:
        img = PILImage.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise StorageError(f"{path}: unreadable image ({e})") from e
    return img


def read_mask(path: PathLike) -> np.ndarray:
    """Boolean mask: nonzero pixels are in."""
    img = _open_image(path)
    if img.mode not in ("1", "L", "I", "I;16", "I;16B"):
        img = img.convert("L")
    return np.asarray(img) != 0


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    pixels = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    _write_pil(path, PILImage.fromarray(pixels, mode="L"))


def normals_to_rgb(normals: NormalMap) -> np.ndarray:
    rgb = np.round((normals.vectors + 1.0) / 2.0 * 255.0)
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)
    rgb[~normals.valid] = 0
    return rgb


def write_normals(path: PathLike, normals: NormalMap) -> None:
    """RGB image of [-1, 1] -> [0, 255], or a three-channel PFM for .pfm."""
    if check_suffix(path, NORMALS_SUFFIXES) == ".pfm":
        atomic_write(path, encode_pfm(np.where(normals.valid[..., None], normals.vectors, 0.0)))
        return
    _write_pil(path, PILImage.fromarray(normals_to_rgb(normals), mode="RGB"))


def read_image(path: PathLike) -> Image:
    """Intensity image scaled to [0, 1]."""
    img = _open_image(path)
    if img.mode in ("I", "I;16", "I;16B"):
        return Image(np.asarray(img, dtype=np.float64) / UINT16_MAX)
    if img.mode in ("1", "L"):
        return Image(np.asarray(img.convert("L"), dtype=np.float64) / 255.0)
    return Image(np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0)


# --- JSON / CSV ---


def read_json(path: PathLike):
    try:
        return json.loads(_read_bytes(path))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise StorageError(f"{path}: invalid JSON ({e})") from e


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    data = read_json(path)
    if not isinstance(data, dict):
        raise StorageError(f"{path}: intrinsics must be a JSON object")
    return CameraIntrinsics.parse(data)


def write_intrinsics(path: PathLike, k: CameraIntrinsics) -> None:
    write_json(path, k.model_dump(exclude_none=True))


def read_pose(path: PathLike) -> Pose:
    data = read_json(path)
    if not isinstance(data, dict):
        raise StorageError(f"{path}: pose must be a JSON object")
    return Pose.from_dict(data)


def dumps_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, payload) -> None:
    atomic_write(path, dumps_json(payload).encode("utf-8"))


def format_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if value is None else value for value in row])
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write(path, format_csv(header, rows).encode("utf-8"))
