"""Dense tensor file I/O: NPY v1.0 for float/label arrays, PNG for images.

The on-disk contract is deliberately narrow. NPY files must be version 1.0,
little-endian, C order. Float tensors are stored as ``<f4`` (doubles are
narrowed with a warning on read), label maps as ``<i4``. All arrays returned
by this module are C-contiguous numpy arrays.
"""

from __future__ import annotations

import ast
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    FortranOrderError,
    IoFailure,
    MalformedHeaderError,
    UnsupportedDtypeError,
    UnsupportedPngError,
)

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_HEADER_ALIGN = 64


@dataclass(frozen=True)
class ImageSpec:
    """Height/width/channel description of an image tensor."""

    height: int
    width: int
    channels: int = 3

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError(f"all ImageSpec dims must be >= 1, got {self}")


def _validate_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise MalformedHeaderError("zero-dimensional tensors are not supported")
    if any(s < 1 for s in shape):
        raise MalformedHeaderError(f"all dimensions must be >= 1, got shape {shape}")
    return shape


def _build_header(descr: str, shape: tuple[int, ...]) -> bytes:
    dict_str = "{'descr': %r, 'fortran_order': False, 'shape': %s, }" % (
        descr,
        str(shape),
    )
    base = len(_MAGIC) + len(_VERSION) + 2  # preamble before the header text
    pad = -(base + len(dict_str) + 1) % _HEADER_ALIGN
    header = dict_str + " " * pad + "\n"
    return _MAGIC + _VERSION + struct.pack("<H", len(header)) + header.encode("latin1")


def _parse_header(raw: bytes, path) -> tuple[str, bool, tuple[int, ...], int]:
    """Return (descr, fortran_order, shape, data_offset) for an NPY blob."""
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise MalformedHeaderError(f"{path}: not an NPY file (bad magic)")
    if raw[6:8] != _VERSION:
        raise MalformedHeaderError(
            f"{path}: unsupported NPY version {raw[6]}.{raw[7]} (only 1.0)"
        )
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise MalformedHeaderError(f"{path}: truncated NPY header")
    try:
        header = ast.literal_eval(raw[10 : 10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise MalformedHeaderError(f"{path}: unparseable NPY header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {
        "descr",
        "fortran_order",
        "shape",
    }:
        raise MalformedHeaderError(f"{path}: NPY header keys must be descr/fortran_order/shape")
    if header["fortran_order"]:
        raise FortranOrderError(f"{path}: fortran_order=True is rejected (C order only)")
    shape = _validate_shape(header["shape"])
    return header["descr"], False, shape, 10 + hlen


def _read_raw(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_raw(path, blob: bytes) -> None:
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_typed(path, accepted: dict[str, np.dtype], target: np.dtype) -> np.ndarray:
    raw = _read_raw(path)
    descr, _, shape, offset = _parse_header(raw, path)
    if descr not in accepted:
        raise UnsupportedDtypeError(
            f"{path}: dtype {descr!r} not supported (accepted: {sorted(accepted)})"
        )
    dtype = accepted[descr]
    count = int(np.prod(shape))
    expected = count * dtype.itemsize
    if len(raw) - offset != expected:
        raise MalformedHeaderError(
            f"{path}: payload is {len(raw) - offset} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
    if dtype != target:
        warnings.warn(
            f"{path}: narrowing {descr} to {np.dtype(target).str}", stacklevel=3
        )
        data = data.astype(target)
    return np.ascontiguousarray(data)


def read_npy(path) -> np.ndarray:
    """Read a float tensor from an NPY v1.0 file as float32, C order."""
    return _read_typed(
        path,
        {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")},
        np.dtype("<f4"),
    )


def write_npy(tensor, path) -> None:
    """Write a float tensor as NPY v1.0, dtype ``<f4``, C order."""
    arr = np.asarray(tensor, dtype="<f4")
    shape = _validate_shape(arr.shape)
    _write_raw(path, _build_header("<f4", shape) + np.ascontiguousarray(arr).tobytes())


def read_label_map(path) -> np.ndarray:
    """Read an int32 label map from an NPY v1.0 file."""
    return _read_typed(
        path,
        {"<i4": np.dtype("<i4"), "<i8": np.dtype("<i8")},
        np.dtype("<i4"),
    )


def write_label_map(labels, path) -> None:
    """Write an int label map as NPY v1.0, dtype ``<i4``."""
    arr = np.asarray(labels, dtype="<i4")
    shape = _validate_shape(arr.shape)
    _write_raw(path, _build_header("<i4", shape) + np.ascontiguousarray(arr).tobytes())


_16BIT_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N", "F")


def read_image_png(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG as a float32 [H, W, 3] tensor.

    Grayscale is replicated across the three channels. Values stay in
    [0, 255]. 16-bit images and palettes with transparency are rejected.
    """
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as exc:
        raise UnsupportedPngError(f"{path}: not a decodable image: {exc}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if img.mode in _16BIT_MODES:
        raise UnsupportedPngError(f"{path}: 16-bit images are not supported")
    if img.mode == "P":
        if "transparency" in img.info:
            raise UnsupportedPngError(f"{path}: palette with transparency is not supported")
        img = img.convert("RGB")
    if img.mode == "L":
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise UnsupportedPngError(
            f"{path}: mode {img.mode!r} not supported (8-bit RGB/grayscale only)"
        )
    return np.asarray(img, dtype=np.float32)


def _label_palette() -> np.ndarray:
    # Odd multipliers make every channel a bijection of the index, so all
    # 256 palette entries are distinct by construction.
    idx = np.arange(256)
    r = (idx * 67 + 89) % 256
    g = (idx * 151 + 41) % 256
    b = (idx * 229 + 171) % 256
    return np.stack([r, g, b], axis=1).astype(np.uint8)


LABEL_PALETTE = _label_palette()


def write_segmentation_png(labels, path) -> None:
    """Render a label map as a palette PNG (palette index = label mod 256)."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise MalformedHeaderError(f"label map must be 2-D, got shape {arr.shape}")
    img = Image.fromarray((arr % 256).astype(np.uint8), mode="P")
    img.putpalette(LABEL_PALETTE.flatten().tolist())
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_image_png(image, path) -> None:
    """Write a float [H, W, 3] tensor with values in [0, 255] as an RGB PNG."""
    arr = np.asarray(image)
    if arr.ndim != 2 and not (arr.ndim == 3 and arr.shape[2] == 3):
        raise MalformedHeaderError(f"expected [H, W] or [H, W, 3], got {arr.shape}")
    out = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    img = Image.fromarray(out, mode="L" if out.ndim == 2 else "RGB")
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
