"""Frame and flow-field files plus the geometric ops used for augmentation.

Images are float32 arrays ``(C, H, W)`` with ``C`` in {1, 3} and values in
[0, 255].  Flow fields are float32 ``(2, H, W)``: ``u`` (rightward) then
``v`` (downward), in pixels.  Geometric ops also accept a leading batch axis.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from ._resample import resize_matrix
from .autodiff import ContractError

FLO_MAGIC = 202021.25


def read_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a ``(C, H, W)`` float32 array."""
    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
            raise ValueError(f"{path}: unsupported bit depth (mode {mode})")
        if mode in ("RGBA", "LA", "PA") or (mode == "P" and "transparency" in im.info):
            raise ValueError(f"{path}: images with alpha are not supported")
        if mode == "P":
            im = im.convert("RGB")
            mode = "RGB"
        if mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported image mode {mode}")
        try:
            arr = np.asarray(im, dtype=np.uint8)
        except OSError as exc:
            raise OSError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def write_image(image: np.ndarray, path) -> None:
    """Write a ``(C, H, W)`` image as 8-bit PNG, clamping to [0, 255]."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ContractError(f"expected (C, H, W) image with 1 or 3 channels, got {image.shape}")
    data = to_uint8(image)
    if data.shape[0] == 1:
        im = PILImage.fromarray(data[0], mode="L")
    else:
        im = PILImage.fromarray(data.transpose(1, 2, 0), mode="RGB")
    _atomic_write(path, lambda fh: im.save(fh, format="PNG"))


def _atomic_write(path, writer) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_flo(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file into a ``(2, H, W)`` float32 array."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 4:
            raise OSError(f"{path}: truncated flow file")
        (magic,) = struct.unpack("<f", header[:4])
        if magic != np.float32(FLO_MAGIC):
            raise ValueError(f"{path}: not a flow file (magic {magic})")
        if len(header) < 12:
            raise OSError(f"{path}: truncated flow header")
        w, h = struct.unpack("<ii", header[4:12])
        if w < 0 or h < 0:
            raise OSError(f"{path}: bad flow extents {w}x{h}")
        raw = fh.read()
    expected = 8 * w * h
    if len(raw) != expected:
        raise OSError(f"{path}: size mismatch, expected {expected} data bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w, 2)
    return np.ascontiguousarray(data.transpose(2, 0, 1)).astype(np.float32)


def write_flo(flow: np.ndarray, path) -> None:
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ContractError(f"expected (2, H, W) flow, got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ContractError("flow contains NaN or Inf")
    _, h, w = flow.shape
    payload = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tobytes()

    def writer(fh):
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(payload)

    _atomic_write(path, writer)


def resize_bilinear(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize with align-corners-false mapping and clamped sampling."""
    if new_w < 1 or new_h < 1:
        raise ContractError(f"resize target must be >= 1, got {new_w}x{new_h}")
    h, w = image.shape[-2:]
    mh = resize_matrix(h, new_h)
    mw = resize_matrix(w, new_w)
    out = mh @ image.astype(np.float64) @ mw.T
    return out.astype(image.dtype)


def shorter_side_size(w: int, h: int, shorter: int) -> tuple[int, int]:
    """Target ``(w, h)`` with the shorter side set to ``shorter``.

    The longer side is scaled proportionally and rounded to the nearest even
    integer.
    """
    if w <= h:
        return shorter, max(2, 2 * int(round(h * shorter / w / 2)))
    return max(2, 2 * int(round(w * shorter / h / 2))), shorter


def resize_shorter_side(image: np.ndarray, shorter: int = 360) -> np.ndarray:
    h, w = image.shape[-2:]
    nw, nh = shorter_side_size(w, h, shorter)
    return resize_bilinear(image, nw, nh)


def crop(image: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    ih, iw = image.shape[-2:]
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > iw or y + h > ih:
        raise ContractError(f"crop ({x}, {y}, {w}, {h}) outside {iw}x{ih} image")
    return image[..., y:y + h, x:x + w].copy()


def hflip(x: np.ndarray) -> np.ndarray:
    """Mirror left-right.  Two-channel arrays are flows and get ``u`` negated."""
    out = x[..., ::-1].copy()
    if out.shape[-3] == 2:
        out[..., 0, :, :] *= -1
    return out


def reverse_sequence(frames: Sequence) -> list:
    """Reverse frame order; the frame at time ``t`` then sits at ``1 - t``."""
    return list(frames)[::-1]
