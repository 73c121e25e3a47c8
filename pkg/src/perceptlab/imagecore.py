"""Image representation, value-domain conversion, region masks, and file I/O.

Two explicit value domains are used everywhere:

* ``display01`` -- display units in [0, 1], what goes to screens and PNG files.
* ``model11``   -- diffusion-model units nominally in [-1, 1]; intermediate
  diffusion states may exceed this range and are only clamped when converted
  back to display units.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

DISPLAY01 = "display01"
MODEL11 = "model11"

_DOMAINS = (DISPLAY01, MODEL11)


class DomainError(ValueError):
    """An image was used in the wrong value domain."""


class EmptyRegionError(ValueError):
    """A region mask with zero foreground pixels was used."""


class ImageIOError(ValueError):
    """Unreadable, unsupported, or unwritable image file."""


@dataclass(frozen=True)
class ImageGrid:
    """Immutable H x W x C float image with a declared value domain."""

    data: np.ndarray
    domain: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"zero-size image: shape {arr.shape}")
        if self.domain not in _DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "ImageGrid":
        """Same domain, new pixel values."""
        return ImageGrid(data, self.domain)

    def allclose(self, other: "ImageGrid", atol: float = 0.0) -> bool:
        return (
            self.domain == other.domain
            and self.shape == other.shape
            and bool(np.allclose(self.data, other.data, rtol=0.0, atol=atol))
        )


@dataclass(frozen=True)
class RegionMask:
    """Boolean H x W mask naming a target region; ``count`` is the pixel count M."""

    id: str
    bits: np.ndarray
    count: int = field(init=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        bits = np.ascontiguousarray(bits)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "count", int(bits.sum()))

    @property
    def shape(self) -> tuple:
        return self.bits.shape


def _check_domain(img: ImageGrid, expected: str, op: str):
    if img.domain != expected:
        raise DomainError(f"{op} expects a {expected} image, got {img.domain}")


def to_model_units(img: ImageGrid) -> ImageGrid:
    """Map display [0,1] to model [-1,1] via 2x - 1."""
    _check_domain(img, DISPLAY01, "to_model_units")
    return ImageGrid(2.0 * img.data - 1.0, MODEL11)


def to_display_units(img: ImageGrid) -> ImageGrid:
    """Map model [-1,1] to display [0,1] via (x+1)/2, clamped.

    Clamping happens here and only here: diffusion intermediates are allowed
    to leave [-1, 1], display values are not allowed to leave [0, 1].
    """
    _check_domain(img, MODEL11, "to_display_units")
    return ImageGrid(np.clip((img.data + 1.0) / 2.0, 0.0, 1.0), DISPLAY01)


def load_image(path: str | os.PathLike) -> ImageGrid:
    """Load an 8- or 16-bit PNG/PGM as display01; gray -> 1ch, color -> 3ch."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageIOError(f"no such image file: {path}")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot decode image: {path}")
    if raw.size == 0:
        raise ImageIOError(f"zero-size image: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 2:
        data = raw[:, :, None].astype(np.float64) / scale
    elif raw.ndim == 3 and raw.shape[2] == 3:
        data = raw[:, :, ::-1].astype(np.float64) / scale  # BGR -> RGB
    elif raw.ndim == 3 and raw.shape[2] == 4:
        raise ImageIOError(f"alpha channels not supported: {path}")
    else:
        raise ImageIOError(f"unsupported channel layout {raw.shape} in {path}")
    return ImageGrid(data, DISPLAY01)


def save_image(img: ImageGrid, path: str | os.PathLike) -> str:
    """Write display01 as 8-bit PNG (or binary PGM for single-channel .pgm)."""
    _check_domain(img, DISPLAY01, "save_image")
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".png", ".pgm"):
        raise ImageIOError(f"unsupported output format {ext!r} (use .png or .pgm)")
    if ext == ".pgm" and img.channels != 1:
        raise ImageIOError("PGM output requires a single-channel image")
    q = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = q[:, :, 0] if img.channels == 1 else q[:, :, ::-1]  # RGB -> BGR
    if not cv2.imwrite(path, out):
        raise ImageIOError(f"failed to write {path}")
    return path


def quantize8(img: ImageGrid) -> ImageGrid:
    """Snap display01 values to the 8-bit grid (what save_image stores)."""
    _check_domain(img, DISPLAY01, "quantize8")
    return ImageGrid(np.round(img.data * 255.0) / 255.0, DISPLAY01)


def region_from_mask(maskimg: ImageGrid, threshold: float = 0.5, id: str = "region") -> RegionMask:
    """Binarize a single-channel display01 mask image: bit set where pixel > threshold."""
    _check_domain(maskimg, DISPLAY01, "region_from_mask")
    if maskimg.channels != 1:
        raise ValueError("mask image must be single channel")
    bits = maskimg.data[:, :, 0] > threshold
    if not bits.any():
        raise EmptyRegionError(f"mask {id!r} has no foreground pixels above {threshold}")
    return RegionMask(id=id, bits=bits)


def save_mask(mask: RegionMask, path: str | os.PathLike) -> str:
    """Write a mask as an 8-bit PNG/PGM, foreground 255, background 0."""
    img = ImageGrid(mask.bits.astype(np.float64), DISPLAY01)
    return save_image(img, path)


def load_mask(path: str | os.PathLike, id: str | None = None) -> RegionMask:
    """Read a mask written by :func:`save_mask` (foreground = pixel > 127/255)."""
    img = load_image(path)
    if img.channels != 1:
        raise ImageIOError(f"mask file must be grayscale: {path}")
    name = id if id is not None else os.path.splitext(os.path.basename(path))[0]
    return region_from_mask(img, threshold=0.5, id=name)
