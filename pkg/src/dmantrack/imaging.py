"""Image buffers, bounding boxes and sub-pixel patch sampling.

Images are float arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}`` and
values in ``[0, 1]``.  Sampling coordinates are in pixel-index units: pixel
``(row, col)`` sits at the integer position ``(x=col, y=row)``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:  # optional PNG/JPEG decoding
    from PIL import Image as _PILImage

    HAS_PIL = True
except ImportError:  # pragma: no cover
    _PILImage = None
    HAS_PIL = False


class InvalidArgument(ValueError):
    """Raised when an operation receives arguments outside its contract."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgument(f"box size must be positive, got {self.w}x{self.h}")

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def center(self):
        return np.array([self.x + self.w / 2.0, self.y + self.h / 2.0])

    @property
    def size(self):
        return np.array([self.w, self.h])

    @property
    def diag(self):
        return float(np.hypot(self.w, self.h))

    @property
    def area(self):
        return self.w * self.h

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (a.area + b.area - inter))


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU for two sequences of boxes, as an ``len(a) x len(b)`` array."""
    a = np.array([bx.as_tuple() for bx in boxes_a], dtype=float).reshape(-1, 4)
    b = np.array([bx.as_tuple() for bx in boxes_b], dtype=float).reshape(-1, 4)
    ix = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]) - np.maximum(
        a[:, None, 0], b[None, :, 0]
    )
    iy = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]) - np.maximum(
        a[:, None, 1], b[None, :, 1]
    )
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    union = a[:, None, 2] * a[:, None, 3] + b[None, :, 2] * b[None, :, 3] - inter
    return inter / union


def as_image(data) -> np.ndarray:
    """Coerce to a float ``(H, W, C)`` array and validate the value range."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise InvalidArgument(f"expected (H, W) or (H, W, 1|3) image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidArgument("image values must lie in [0, 1]")
    return img


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img
    return (img @ np.array([0.299, 0.587, 0.114]))[:, :, None]


def to_rgb(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 3:
        return img
    return np.repeat(img, 3, axis=2)


def extract_patch(img, center, size, out_size) -> np.ndarray:
    """Bilinearly resample the window ``center +/- size/2`` to ``out_size`` pixels.

    ``center`` is ``(x, y)``, ``size`` and ``out_size`` are ``(width, height)``.
    Samples falling outside the image replicate the nearest border pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    sw, sh = float(size[0]), float(size[1])
    ow, oh = int(out_size[0]), int(out_size[1])
    if sw <= 0 or sh <= 0 or ow <= 0 or oh <= 0:
        raise InvalidArgument(f"patch size must be positive, got size={size} out_size={out_size}")
    H, W = img.shape[:2]
    xs = center[0] - sw / 2.0 + (np.arange(ow) + 0.5) * (sw / ow)
    ys = center[1] - sh / 2.0 + (np.arange(oh) + 0.5) * (sh / oh)

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    x0 = x0.astype(int)
    y0 = y0.astype(int)
    xa = np.clip(x0, 0, W - 1)
    xb = np.clip(x0 + 1, 0, W - 1)
    ya = np.clip(y0, 0, H - 1)
    yb = np.clip(y0 + 1, 0, H - 1)

    top = img[ya][:, xa] * (1 - fx) + img[ya][:, xb] * fx
    bottom = img[yb][:, xa] * (1 - fx) + img[yb][:, xb] * fx
    return top * (1 - fy) + bottom * fy


def resize(img, out_size) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    return extract_patch(img, ((W - 1) / 2.0, (H - 1) / 2.0), (W, H), out_size)


def crop_box(img, box: BoundingBox, out_size) -> np.ndarray:
    """Resample the contents of ``box`` to ``out_size`` (width, height)."""
    c = box.center - 0.5
    return extract_patch(img, c, (box.w, box.h), out_size)


# --- file I/O -------------------------------------------------------------

def _read_token(buf, pos):
    while True:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5) file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise InvalidArgument(f"{path}: unsupported PNM magic {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    pos += 1  # single whitespace before raster
    channels = 3 if magic == b"P6" else 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h * channels
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return data.reshape(h, w, channels).astype(np.float64) / maxval


def write_pnm(path, img) -> None:
    """Write an image as P6 (RGB) or P5 (gray), 8-bit."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    magic = b"P6" if c == 3 else b"P5"
    raster = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(raster.tobytes())


def load_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".ppm", ".pgm", ".pnm"):
        return read_pnm(path)
    if not HAS_PIL:
        raise InvalidArgument(f"{path}: decoding {ext} requires Pillow")
    with _PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr
