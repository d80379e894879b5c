"""Grayscale image container and file I/O.

Supported on disk: 8/16-bit single-channel PGM (P2 ASCII and P5 binary)
and single-channel TIFF.  Anything else is rejected up front rather than
silently converted; color-to-gray conversion changes the speckle statistics
and should be an explicit preprocessing step outside this package.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageIoError, UnsupportedFormat

__all__ = ["GrayImage", "load_image", "save_pgm", "gray_image_from_array"]


@dataclass
class GrayImage:
    """A single-channel image held as float64 pixels.

    ``pixels`` has shape ``(height, width)``, C-contiguous, finite and
    non-negative.  ``source_depth`` records the bit depth of the file the
    image came from (8 or 16) so synthetic outputs can be written back at
    the same depth.  Instances are treated as immutable after construction;
    nothing in the package writes to ``pixels`` in place.
    """

    width: int
    height: int
    pixels: np.ndarray
    source_depth: int = 8
    label: str = field(default="")

    @property
    def max_gray(self) -> float:
        return float(2 ** self.source_depth - 1)


def gray_image_from_array(arr: np.ndarray, source_depth: int = 8,
                          label: str = "") -> GrayImage:
    """Wrap a 2D array as a :class:`GrayImage`, validating the invariants."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise UnsupportedFormat("expected a non-empty 2D single-channel array")
    if source_depth not in (8, 16):
        raise UnsupportedFormat(f"unsupported bit depth {source_depth}")
    if not np.isfinite(a).all():
        raise UnsupportedFormat("image contains non-finite values")
    if a.min() < 0.0:
        raise UnsupportedFormat("image contains negative intensities")
    h, w = a.shape
    return GrayImage(width=w, height=h, pixels=a, source_depth=source_depth,
                     label=label)


def _read_pgm_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer tokens starting at `pos`,
    skipping '#' comments that run to end of line."""
    tokens: list[int] = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos] == 0x23:  # '#'
            while pos < n and buf[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageIoError("truncated PGM header")
        try:
            tokens.append(int(buf[start:pos]))
        except ValueError as exc:
            raise ImageIoError(f"bad PGM header token {buf[start:pos]!r}") from exc
    return tokens, pos


def _load_pgm(buf: bytes, label: str) -> GrayImage:
    magic = buf[:2]
    (w, h, maxval), pos = _read_pgm_tokens(buf, 3, 2)
    if w < 1 or h < 1:
        raise ImageIoError(f"bad PGM dimensions {w}x{h}")
    if not 0 < maxval < 65536:
        raise ImageIoError(f"bad PGM maxval {maxval}")
    depth = 8 if maxval < 256 else 16
    if magic == b"P2":
        vals, _ = _read_pgm_tokens(buf, w * h, pos)
        arr = np.array(vals, dtype=np.float64).reshape(h, w)
    else:
        pos += 1  # single whitespace byte after maxval
        itemsize = 1 if maxval < 256 else 2
        need = w * h * itemsize
        raw = buf[pos:pos + need]
        if len(raw) < need:
            raise ImageIoError("PGM pixel data shorter than header declares")
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        arr = np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.float64)
    if arr.max(initial=0.0) > maxval:
        raise ImageIoError("PGM sample exceeds declared maxval")
    return gray_image_from_array(arr, depth, label)


def _load_tiff(path: str, label: str) -> GrayImage:
    from PIL import Image

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "L":
                depth = 8
            elif mode in ("I;16", "I;16L", "I;16B", "I;16N"):
                depth = 16
            else:
                raise UnsupportedFormat(
                    f"TIFF mode {mode!r} is not single-channel 8/16-bit grayscale")
            arr = np.asarray(im, dtype=np.float64)
    except UnsupportedFormat:
        raise
    except OSError as exc:
        raise ImageIoError(f"cannot decode TIFF {path}: {exc}") from exc
    return gray_image_from_array(arr, depth, label)


def load_image(path: str | os.PathLike) -> GrayImage:
    """Load a PGM or grayscale TIFF file.

    Raises UnsupportedFormat for anything that is not an 8/16-bit
    single-channel PGM or grayscale TIFF, and ImageIoError when the file
    is missing or malformed.  The file's base name becomes the image label
    used to derive result file names.
    """
    path = os.fspath(path)
    label = os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
            rest = fh.read()
    except OSError as exc:
        raise ImageIoError(f"cannot read {path}: {exc}") from exc
    buf = head + rest
    if head[:2] in (b"P2", b"P5"):
        return _load_pgm(buf, label)
    if head[:4] in (b"II*\x00", b"MM\x00*"):
        return _load_tiff(path, label)
    raise UnsupportedFormat(
        f"{path}: not a PGM (P2/P5) or TIFF file; other formats, including "
        "color images, are not supported")


def save_pgm(image: GrayImage, path: str | os.PathLike, binary: bool = True) -> None:
    """Write an image as PGM at its source bit depth.

    Values are rounded and clipped to [0, 2**depth - 1]; round-tripping an
    image whose pixels are already integers in range is lossless.
    """
    maxval = int(image.max_gray)
    arr = np.clip(np.rint(image.pixels), 0, maxval)
    header = f"P5 {image.width} {image.height} {maxval}\n".encode()
    try:
        if binary:
            dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
            payload = arr.astype(dtype).tobytes()
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(payload)
        else:
            out = io.StringIO()
            out.write(f"P2\n{image.width} {image.height}\n{maxval}\n")
            for row in arr.astype(np.int64):
                out.write(" ".join(str(v) for v in row))
                out.write("\n")
            with open(path, "w", encoding="ascii") as fh:
                fh.write(out.getvalue())
    except OSError as exc:
        raise ImageIoError(f"cannot write {path}: {exc}") from exc
