"""PGM (P2/P5) grayscale image files with a key=value metadata sidecar.

The sidecar lives next to the image at ``<image>.meta`` and carries at least
``pixel_size_um``. 16-bit binary images use network byte order, as the format
requires.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import format_float, parse_config
from .errors import FileFormatError
from .morphometry import GrayImage

__all__ = ["read_pgm", "write_pgm", "sidecar_path"]


def sidecar_path(image_path: str | Path) -> Path:
    return Path(str(image_path) + ".meta")


def _header_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    pos = 0
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            yield data[pos:end], end
            pos = end


def read_pgm(path: str | Path, default_pixel_size: float = 1.0) -> GrayImage:
    """Read an 8- or 16-bit PGM; pixel size comes from the sidecar if present."""
    path = Path(path)
    data = path.read_bytes()
    tokens = _header_tokens(data)
    try:
        magic, _ = next(tokens)
        width_tok, _ = next(tokens)
        height_tok, _ = next(tokens)
        maxval_tok, header_end = next(tokens)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except (StopIteration, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed PGM header") from exc
    if magic not in (b"P2", b"P5"):
        raise FileFormatError(f"{path}: not a PGM file (magic {magic!r})")
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise FileFormatError(f"{path}: invalid PGM dimensions or maxval")

    if magic == b"P2":
        try:
            values = np.array(data[header_end:].split(), dtype=float)
        except ValueError as exc:
            raise FileFormatError(f"{path}: non-numeric P2 pixel data") from exc
    else:
        # P5: exactly one whitespace byte separates the header from raster data.
        raster = data[header_end + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        expected = width * height * dtype.itemsize
        if len(raster) < expected:
            raise FileFormatError(
                f"{path}: raster truncated ({len(raster)} bytes, expected {expected})"
            )
        values = np.frombuffer(raster[:expected], dtype=dtype).astype(float)
    if values.size != width * height:
        raise FileFormatError(
            f"{path}: pixel count {values.size} does not match {width}x{height}"
        )
    if values.min() < 0 or values.max() > maxval:
        raise FileFormatError(f"{path}: pixel values outside [0, {maxval}]")

    pixel_size = default_pixel_size
    meta = sidecar_path(path)
    if meta.exists():
        try:
            entries = parse_config(meta.read_text(encoding="utf-8"))
            if "pixel_size_um" in entries:
                pixel_size = float(entries["pixel_size_um"])
        except (FileFormatError, ValueError) as exc:
            raise FileFormatError(f"{meta}: bad sidecar: {exc}") from exc
    return GrayImage(values.reshape(height, width), pixel_size)


def write_pgm(
    path: str | Path,
    image: GrayImage,
    maxval: int = 65535,
    binary: bool = True,
    write_sidecar: bool = True,
) -> None:
    """Write an image as PGM (values clipped and rounded to [0, maxval])."""
    path = Path(path)
    values = np.clip(np.rint(image.values), 0, maxval).astype(np.uint32)
    header = f"P5\n{image.width} {image.height}\n{maxval}\n"
    if binary:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        path.write_bytes(header.encode("ascii") + values.astype(dtype).tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in values)
        path.write_text(f"P2\n{image.width} {image.height}\n{maxval}\n{body}\n",
                        encoding="ascii")
    if write_sidecar:
        sidecar_path(path).write_text(
            f"pixel_size_um={format_float(image.pixel_size)}\n", encoding="utf-8"
        )
