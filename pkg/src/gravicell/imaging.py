"""Image containers, file I/O, and low-level sampling utilities.

Frames are handled as 2-D ``float64`` arrays in row-major (y, x) order.
Label maps are ``int32`` with 0 meaning background.  Readers accept
single-channel 8- or 16-bit TIFF and binary PGM (P5); anything else
raises :class:`~gravicell.errors.FormatError` naming the offending
property.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError

FRAME_EXTENSIONS = (".tif", ".tiff", ".pgm")

# Pillow modes we accept for microscopy frames, with their sample depth.
_ACCEPTED_MODES = {"L": 8, "I;16": 16, "I;16B": 16, "I;16L": 16}


@dataclass(frozen=True)
class SequenceMeta:
    """What a directory scan found: ordered frame paths plus sample depth."""

    paths: tuple[Path, ...]
    bit_depth: int

    @property
    def frame_count(self) -> int:
        return len(self.paths)


def load_frame(path: str | Path) -> np.ndarray:
    """Read a single-channel 8/16-bit TIFF or binary PGM as float64.

    Values keep their stored scale (0..255 or 0..65535); normalization is
    a separate, explicit step.

    Raises
    ------
    FormatError
        If the file is multi-channel, has an unsupported bit depth, or is
        not a recognized container.
    DataError
        If the file is missing or unreadable.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"frame not found: {path}")
    if path.suffix.lower() == ".pgm":
        return load_pgm(path).astype(np.float64)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in _ACCEPTED_MODES:
                if mode in ("RGB", "RGBA", "CMYK", "YCbCr", "P", "PA"):
                    raise FormatError(
                        f"{path}: expected a single-channel image, got mode {mode!r}"
                    )
                raise FormatError(
                    f"{path}: unsupported bit depth or sample type (mode {mode!r}; "
                    "only 8-bit and 16-bit single-channel images are readable)"
                )
            arr = np.asarray(im)
    except FormatError:
        raise
    except Exception as exc:  # Pillow raises a zoo of container errors
        raise FormatError(f"{path}: not a readable image file ({exc})") from exc
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected 2-D data, got shape {arr.shape}")
    return arr.astype(np.float64)


def frame_bit_depth(path: str | Path) -> int:
    """Sample depth (8 or 16) of a frame file without loading pixel data."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _, _, maxval, _ = _parse_pgm_header(path.read_bytes(), path)
        return 8 if maxval < 256 else 16
    with Image.open(path) as im:
        depth = _ACCEPTED_MODES.get(im.mode)
        if depth is None:
            raise FormatError(f"{path}: unsupported mode {im.mode!r}")
        return depth


def save_frame_u16(path: str | Path, img: np.ndarray) -> None:
    """Write a float image in [0, 1] as a 16-bit single-channel TIFF."""
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = (scaled * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(data).save(path, format="TIFF")


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    """Write a label map as a 16-bit TIFF (labels stored verbatim)."""
    lab = np.asarray(labels)
    if lab.min() < 0 or lab.max() > 65535:
        raise DataError(f"label values outside uint16 range: {lab.min()}..{lab.max()}")
    Image.fromarray(lab.astype(np.uint16)).save(path, format="TIFF")


def load_labels(path: str | Path) -> np.ndarray:
    """Read a label map written by :func:`save_labels`."""
    return load_frame(path).astype(np.int32)


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as PNG."""
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# PGM (binary, P5)


def _parse_pgm_header(blob: bytes, path: Path) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, data_offset) of a P5 file."""
    if not blob.startswith(b"P5"):
        magic = blob[:2].decode("ascii", "replace")
        raise FormatError(f"{path}: bad magic number {magic!r} (only binary P5 supported)")
    # Header tokens are separated by whitespace; '#' starts a comment to EOL.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise FormatError(f"{path}: truncated header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            eol = blob.find(b"\n", pos)
            pos = len(blob) if eol < 0 else eol + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        m = re.match(rb"\d+", blob[pos:])
        if not m:
            raise FormatError(f"{path}: malformed header near byte {pos}")
        tokens.append(int(m.group()))
        pos += m.end()
    # Exactly one whitespace byte separates the header from pixel data.
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise FormatError(f"{path}: missing delimiter after header")
    pos += 1
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} outside 1..65535")
    return width, height, maxval, pos


def load_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM file; 16-bit samples are big-endian."""
    path = Path(path)
    blob = path.read_bytes()
    width, height, maxval, offset = _parse_pgm_header(blob, path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    data = blob[offset : offset + need]
    if len(data) < need:
        raise FormatError(
            f"{path}: pixel data truncated ({len(data)} of {need} bytes)"
        )
    return np.frombuffer(data, dtype=dtype).reshape(height, width).astype(np.int64)


def save_pgm(path: str | Path, img: np.ndarray, maxval: int = 65535) -> None:
    """Write integer samples as binary (P5) PGM; >8-bit goes big-endian."""
    arr = np.asarray(img)
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval {maxval} outside 1..65535")
    if arr.min() < 0 or arr.max() > maxval:
        raise DataError(f"sample values outside 0..{maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# Sequence discovery


def find_frames(directory: str | Path) -> SequenceMeta:
    """Scan a directory for frames, sorted by filename.

    All frames must share one bit depth; a mixed sequence is a data error,
    as is an empty directory.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"input directory not found: {directory}")
    paths = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in FRAME_EXTENSIONS
    )
    if not paths:
        raise DataError(f"no frames (*.tif, *.tiff, *.pgm) in {directory}")
    depths = {frame_bit_depth(p) for p in paths}
    if len(depths) > 1:
        raise DataError(f"mixed bit depths {sorted(depths)} in {directory}")
    return SequenceMeta(paths=tuple(paths), bit_depth=depths.pop())


# ---------------------------------------------------------------------------
# Pixel-level utilities


def normalize(img: np.ndarray) -> np.ndarray:
    """Affinely rescale to [0, 1]; a constant image maps to all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min())
    hi = float(img.max())
    if hi - lo <= 0.0:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def bilinear(field: np.ndarray, x, y):
    """Bilinearly interpolate ``field`` at continuous (x, y) positions.

    Coordinates are clamped to the valid domain [0, W-1] x [0, H-1], so
    samples never read outside the array.  Accepts scalars or arrays
    (broadcast together); NaNs stored in ``field`` propagate.
    """
    h, w = field.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = field[y0, x0] * (1.0 - wx) + field[y0, x1] * wx
    bot = field[y1, x0] * (1.0 - wx) + field[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Renumber positive labels to 1..K preserving order; 0 stays 0."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    present = present[present > 0]
    lut = np.zeros(int(labels.max()) + 1 if labels.size and labels.max() > 0 else 1,
                   dtype=np.int32)
    lut[present] = np.arange(1, present.size + 1, dtype=np.int32)
    return lut[labels]


def atomic_write_dir(tmp_dir: str | Path, final_dir: str | Path) -> None:
    """Move a fully-written temporary directory into place.

    An existing destination is replaced only if it is an empty directory;
    otherwise the move fails rather than destroying previous output.
    """
    tmp_dir, final_dir = Path(tmp_dir), Path(final_dir)
    if final_dir.exists():
        if final_dir.is_dir() and not any(final_dir.iterdir()):
            final_dir.rmdir()
        else:
            raise DataError(f"output path already exists: {final_dir}")
    os.replace(tmp_dir, final_dir)
