"""
Binary netpbm (P5 greyscale / P6 colour) image I/O.

Samples wider than 8 bits are stored big-endian, as the netpbm
format requires. Arrays are returned as numpy arrays shaped
(height, width) or (height, width, 3).
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np


PathLike = Union[str, Path]


def _sample_dtype(maxval: int) -> np.dtype:
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval must be in [1, 65535], got {maxval}")
    return np.dtype(">u2") if maxval > 255 else np.dtype("u1")


def _parse_header(data: bytes) -> Tuple[str, int, int, int, int]:
    """Return (magic, width, height, maxval, offset of the raster)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("Truncated netpbm header")
        tokens.append(data[start:pos].decode("ascii"))
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    magic = tokens[0]
    if magic not in ("P5", "P6"):
        raise ValueError(f"Unsupported netpbm format: {magic}")
    width, height, maxval = (int(t) for t in tokens[1:])
    return magic, width, height, maxval, pos


def read_netpbm(path: PathLike) -> Tuple[np.ndarray, int]:
    """
    Read a binary PGM or PPM file.

    Parameters
    ----------
    path : str or Path
        File to read.

    Returns
    -------
    Tuple[np.ndarray, int]
        Native-endian integer image and its maxval.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ValueError
        If the file is not P5/P6 or is truncated.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    data = path.read_bytes()
    magic, width, height, maxval, offset = _parse_header(data)
    channels = 3 if magic == "P6" else 1
    dtype = _sample_dtype(maxval)
    count = width * height * channels
    if len(data) - offset < count * dtype.itemsize:
        raise ValueError(f"Truncated raster in {path}")
    img = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    img = img.astype(np.uint16 if dtype.itemsize == 2 else np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return img.reshape(shape), maxval


def write_netpbm(path: PathLike, img: np.ndarray, maxval: int) -> None:
    """
    Write a greyscale (2-D) or RGB (H, W, 3) integer image.

    Parameters
    ----------
    path : str or Path
        Destination file.
    img : np.ndarray
        Integer samples in [0, maxval].
    maxval : int
        255 for 8-bit files, up to 65535 for 16-bit files.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        magic = "P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = "P6"
    else:
        raise ValueError(f"Expected (H, W) or (H, W, 3) image, got {img.shape}")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise ValueError(f"Samples outside [0, {maxval}]")
    height, width = img.shape[:2]
    header = f"{magic}\n{width} {height}\n{maxval}\n".encode("ascii")
    raster = np.ascontiguousarray(img, dtype=_sample_dtype(maxval)).tobytes()
    Path(path).write_bytes(header + raster)
