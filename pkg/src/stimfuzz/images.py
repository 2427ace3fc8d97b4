"""Grayscale image I/O: PGM (P5/P2), PNG and raw float grids (.npy).

Loaded images are float32 in [0, 1]; 8-bit sources are normalized by /255.
PGM is the output format for discovered violation images.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return _load_pgm(path)
    if suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 2:
            raise ValueError(f"{path}: raw float grid must be 2-D, got {arr.shape}")
        arr = arr.astype(np.float32)
        if arr.min() < 0 or arr.max() > 1:
            raise ValueError(f"{path}: raw float grid values must lie in [0, 1]")
        return arr
    if suffix == ".png":
        from PIL import Image
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float32)
        return (arr / 255.0).astype(np.float32)
    raise ValueError(f"{path}: unsupported image format {suffix!r}")


def _load_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header tokens with '#' comment handling; P5 pixel data follows the
    # single whitespace after maxval
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    elif magic == b"P2":
        values = data[pos:].split()
        pixels = np.array(values[:width * height], dtype=np.uint8)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return (pixels.reshape(height, width).astype(np.float32) / float(maxval)).astype(np.float32)


def save_pgm(path: str | Path, image: np.ndarray):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got {img.shape}")
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())


def load_image_dir(path: str | Path) -> list[np.ndarray]:
    """All supported images in a directory, in sorted filename order."""
    path = Path(path)
    if not path.is_dir():
        raise ValueError(f"{path} is not a directory")
    images = []
    for child in sorted(path.iterdir()):
        if child.suffix.lower() in (".pgm", ".pnm", ".png", ".npy"):
            images.append(load_image(child))
    if not images:
        raise ValueError(f"no images found in {path}")
    return images
