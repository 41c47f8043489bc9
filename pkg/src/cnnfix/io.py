"""File formats: images, fixation point tables, box records, annotations, reports."""
from __future__ import annotations

import os
import tempfile
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from .postprocess import BoundingBox

IMAGE_SUFFIXES = (".png", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff", ".npy")


class DataError(Exception):
    """An input file is missing or malformed."""


def read_image(path, channels: int | None = None) -> np.ndarray:
    """Load an image as a ``(C, H, W)`` float32 array in ``[0, 1]``.

    ``.npy`` files are taken as-is (a 2-D array gains a channel axis).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float32)
        return arr[None] if arr.ndim == 2 else arr
    try:
        with Image.open(path) as im:
            if channels == 1 or (channels is None and im.mode in ("L", "I", "I;16", "1", "P")):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1).copy()


def to_uint8(values) -> np.ndarray:
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def encode_png(pixels: np.ndarray) -> bytes:
    """PNG bytes for an ``(H, W)`` gray or ``(H, W, 3)`` RGB uint8 array."""
    buf = BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def write_gray(path, values):
    """Write a ``(H, W)`` or ``(1, H, W)`` array in ``[0, 1]`` as an 8-bit grayscale PNG."""
    arr = np.asarray(values)
    if arr.ndim == 3:
        arr = arr[0]
    _atomic_write(Path(path), encode_png(to_uint8(arr)))


def write_image(path, image) -> Path:
    """Write a ``(C, H, W)`` image in ``[0, 1]``.

    One or three channels become a PNG; any other channel count is saved as
    ``.npy`` since PNG cannot hold it. Returns the path actually written.
    """
    arr = np.asarray(image)
    path = Path(path)
    if arr.shape[0] == 1:
        write_gray(path.with_suffix(".png"), arr)
        return path.with_suffix(".png")
    if arr.shape[0] == 3:
        _atomic_write(path.with_suffix(".png"), encode_png(to_uint8(arr.transpose(1, 2, 0))))
        return path.with_suffix(".png")
    buf = BytesIO()
    np.save(buf, arr.astype(np.float32))
    _atomic_write(path.with_suffix(".npy"), buf.getvalue())
    return path.with_suffix(".npy")


def gray_base(image: np.ndarray) -> np.ndarray:
    """``(H, W)`` luminance of a ``(C, H, W)`` image."""
    img = np.asarray(image, dtype=np.float64)
    return img[0] if img.shape[0] == 1 else img[:3].mean(axis=0)


def heatmap_overlay(image: np.ndarray, heatmap: np.ndarray) -> np.ndarray:
    """RGB uint8 image: the heat map pushes pixels toward pure red."""
    base = gray_base(image)
    hm = np.clip(heatmap, 0.0, 1.0)
    dim = base * (1.0 - hm)
    return to_uint8(np.stack([dim + hm, dim, dim], axis=-1))


def fixation_overlay(image: np.ndarray, points) -> np.ndarray:
    """RGB uint8 image with each fixation drawn as a 3x3 red square."""
    base = to_uint8(gray_base(image))
    rgb = np.stack([base] * 3, axis=-1)
    h, w = base.shape
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            xs, ys = pts[:, 0] + dx, pts[:, 1] + dy
            keep = (xs >= 0) & (xs < h) & (ys >= 0) & (ys < w)
            rgb[xs[keep], ys[keep]] = (255, 0, 0)
    return rgb


def format_points(points, meta: dict) -> str:
    """Fixation table: ``# key: value`` header lines, then one ``x y`` row per point."""
    lines = ["# cnnfix fixations"]
    lines += [f"# {k}: {v}" for k, v in meta.items()]
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    lines.append(f"# count: {len(pts)}")
    lines.append("x y")
    lines += [f"{x} {y}" for x, y in pts.tolist()]
    return "\n".join(lines) + "\n"


def parse_points(text: str) -> tuple[np.ndarray, dict]:
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            if ":" in line:
                k, v = line[1:].split(":", 1)
                meta[k.strip()] = v.strip()
        elif line.strip() and line.strip() != "x y":
            x, y = line.split()
            rows.append((int(x), int(y)))
    return np.array(rows, dtype=np.int64).reshape(-1, 2), meta


def format_box(box: BoundingBox) -> str:
    return "{} {} {} {}\n".format(*box.as_tuple())


def read_annotation(path) -> tuple[int, list[BoundingBox]]:
    """Parse ``class x_min y_min x_max y_max`` lines; all lines share one class."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read annotation {path}: {exc}") from None
    classes, boxes = set(), []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        try:
            cls, *coords = (int(p) for p in parts)
            if len(coords) != 4:
                raise ValueError("expected 5 integers")
            boxes.append(BoundingBox(*coords))
        except ValueError as exc:
            raise DataError(f"{path}:{n}: bad annotation line ({exc})") from None
        classes.add(cls)
    if not boxes:
        raise DataError(f"{path}: no boxes")
    if len(classes) != 1:
        raise DataError(f"{path}: mixes classes {sorted(classes)}")
    return classes.pop(), boxes


def format_annotation(cls: int, boxes) -> str:
    return "".join(f"{cls} " + format_box(b) for b in boxes)


def format_report(values: dict) -> str:
    """``key: value`` lines with floats to two decimals."""
    out = []
    for k, v in values.items():
        out.append(f"{k}: {v:.2f}" if isinstance(v, float) else f"{k}: {v}")
    return "\n".join(out) + "\n"


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def write_text(path, text: str):
    _atomic_write(Path(path), text.encode())


def write_bytes(path, data: bytes):
    _atomic_write(Path(path), data)
