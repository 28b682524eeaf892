"""Grayscale image I/O, geometry normalisation and dataset ingestion.

Only the Netpbm PGM formats are supported: P2 (ASCII) and P5 (binary),
``maxval`` up to 65535.  Binary samples wider than one byte are big-endian,
per the Netpbm convention.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DecodeError, IngestError

WORKING_WIDTH = 92
WORKING_HEIGHT = 112

MODALITIES = ("face", "fingerprint")
LAYOUTS = ("orl", "flat")
IMAGE_SUFFIXES = (".pgm",)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Integer-intensity raster.

    ``pixels`` has shape ``(height, width)``, row-major with the origin at the
    top-left, and every value lies in ``[0, levels - 1]``.  The array is made
    read-only on construction.
    """

    pixels: np.ndarray
    levels: int = 256

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D array, got shape {arr.shape}")
        if self.levels < 2 or self.levels > 65536:
            raise ValueError(f"levels must be in [2, 65536], got {self.levels}")
        if arr.dtype.kind == "f":
            if not np.all(arr == np.round(arr)):
                raise ValueError("pixels must be integers")
        elif arr.dtype.kind not in "iub":
            raise ValueError(f"unsupported pixel dtype {arr.dtype}")
        arr = arr.astype(np.int32)
        if arr.min() < 0 or arr.max() > self.levels - 1:
            raise ValueError(f"pixel intensities must lie in [0, {self.levels - 1}]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def maxval(self) -> int:
        return self.levels - 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.levels == other.levels and np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"GrayImage(width={self.width}, height={self.height}, levels={self.levels})"


# ---------------------------------------------------------------------------
# PGM codec

_WHITESPACE = b" \t\n\r\v\f"


class _HeaderReader:
    def __init__(self, data: bytes, path=None):
        self.data = data
        self.pos = 0
        self.path = path

    def _skip_space_and_comments(self) -> None:
        data = self.data
        while self.pos < len(data):
            c = data[self.pos : self.pos + 1]
            if c in (b"#",):
                while self.pos < len(data) and data[self.pos] not in b"\r\n":
                    self.pos += 1
            elif c and c in _WHITESPACE:
                self.pos += 1
            else:
                break

    def token(self, what: str) -> tuple[bytes, int]:
        self._skip_space_and_comments()
        start = self.pos
        data = self.data
        while self.pos < len(data) and data[self.pos] not in _WHITESPACE and data[self.pos] != ord("#"):
            self.pos += 1
        if self.pos == start:
            raise DecodeError(f"unexpected end of header while reading {what}", start, self.path)
        return data[start : self.pos], start

    def integer(self, what: str) -> tuple[int, int]:
        """Next decimal token and its byte offset."""
        tok, start = self.token(what)
        if not tok.isdigit():
            raise DecodeError(f"invalid {what} {tok!r}", start, self.path)
        return int(tok), start


def decode_pgm(data: bytes, path=None) -> GrayImage:
    """Decode the first image of a P2 or P5 byte string."""
    if len(data) < 2:
        raise DecodeError("file too short for a PGM magic number", 0, path)
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise DecodeError(f"unsupported magic number {magic!r} (only P2/P5 grayscale)", 0, path)
    reader = _HeaderReader(data, path)
    reader.pos = 2
    if reader.pos < len(data) and data[reader.pos] not in _WHITESPACE and data[reader.pos] != ord("#"):
        raise DecodeError("magic number not followed by whitespace", 2, path)
    width, width_pos = reader.integer("width")
    height, _ = reader.integer("height")
    maxval, maxval_pos = reader.integer("maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"image dimensions must be positive, got {width}x{height}", width_pos, path)
    if not 1 <= maxval <= 65535:
        raise DecodeError(f"maxval {maxval} outside [1, 65535]", maxval_pos, path)
    count = width * height

    if magic == b"P5":
        if reader.pos >= len(data) or data[reader.pos] not in _WHITESPACE:
            raise DecodeError("missing whitespace before raster", reader.pos, path)
        start = reader.pos + 1
        itemsize = 1 if maxval < 256 else 2
        need = count * itemsize
        if len(data) - start < need:
            raise DecodeError(
                f"truncated raster: expected {need} bytes, found {len(data) - start}", len(data), path
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.int32)
        if pixels.size and pixels.max() > maxval:
            bad = int(np.argmax(pixels > maxval))
            raise DecodeError(f"sample {pixels[bad]} exceeds maxval {maxval}", start + bad * itemsize, path)
    else:
        values = np.empty(count, dtype=np.int64)
        for i in range(count):
            try:
                values[i], _ = reader.integer("sample")
            except DecodeError as exc:
                if exc.offset is not None and exc.offset >= len(data):
                    raise DecodeError(
                        f"truncated raster: expected {count} samples, found {i}", len(data), path
                    ) from None
                raise
            if values[i] > maxval:
                raise DecodeError(f"sample {values[i]} exceeds maxval {maxval}", reader.pos, path)
        pixels = values.astype(np.int32)

    return GrayImage(pixels.reshape(height, width), levels=maxval + 1)


def encode_pgm(img: GrayImage, ascii: bool = False) -> bytes:
    maxval = img.maxval
    header = f"{'P2' if ascii else 'P5'}\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    if ascii:
        rows = (" ".join(str(int(v)) for v in row) for row in img.pixels)
        return header + ("\n".join(rows) + "\n").encode("ascii")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return header + img.pixels.astype(dtype).tobytes()


def load_pgm(path) -> GrayImage:
    path = Path(path)
    return decode_pgm(path.read_bytes(), path=path)


def write_pgm(path, img: GrayImage, ascii: bool = False) -> None:
    Path(path).write_bytes(encode_pgm(img, ascii=ascii))


# ---------------------------------------------------------------------------
# Geometry


def resample(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Bilinear resize with half-pixel centres.

    Output pixel ``(x, y)`` samples the source at
    ``((x + 0.5) * W / target_w - 0.5, (y + 0.5) * H / target_h - 0.5)``,
    clamped to the image, then rounds half-up and clamps to the level range.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    if (target_w, target_h) == (img.width, img.height):
        return img
    src = img.pixels.astype(np.float64)
    h, w = src.shape

    def axis(n_out: int, n_in: int):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    x0, x1, fx = axis(target_w, w)
    y0, y1, fy = axis(target_h, h)
    fx = fx[None, :]
    fy = fy[:, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    out = np.clip(np.floor(out + 0.5), 0, img.levels - 1)
    return GrayImage(out.astype(np.int32), levels=img.levels)


# ---------------------------------------------------------------------------
# Dataset ingestion


def natural_key(text: str):
    """Sort key that orders embedded integers numerically (s2 < s10)."""
    return tuple((0, int(part), "") if part.isdigit() else (1, 0, part) for part in re.split(r"(\d+)", text) if part)


@dataclass(frozen=True)
class DatasetManifest:
    modality: str
    root: Path
    subjects: tuple[tuple[str, tuple[Path, ...]], ...] = field(default_factory=tuple)
    layout: str = "orl"

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        ids = [sid for sid, _ in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        for sid, samples in self.subjects:
            if not samples:
                raise ValueError(f"subject {sid!r} has no samples")

    @property
    def subject_ids(self) -> list[str]:
        return [sid for sid, _ in self.subjects]

    def to_json(self) -> str:
        doc = {
            "layout": self.layout,
            "modality": self.modality,
            "root": str(self.root),
            "subjects": [
                {"id": sid, "samples": [p.relative_to(self.root).as_posix() for p in samples]}
                for sid, samples in self.subjects
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        root = Path(doc["root"])
        subjects = tuple(
            (entry["id"], tuple(root / s for s in entry["samples"])) for entry in doc["subjects"]
        )
        return cls(doc["modality"], root, subjects, doc.get("layout", "orl"))


def _image_files(directory: Path) -> Iterable[Path]:
    return (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def ingest(root, layout: str = "orl", modality: str = "face") -> DatasetManifest:
    """Enumerate a dataset directory into a sorted manifest.

    ``orl``: one subdirectory per subject holding numbered images
    (``s1/1.pgm``).  ``flat``: images named ``<subject>_<sample>.pgm`` in
    ``root`` itself.  Subjects and samples are sorted naturally, so the result
    does not depend on filesystem enumeration order.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise IngestError(f"unknown layout {layout!r}; expected one of {', '.join(LAYOUTS)}")
    if not root.is_dir():
        raise IngestError("dataset root is not a directory", [root])

    groups: dict[str, list[tuple[str, Path]]] = {}
    if layout == "orl":
        for sub in root.iterdir():
            if not sub.is_dir():
                continue
            files = [(p.stem, p) for p in _image_files(sub)]
            if files:
                groups[sub.name] = files
    else:
        bad = []
        for p in _image_files(root):
            subject, sep, sample = p.stem.rpartition("_")
            if not sep or not subject or not sample:
                bad.append(p)
                continue
            groups.setdefault(subject, []).append((sample, p))
        if bad:
            raise IngestError("filenames not of the form <subject>_<sample>", sorted(bad))

    if not groups:
        raise IngestError(f"no subjects found under {root}")
    subjects = tuple(
        (sid, tuple(p for _, p in sorted(groups[sid], key=lambda item: (natural_key(item[0]), item[1].name))))
        for sid in sorted(groups, key=natural_key)
    )
    return DatasetManifest(modality, root, subjects, layout)
