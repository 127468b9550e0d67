"""On-disk formats.

* images: binary PPM (P6), 8 bit
* label maps (semantic, instance, segment id): binary PGM (P5), 16 bit,
  big-endian samples, 65535 = IGNORE
* embeddings: raw little-endian float32, row-major, channels last, with a
  ``.hdr`` text sidecar of ``key value`` lines (height, width, channels,
  layout, dtype)
* segment table: one ``id category area`` line per segment
"""

from __future__ import annotations

import os
import re

import numpy as np

from .fusion import PanopticSegmentation, Segment


class FormatError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_netpbm(path, magic: bytes):
    with open(path, "rb") as f:
        data = f.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError(f"{path}: truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file, found {fields[0][:2]!r}")
    try:
        width, height, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    # exactly one whitespace byte separates header and raster
    return width, height, maxval, data[pos + 1:]


def write_ppm(path, image: np.ndarray) -> None:
    """Store a float image in [0, 1] as 8-bit P6."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    w, h, maxval, raster = _read_netpbm(path, b"P6")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    if len(raster) != w * h * 3:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {w * h * 3}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm16(path, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise FormatError(f"PGM needs a 2-D map, got {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() > 65535):
        raise FormatError("label values must fit in 16 bits")
    h, w = lab.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(lab.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    w, h, maxval, raster = _read_netpbm(path, b"P5")
    if maxval != 65535:
        raise FormatError(f"{path}: expected a 16-bit PGM (maxval {maxval})")
    if len(raster) != w * h * 2:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {w * h * 2}")
    return np.frombuffer(raster, dtype=">u2").reshape(h, w).astype(np.int64)


def _header_path(path) -> str:
    return os.fspath(path) + ".hdr"


def write_embedding(path, emb: np.ndarray) -> None:
    emb = np.asarray(emb)
    if emb.ndim != 3:
        raise FormatError(f"embedding must be (H, W, D), got {emb.shape}")
    h, w, d = emb.shape
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())
    with open(_header_path(path), "w") as f:
        f.write(f"height {h}\nwidth {w}\nchannels {d}\nlayout HWC\ndtype float32le\n")


def read_embedding(path) -> np.ndarray:
    try:
        with open(_header_path(path)) as f:
            meta = dict(line.split(None, 1) for line in f.read().splitlines() if line.strip())
    except FileNotFoundError:
        raise FormatError(f"{path}: missing header {_header_path(path)}") from None
    meta = {k: v.strip() for k, v in meta.items()}
    if meta.get("layout") != "HWC" or meta.get("dtype") != "float32le":
        raise FormatError(f"{path}: unsupported layout/dtype {meta}")
    h, w, d = (int(meta[k]) for k in ("height", "width", "channels"))
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != h * w * d:
        raise FormatError(f"{path}: {raw.size} values, header says {h * w * d}")
    return raw.reshape(h, w, d).astype(np.float32)


def write_segments(path, segments) -> None:
    with open(path, "w") as f:
        for s in segments:
            f.write(f"{s.id} {s.category} {s.area}\n")


def read_segments(path) -> list[Segment]:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{path}:{n}: expected 'id category area'")
            out.append(Segment(*(int(x) for x in parts)))
    return out


def write_panoptic(prefix, pan: PanopticSegmentation) -> None:
    """``<prefix>.pgm`` segment-id map plus ``<prefix>.segments`` table."""
    write_pgm16(f"{prefix}.pgm", pan.seg_map)
    write_segments(f"{prefix}.segments", pan.segments)


def read_panoptic(prefix) -> PanopticSegmentation:
    return PanopticSegmentation(read_segments(f"{prefix}.segments"),
                                read_pgm16(f"{prefix}.pgm"))
