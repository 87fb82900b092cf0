"""File formats: delimited records, 16-bit graymaps, mask ingestion, summaries."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optics import PlateSpec
from .records import Record


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_record(path: Path, record: Record, header: str = "") -> None:
    """Comma-separated columns behind a '#'-commented header."""
    names = record.names
    cols = [record[n] for n in names]
    with open(path, "w", newline="\n") as fh:
        if header:
            fh.write(header + "\n")
        fh.write(",".join(names) + "\n")
        for i in range(len(record)):
            fh.write(",".join(format_value(c[i]) for c in cols) + "\n")


def read_record(path: Path) -> tuple[list[str], np.ndarray, str]:
    """Returns (column names, data rows, header text with '# ' stripped)."""
    lines = Path(path).read_text().splitlines()
    head = []
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        head.append(lines[k][2:] if lines[k].startswith("# ") else lines[k][1:])
        k += 1
    names = lines[k].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[k + 1:] if ln])
    return names, data.reshape(-1, len(names)), "\n".join(head)


def write_pgm(path: Path, image: np.ndarray, comments: list[str] = ()) -> float:
    """16-bit binary graymap, linear in intensity, normalized to its maximum.

    The normalization (intensity of code 65535) goes into the header.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("graymap needs a 2D image")
    peak = float(img.max()) if img.size else 0.0
    scale = 65535.0 / peak if peak > 0 else 0.0
    codes = np.clip(np.rint(img * scale), 0, 65535).astype(">u2")
    lines = ["P5", f"# normalization {peak:.17g}"]
    lines += [f"# {c}" if c else "#" for c in comments]
    lines += [f"{img.shape[1]} {img.shape[0]}", "65535"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(codes.tobytes())
    return peak


def _pgm_tokens(data: bytes):
    """Header tokens of a netpbm file and the offset of the raster."""
    tokens, pos, comments = [], 0, []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1:end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1, comments


def read_pgm(path: Path) -> tuple[np.ndarray, int, list[str]]:
    """Read P2 (ascii) or P5 (8/16-bit) graymaps; returns (values, maxval, comments)."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), off, comments = _pgm_tokens(data)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError):
        raise ValueError(f"{path}: not a readable graymap") from None
    if magic == "P5":
        dt = ">u2" if maxval > 255 else "u1"
        arr = np.frombuffer(data, dtype=dt, count=w * h, offset=off)
    elif magic == "P2":
        try:
            arr = np.array(data[off:].split(), dtype=float)[: w * h]
        except ValueError:
            raise ValueError(f"{path}: non-numeric graymap content") from None
    else:
        raise ValueError(f"{path}: unsupported graymap type {magic}")
    if arr.size != w * h:
        raise ValueError(f"{path}: truncated graymap")
    return arr.reshape(h, w).astype(float), maxval, comments


def resample_nearest(a: np.ndarray, n: int) -> np.ndarray:
    rows = ((np.arange(n) + 0.5) * a.shape[0] / n).astype(int)
    cols = ((np.arange(n) + 0.5) * a.shape[1] / n).astype(int)
    return a[np.ix_(rows, cols)]


def ingest_mask(path, n: int, phase_min: float = 0.0, phase_max: float = np.pi / 2,
                resample: bool = False, passes: int = 2) -> PlateSpec:
    """Load a raster oracle.

    Graymap codes are scaled by maxval, delimited grids must already lie in
    [0, 1]; the level is then mapped linearly onto [phase_min, phase_max].
    """
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        vals, maxval, _ = read_pgm(path)
        level = vals / maxval
    else:
        try:
            level = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        except ValueError:
            raise ValueError(f"{path}: non-numeric mask content") from None
        if np.any(level < 0) or np.any(level > 1):
            raise ValueError(f"{path}: delimited mask values must lie in [0, 1]")
    if level.shape != (n, n):
        if not resample:
            raise ValueError(f"{path}: mask is {level.shape[1]}x{level.shape[0]}, grid is {n}x{n} "
                             "(enable resample)")
        level = resample_nearest(level, n)
    phase = phase_min + (phase_max - phase_min) * level
    return PlateSpec(plane="image", passes_per_round_trip=passes, raster=phase)


def write_summary(path: Path, values: dict, header: str = "") -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        fh.write("[summary]\n")
        for k, v in values.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                v = " ".join(format_value(x) for x in v)
            fh.write(f"{k} = {format_value(v)}\n")


def write_error(path: Path, status: int, kind: str, message: str, **extra) -> None:
    rec = {"status": status, "error": kind, "message": message}
    rec.update({k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in extra.items()})
    Path(path).write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
