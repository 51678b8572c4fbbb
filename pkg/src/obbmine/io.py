"""On-disk formats: PGM rasters, JSON sidecars, CSV logs.

Every writer is deterministic — fixed key order, shortest-roundtrip float
repr, ``\\n`` line endings — so identical inputs produce byte-identical
files. Readers raise :class:`DataError` with a single-line message naming
the offending file and field.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

_PGM_COMMENT = b"# synthetic scene raster"


# ---------------------------------------------------------------------- JSON


def dumps_canonical(obj) -> str:
    """Serialize with sorted keys and minimal separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def save_json(path, obj) -> None:
    Path(path).write_text(dumps_canonical(obj), encoding="utf-8")


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}") from exc


def require_field(blob: dict, field: str, path) -> object:
    """Fetch a mandatory key from a parsed JSON object or die loudly."""
    if not isinstance(blob, dict) or field not in blob:
        raise DataError(f"{path}: missing field '{field}'")
    return blob[field]


# ----------------------------------------------------------------------- PGM


def write_pgm(path, image: np.ndarray) -> None:
    """Write a grayscale raster as binary PGM (P5, maxval 255)."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = image.shape
    header = b"P5\n" + _PGM_COMMENT + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            eol = raw.find(b"\n", pos)
            pos = len(raw) if eol < 0 else eol + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: non-numeric PGM header field") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported PGM maxval {maxval} (want 255)")
    if w <= 0 or h <= 0:
        raise DataError(f"{path}: invalid PGM dimensions {w}x{h}")
    pos += 1  # the single whitespace byte separating header from pixel data
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


# ------------------------------------------------------------- proposal files


def save_proposals(path, image_id: str, proposals) -> None:
    """Write one scene's pre-NMS proposals ({image_id, proposals:[...]})."""
    save_json(path, {
        "image_id": image_id,
        "proposals": [
            {"cx": p.box.cx, "cy": p.box.cy, "w": p.box.w, "h": p.box.h,
             "theta": p.box.theta, "scores": [float(s) for s in p.scores]}
            for p in proposals
        ],
    })


def load_proposals(path):
    """Read a proposal file back as (image_id, list of Proposal)."""
    from .geometry import RotatedBox
    from .mining import Proposal

    blob = load_json(path)
    image_id = require_field(blob, "image_id", path)
    if not isinstance(image_id, str):
        raise DataError(f"{path}: field 'image_id' must be a string")
    raw = require_field(blob, "proposals", path)
    if not isinstance(raw, list):
        raise DataError(f"{path}: field 'proposals' must be a list")
    proposals = []
    for idx, pb in enumerate(raw):
        where = f"{path}: proposals[{idx}]"
        vals = []
        for key in ("cx", "cy", "w", "h", "theta"):
            if not isinstance(pb, dict) or key not in pb:
                raise DataError(f"{where}: missing field '{key}'")
            if not isinstance(pb[key], (int, float)):
                raise DataError(f"{where}: field '{key}' must be numeric")
            vals.append(float(pb[key]))
        scores = pb.get("scores")
        if not isinstance(scores, list) or not scores:
            raise DataError(f"{where}: field 'scores' must be a non-empty list")
        try:
            proposals.append(Proposal(RotatedBox(*vals), np.asarray(scores)))
        except Exception as exc:
            raise DataError(f"{where}: {exc}") from exc
    return image_id, proposals


# ----------------------------------------------------------------------- CSV

METRICS_HEADER = "epoch,category,AP,precision,recall,frozen_count,box_ratio"
LOSS_HEADER = "epoch,loss"
HISTOGRAM_HEADER = "category,bin_lo,bin_hi,count,mu,sigma"


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv(path, header: str, rows) -> None:
    lines = [header]
    width = len(header.split(","))
    for row in rows:
        if len(row) != width:
            raise ValueError(f"CSV row has {len(row)} fields, header has {width}")
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path, header: str) -> list[list[str]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if not lines or lines[0] != header:
        raise DataError(f"{path}: expected header '{header}'")
    width = len(header.split(","))
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != width:
            raise DataError(f"{path}: line {n} has {len(fields)} fields, want {width}")
        rows.append(fields)
    return rows
