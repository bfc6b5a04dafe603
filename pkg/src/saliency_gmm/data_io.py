"""
File formats: fixation points (CSV/JSON), maps (PGM/F64RAW), GMM parameter
files (JSON) and TinyPredictor checkpoints.
"""

import json
import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from .core import (
    BoundsError,
    FixationPoints,
    FormatError,
    GmmParams,
    IoError,
    ParseError,
    SaliencyMap,
    validate_gmm,
)
from .trainer import TinyPredictor
from .utils import FileUtils

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAP_MAGIC = b"SGMMMAPS"
CHECKPOINT_MAGIC = b"SGMMCKPT"
CHECKPOINT_VERSION = 1
GMM_FILE_VERSION = 1
PGM_MAXVAL = 65535


class MapFormat(str, Enum):
    PGM = "pgm"
    F64RAW = "f64raw"


def map_format_for(path: PathLike) -> MapFormat:
    """PGM for .pgm files, F64RAW otherwise"""
    return MapFormat.PGM if Path(path).suffix.lower() == ".pgm" else MapFormat.F64RAW


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        logger.error(f"Error reading {path}: {e}")
        raise IoError(f"cannot read {path}: {e}") from e


def _write_bytes(path: Path, payload: bytes) -> None:
    try:
        FileUtils.ensure_directory(path.parent)
        path.write_bytes(payload)
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise IoError(f"cannot write {path}: {e}") from e


# Fixation points

def _parse_pair(text: str, line: int):
    parts = [part.strip() for part in text.split(",")]
    if len(parts) != 2:
        raise ParseError(line, f"expected two comma-separated values, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ParseError(line, f"not a number pair: {text!r}")


def _check_point(u: float, v: float, width: int, height: int, line: int) -> None:
    if not (np.isfinite(u) and np.isfinite(v)):
        raise ParseError(line, "coordinates must be finite")
    if not (0 <= u < width and 0 <= v < height):
        raise BoundsError(line, f"point ({u:g}, {v:g}) outside the {width}x{height} canvas")


def _load_points_csv(text: str) -> FixationPoints:
    canvas = None
    points = []
    for line, raw in enumerate(text.splitlines(), start=1):
        content = raw.strip()
        if not content:
            continue
        if content.startswith("#"):
            if canvas is None:
                width, height = _parse_pair(content[1:], line)
                if width != int(width) or height != int(height) or width < 1 or height < 1:
                    raise ParseError(line, "canvas size must be positive integers")
                canvas = (int(width), int(height))
            continue
        if canvas is None:
            raise ParseError(line, "missing '# width,height' header")
        u, v = _parse_pair(content, line)
        _check_point(u, v, canvas[0], canvas[1], line)
        points.append((u, v))
    if canvas is None:
        raise ParseError(1, "missing '# width,height' header")
    return FixationPoints(points=np.array(points).reshape(-1, 2), canvas_width=canvas[0], canvas_height=canvas[1])


def _load_points_json(text: str) -> FixationPoints:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg)
    try:
        width, height = int(document["width"]), int(document["height"])
        pairs = [(float(u), float(v)) for u, v in document["points"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(1, f"expected fields points/width/height: {e}")
    # entries are counted from 1 in place of line numbers
    for index, (u, v) in enumerate(pairs, start=1):
        _check_point(u, v, width, height, index)
    return FixationPoints(points=np.array(pairs).reshape(-1, 2), canvas_width=width, canvas_height=height)


def load_fixation_points(path: PathLike) -> FixationPoints:
    """Read fixations from a CSV ('# width,height' header, then 'u,v' rows) or JSON file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    points = _load_points_json(text) if path.suffix.lower() == ".json" else _load_points_csv(text)
    logger.debug(f"Loaded {len(points)} fixations from {path}")
    return points


def save_fixation_points(points: FixationPoints, path: PathLike) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        document = {
            "width": points.canvas_width,
            "height": points.canvas_height,
            "points": points.points.tolist(),
        }
        FileUtils.save_json(document, path)
        return
    lines = [f"# {points.canvas_width},{points.canvas_height}"]
    lines.extend(f"{u!r},{v!r}" for u, v in points.points.tolist())
    _write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


# Maps

def _encode_pgm(saliency: SaliencyMap) -> bytes:
    values = saliency.values
    peak = values.max()
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    pixels = np.rint(scaled * PGM_MAXVAL).astype(">u2")
    header = f"P5\n{saliency.width} {saliency.height}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + pixels.tobytes()


def _pgm_tokens(payload: bytes, count: int):
    """First `count` header tokens and the offset of the pixel data"""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(payload) and payload[pos:pos + 1].isspace():
            pos += 1
        if payload[pos:pos + 1] == b"#":
            while pos < len(payload) and payload[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(payload) and not payload[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(payload[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _decode_pgm(payload: bytes) -> SaliencyMap:
    tokens, offset = _pgm_tokens(payload, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"unsupported PGM magic {tokens[0]!r}")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PGM header")
    if width < 1 or height < 1 or not 0 < maxval <= PGM_MAXVAL:
        raise FormatError(f"invalid PGM header {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = payload[offset:offset + expected]
    if len(raster) != expected:
        raise FormatError(f"PGM raster holds {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return SaliencyMap(values=pixels.astype(np.float64) / maxval)


def _encode_f64raw(saliency: SaliencyMap) -> bytes:
    header = MAP_MAGIC + struct.pack("<II", saliency.width, saliency.height)
    return header + saliency.values.astype("<f8").tobytes()


def _decode_f64raw(payload: bytes) -> SaliencyMap:
    header_size = len(MAP_MAGIC) + 8
    if payload[:len(MAP_MAGIC)] != MAP_MAGIC or len(payload) < header_size:
        raise FormatError("missing SGMMMAPS header")
    width, height = struct.unpack("<II", payload[len(MAP_MAGIC):header_size])
    expected = width * height * 8
    if width < 1 or height < 1 or len(payload) - header_size != expected:
        raise FormatError(f"F64RAW body holds {len(payload) - header_size} bytes, expected {expected}")
    values = np.frombuffer(payload[header_size:], dtype="<f8").reshape(height, width)
    try:
        return SaliencyMap(values=values)
    except ValidationError as e:
        raise FormatError(f"invalid map values: {e.errors()[0]['msg']}") from e


def save_map(saliency: SaliencyMap, path: PathLike, fmt: Optional[MapFormat] = None) -> None:
    path = Path(path)
    fmt = MapFormat(fmt) if fmt is not None else map_format_for(path)
    payload = _encode_pgm(saliency) if fmt == MapFormat.PGM else _encode_f64raw(saliency)
    _write_bytes(path, payload)
    logger.debug(f"Saved {saliency.width}x{saliency.height} map to {path} ({fmt.value})")


def load_map(path: PathLike, fmt: Optional[MapFormat] = None) -> SaliencyMap:
    path = Path(path)
    fmt = MapFormat(fmt) if fmt is not None else map_format_for(path)
    payload = _read_bytes(path)
    return _decode_pgm(payload) if fmt == MapFormat.PGM else _decode_f64raw(payload)


# GMM parameter files

def gmm_to_document(gmm: GmmParams) -> dict:
    return {
        "version": GMM_FILE_VERSION,
        "canvas_width": gmm.canvas_width,
        "canvas_height": gmm.canvas_height,
        "components": [
            {"weight": comp.weight, "mean": list(comp.mean), "cov": list(comp.cov)}
            for comp in gmm.components
        ],
    }


def gmm_from_document(document: dict) -> GmmParams:
    version = document.get("version") if isinstance(document, dict) else None
    if version is None:
        raise FormatError("GMM file has no version field")
    if version != GMM_FILE_VERSION:
        raise FormatError(f"unsupported GMM file version {version}")
    try:
        gmm = GmmParams(
            components=document["components"],
            canvas_width=document["canvas_width"],
            canvas_height=document["canvas_height"],
        )
    except (KeyError, ValidationError) as e:
        raise FormatError(f"malformed GMM file: {e}") from e
    violations = validate_gmm(gmm)
    if violations:
        raise FormatError("invalid GMM: " + "; ".join(violations))
    return gmm


def save_gmm(gmm: GmmParams, path: PathLike) -> None:
    FileUtils.save_json(gmm_to_document(gmm), Path(path))


def load_gmm(path: PathLike) -> GmmParams:
    path = Path(path)
    try:
        document = FileUtils.load_json(path)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not valid JSON: {e}") from e
    return gmm_from_document(document)


# Checkpoints

def save_checkpoint(predictor: TinyPredictor, path: PathLike) -> None:
    """Magic, u32 version, then every weight as little-endian float64"""
    payload = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    _write_bytes(Path(path), payload + predictor.parameters().astype("<f8").tobytes())


def load_checkpoint(path: PathLike) -> TinyPredictor:
    payload = _read_bytes(Path(path))
    header_size = len(CHECKPOINT_MAGIC) + 4
    if len(payload) < header_size or payload[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError("missing SGMMCKPT header")
    (version,) = struct.unpack("<I", payload[len(CHECKPOINT_MAGIC):header_size])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    body = payload[header_size:]
    if len(body) != TinyPredictor.N_PARAMS * 8:
        raise FormatError(f"checkpoint holds {len(body)} weight bytes, expected {TinyPredictor.N_PARAMS * 8}")
    return TinyPredictor.from_parameters(np.frombuffer(body, dtype="<f8"))
