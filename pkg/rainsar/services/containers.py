"""Binary containers for polar scans, geo rasters and checkpoints.

Layout (little-endian):
  64-byte header: magic (8s), version (H), flags (H), n_blocks (I),
                  json_len (Q), payload_len (Q), zero padding
  JSON metadata block (UTF-8)
  payload: raster containers start with six float64 geotransform terms,
           then float32 arrays in the order listed in the metadata.
"""

import hashlib
import json
import struct
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

from rainsar.errors import ContainerError
from rainsar.models import CompositeScan, GeoRaster, PolarScan

HEADER = struct.Struct("<8sHHIQQ32x")
VERSION = 1

SIGNATURES: dict[bytes, str] = {
    b"RSPOLAR\x00": "polar_scan",
    b"RSGEORS\x00": "geo_raster",
    b"RSCOMPS\x00": "composite_scan",
    b"RSCKPT\x00\x00": "checkpoint",
}
MAGIC = {kind: magic for magic, kind in SIGNATURES.items()}

EXTENSIONS: dict[str, str] = {
    "polar_scan": ".rspol",
    "geo_raster": ".rsgeo",
    "composite_scan": ".rscmp",
    "checkpoint": ".rsckpt",
}


def identify_container(data: bytes) -> str | None:
    """Container kind from the magic bytes, or None for foreign data."""
    head = data[:8]
    return SIGNATURES.get(head)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def pack(kind: str, meta: dict[str, Any], payload: bytes, n_blocks: int = 0) -> bytes:
    body = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = HEADER.pack(MAGIC[kind], VERSION, 0, n_blocks, len(body), len(payload))
    return header + body + payload


def unpack(data: bytes, expected: str | None = None) -> tuple[str, dict[str, Any], memoryview]:
    if len(data) < HEADER.size:
        raise ContainerError(f"Container truncated: {len(data)} bytes < header size {HEADER.size}")
    magic, version, _flags, _n_blocks, json_len, payload_len = HEADER.unpack_from(data)
    kind = SIGNATURES.get(magic)
    if kind is None:
        raise ContainerError(f"Unknown container magic {magic!r}")
    if expected is not None and kind != expected:
        raise ContainerError(f"Expected a {expected} container, found {kind}")
    if version != VERSION:
        raise ContainerError(f"Unsupported container version {version}")
    end = HEADER.size + json_len + payload_len
    if len(data) < end:
        raise ContainerError(f"Container truncated: {len(data)} bytes < declared {end}")
    meta = json.loads(bytes(data[HEADER.size : HEADER.size + json_len]).decode("utf-8"))
    payload = memoryview(data)[HEADER.size + json_len : end]
    return kind, meta, payload


def _f32(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def _read_f32(payload: memoryview, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    n = int(np.prod(shape))
    arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
    return arr.astype(np.float32), offset + 4 * n


# --- Polar scans ---
def encode_polar_scan(scan: PolarScan) -> bytes:
    meta = {
        "station_id": scan.station_id,
        "station_lat": scan.station_lat,
        "station_lon": scan.station_lon,
        "elevation_angle": scan.elevation_angle,
        "timestamp": scan.timestamp.isoformat(),
        "azimuth_bins": scan.n_azimuth,
        "range_gates": scan.n_range,
        "azimuth_width_deg": scan.azimuth_width_deg,
        "gate_spacing_m": scan.gate_spacing_m,
    }
    return pack("polar_scan", meta, _f32(scan.rates), n_blocks=1)


def decode_polar_scan(data: bytes) -> PolarScan:
    _, meta, payload = unpack(data, "polar_scan")
    rates, _ = _read_f32(payload, 0, (meta["azimuth_bins"], meta["range_gates"]))
    return PolarScan(
        station_id=meta.get("station_id", ""),
        station_lat=meta["station_lat"],
        station_lon=meta["station_lon"],
        elevation_angle=meta["elevation_angle"],
        timestamp=datetime.fromisoformat(meta["timestamp"]),
        rates=rates.astype(np.float64),
        azimuth_width_deg=meta["azimuth_width_deg"],
        gate_spacing_m=meta["gate_spacing_m"],
    )


# --- Geo rasters ---
def encode_geo_raster(raster: GeoRaster) -> bytes:
    names = list(raster.channels)
    kind = "composite_scan" if isinstance(raster, CompositeScan) else "geo_raster"
    meta: dict[str, Any] = {
        "rows": raster.rows,
        "cols": raster.cols,
        "resolution_m": raster.resolution_m,
        "timestamp": raster.timestamp.isoformat(),
        "channels": names,
        "metadata": raster.metadata,
    }
    if isinstance(raster, CompositeScan):
        meta["cadence_minutes"] = raster.cadence_minutes
    payload = struct.pack("<6d", *raster.geotransform) + b"".join(_f32(raster.channels[n]) for n in names)
    return pack(kind, meta, payload, n_blocks=len(names))


def decode_geo_raster(data: bytes) -> GeoRaster:
    kind, meta, payload = unpack(data)
    if kind not in ("geo_raster", "composite_scan"):
        raise ContainerError(f"Expected a raster container, found {kind}")
    geotransform = struct.unpack_from("<6d", payload, 0)
    shape = (meta["rows"], meta["cols"])
    offset = 48
    channels: dict[str, np.ndarray] = {}
    for name in meta["channels"]:
        channels[name], offset = _read_f32(payload, offset, shape)
    fields = dict(
        resolution_m=meta["resolution_m"],
        geotransform=tuple(geotransform),
        channels=channels,
        timestamp=datetime.fromisoformat(meta["timestamp"]),
        metadata=meta.get("metadata", {}),
    )
    if kind == "composite_scan":
        return CompositeScan(cadence_minutes=meta.get("cadence_minutes", 15), **fields)
    return GeoRaster(**fields)


# --- Checkpoints ---
def encode_checkpoint(meta: dict[str, Any], blocks: dict[str, np.ndarray]) -> bytes:
    """Named float32 blocks; shapes and order are recorded in the metadata."""
    names = list(blocks)
    meta = dict(meta)
    meta["blocks"] = [{"name": n, "shape": list(blocks[n].shape)} for n in names]
    payload = b"".join(_f32(blocks[n]) for n in names)
    return pack("checkpoint", meta, payload, n_blocks=len(names))


def decode_checkpoint(data: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    _, meta, payload = unpack(data, "checkpoint")
    offset = 0
    blocks: dict[str, np.ndarray] = {}
    for entry in meta["blocks"]:
        blocks[entry["name"]], offset = _read_f32(payload, offset, tuple(entry["shape"]))
    return meta, blocks


# --- File helpers ---
def write_container(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def read_polar_scan(path: str | Path) -> PolarScan:
    return decode_polar_scan(Path(path).read_bytes())


def read_geo_raster(path: str | Path) -> GeoRaster:
    return decode_geo_raster(Path(path).read_bytes())


def write_polar_scan(path: str | Path, scan: PolarScan) -> Path:
    return write_container(path, encode_polar_scan(scan))


def write_geo_raster(path: str | Path, raster: GeoRaster) -> Path:
    return write_container(path, encode_geo_raster(raster))


def list_containers(directory: str | Path, kind: str) -> list[Path]:
    """Containers of one kind in a directory, sorted by name; foreign files are skipped."""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    out = []
    for p in sorted(directory.iterdir()):
        if not p.is_file():
            continue
        with open(p, "rb") as f:
            if identify_container(f.read(8)) == kind:
                out.append(p)
    return out
