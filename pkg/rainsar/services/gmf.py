"""Geophysical model functions and sea-surface-roughness normalization.

Inputs
  - wind speed in m/s (>= 0)
  - wind direction relative to the antenna look in degrees (any real;
    folded onto [0, 180] since the GMFs are even in direction)
  - incidence in degrees, within the coefficient file's validity range
All arithmetic is float64.
"""

import hashlib
import json
from functools import lru_cache
from pathlib import Path

import numpy as np
import structlog

from rainsar.config import DATA_DIR
from rainsar.errors import ChecksumMismatch, IncidenceOutOfRange, InvalidGmfInput
from rainsar.models import GeoRaster, GmfCoefficients, GmfInput, SsrPair

log = structlog.get_logger(__name__)

DEFAULT_VV_FILE = DATA_DIR / "gmf" / "cmod5n.json"
DEFAULT_VH_FILE = DATA_DIR / "gmf" / "cmod2pol_default.json"

REFERENCE_WIND_SPEED = 10.0
REFERENCE_DIRECTION = 45.0

# CMOD5.N structural constants
_THETM = 40.0
_THETHR = 25.0
_ZPOW = 1.6


def coefficients_checksum(coefficients: list[float]) -> str:
    """SHA-256 of the compact JSON encoding of the coefficient array."""
    payload = json.dumps([float(c) for c in coefficients], separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_gmf(path: str | Path) -> GmfCoefficients:
    """Load a coefficient file and verify its checksum."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        gmf = GmfCoefficients.model_validate(json.load(f))
    digest = coefficients_checksum(gmf.coefficients)
    if digest != gmf.sha256:
        raise ChecksumMismatch(f"{path.name}: coefficient checksum {digest} != recorded {gmf.sha256}")
    log.debug("gmf_loaded", name=gmf.name, version=gmf.version, path=str(path))
    return gmf


@lru_cache(maxsize=8)
def _cached_gmf(path: str) -> GmfCoefficients:
    return load_gmf(path)


def default_vv() -> GmfCoefficients:
    return _cached_gmf(str(DEFAULT_VV_FILE))


def default_vh() -> GmfCoefficients:
    return _cached_gmf(str(DEFAULT_VH_FILE))


def _check_incidence(incidence: np.ndarray, gmf: GmfCoefficients) -> None:
    lo, hi = gmf.valid_incidence_deg
    bad = ~((incidence >= lo) & (incidence <= hi))
    if np.any(bad):
        raise IncidenceOutOfRange(incidence[bad].flat[0] if incidence.ndim else float(incidence), (lo, hi))


def _fold_direction(phi: np.ndarray) -> np.ndarray:
    """Map any direction onto [0, 180] so that phi and 360 - phi hit the same cosine argument."""
    phi = np.mod(phi, 360.0)
    return np.where(phi > 180.0, 360.0 - phi, phi)


def cmod5n(
    wind_speed: np.ndarray | float,
    wind_direction_rel: np.ndarray | float,
    incidence: np.ndarray | float,
    gmf: GmfCoefficients | None = None,
) -> np.ndarray | float:
    """Linear VV backscatter from the 28-coefficient CMOD5.N form (broadcasting)."""
    gmf = gmf or default_vv()
    scalar = np.ndim(wind_speed) == 0 and np.ndim(wind_direction_rel) == 0 and np.ndim(incidence) == 0
    v = np.asarray(wind_speed, dtype=np.float64)
    phi = np.asarray(wind_direction_rel, dtype=np.float64)
    theta = np.asarray(incidence, dtype=np.float64)
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InvalidGmfInput("wind_speed must be finite and non-negative")
    if not np.all(np.isfinite(phi)):
        raise InvalidGmfInput("wind_direction_rel must be finite")
    _check_incidence(theta, gmf)
    v, phi, theta = np.broadcast_arrays(v, _fold_direction(phi), theta)

    c = [0.0, *gmf.coefficients]  # c[1]..c[28] as published
    y0 = c[19]
    pn = c[20]
    a = c[19] - (c[19] - 1.0) / c[20]
    b = 1.0 / (c[20] * (c[19] - 1.0) ** (pn - 1.0))

    csfi = np.cos(np.radians(phi))
    cs2fi = 2.0 * csfi * csfi - 1.0

    x = (theta - _THETM) / _THETHR
    xx = x * x

    a0 = c[1] + c[2] * x + c[3] * xx + c[4] * x * xx
    a1 = c[5] + c[6] * x
    a2 = c[7] + c[8] * x
    gam = c[9] + c[10] * x + c[11] * xx
    s0 = c[12] + c[13] * x

    s = a2 * v
    s_eff = np.maximum(s, s0)
    a3 = 1.0 / (1.0 + np.exp(-s_eff))
    low = s < s0
    a3 = np.where(low, a3 * (s / s0) ** (s0 * (1.0 - a3)), a3)
    b0 = a3**gam * 10.0 ** (a0 + a1 * v)

    b1 = c[15] * v * (0.5 + x - np.tanh(4.0 * (x + c[16] + c[17] * v)))
    b1 = c[14] * (1.0 + x) - b1
    b1 = b1 / (np.exp(0.34 * (v - c[18])) + 1.0)

    v0 = c[21] + c[22] * x + c[23] * xx
    d1 = c[24] + c[25] * x + c[26] * xx
    d2 = c[27] + c[28] * x

    v2 = v / v0 + 1.0
    v2 = np.where(v2 < y0, a + b * np.maximum(v2 - 1.0, 0.0) ** pn, v2)
    b2 = (-d1 + d2 * v2) * np.exp(-v2)

    sigma0 = b0 * (1.0 + b1 * csfi + b2 * cs2fi) ** _ZPOW
    return float(sigma0) if scalar else sigma0


def cmod5n_input(g: GmfInput, gmf: GmfCoefficients | None = None) -> float:
    return cmod5n(g.wind_speed, g.wind_direction_rel, g.incidence, gmf)


def cmod2pol(incidence: np.ndarray | float, gmf: GmfCoefficients | None = None) -> np.ndarray | float:
    """Linear VH reference backscatter from an incidence-only coefficient file."""
    gmf = gmf or default_vh()
    scalar = np.ndim(incidence) == 0
    theta = np.asarray(incidence, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InvalidGmfInput("incidence must be finite")
    _check_incidence(theta, gmf)
    c0, c1 = gmf.coefficients
    sigma0 = 10.0 ** ((c0 + c1 * theta) / 10.0)
    return float(sigma0) if scalar else sigma0


def normalize(
    sigma0_vv: np.ndarray | float,
    sigma0_vh: np.ndarray | float,
    incidence: np.ndarray | float,
    vv_gmf: GmfCoefficients | None = None,
    vh_gmf: GmfCoefficients | None = None,
) -> SsrPair:
    """Sea-surface roughness: backscatter over the 10 m/s, 45 deg reference response."""
    vv = np.asarray(sigma0_vv, dtype=np.float64)
    vh = np.asarray(sigma0_vh, dtype=np.float64)
    if np.any(vv < 0) or np.any(vh < 0):
        raise InvalidGmfInput("sigma0 values must be >= 0")
    ref_vv = cmod5n(REFERENCE_WIND_SPEED, REFERENCE_DIRECTION, incidence, vv_gmf)
    ref_vh = cmod2pol(incidence, vh_gmf)
    ssr_vv = vv / ref_vv
    ssr_vh = vh / ref_vh
    if np.ndim(ssr_vv) == 0 and np.ndim(ssr_vh) == 0:
        return SsrPair(ssr_vv=float(ssr_vv), ssr_vh=float(ssr_vh))
    return SsrPair(ssr_vv=ssr_vv, ssr_vh=ssr_vh)


def normalize_raster(
    raster: GeoRaster,
    vv_gmf: GmfCoefficients | None = None,
    vh_gmf: GmfCoefficients | None = None,
) -> GeoRaster:
    """Add ssr_vv/ssr_vh channels computed from sigma0_vv/sigma0_vh and incidence.

    Land pixels and NaN backscatter are written as NaN-free zeros so that
    downstream masks stay the single source of validity.
    """
    vv = np.nan_to_num(raster.channel("sigma0_vv").astype(np.float64), nan=0.0)
    vh = np.nan_to_num(raster.channel("sigma0_vh").astype(np.float64), nan=0.0)
    theta = raster.channel("incidence").astype(np.float64)
    pair = normalize(np.maximum(vv, 0.0), np.maximum(vh, 0.0), theta, vv_gmf, vh_gmf)
    channels = dict(raster.channels)
    channels["ssr_vv"] = np.asarray(pair.ssr_vv, dtype=np.float32)
    channels["ssr_vh"] = np.asarray(pair.ssr_vh, dtype=np.float32)
    return raster.model_copy(update={"channels": channels})
