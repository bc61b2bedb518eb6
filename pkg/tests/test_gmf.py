"""Tests for GMF evaluation and SSR normalization."""

import json
import math

import numpy as np
import pytest

from rainsar.errors import ChecksumMismatch, IncidenceOutOfRange, InvalidGmfInput
from rainsar.models import GmfInput
from rainsar.services.gmf import (
    DEFAULT_VV_FILE,
    cmod2pol,
    cmod5n,
    cmod5n_input,
    coefficients_checksum,
    load_gmf,
    normalize,
)

PUBLISHED = [
    0.0, -0.6878, -0.7957, 0.3380, -0.1728, 0.0000, 0.0040, 0.1103, 0.0159, 6.7329, 2.7713,
    -2.2885, 0.4971, -0.7250, 0.0450, 0.0066, 0.3222, 0.0120, 22.7000, 2.0813, 3.0000,
    8.3659, -3.3428, 1.3236, 6.2437, 2.3893, 0.3249, 4.1590, 1.6930,
]

# worked by hand from the published coefficients; at 45 degrees the cos(2 phi) term vanishes
CMOD5N_10MS_45DEG_35DEG = 0.05376709


def cmod5n_scalar(v, phi, theta):
    """Independent scalar transcription of the published CMOD5.N formula."""
    c = PUBLISHED
    y0, pn = c[19], c[20]
    a = c[19] - (c[19] - 1) / c[20]
    b = 1.0 / (c[20] * (c[19] - 1) ** (pn - 1))
    csfi = math.cos(math.radians(phi))
    cs2fi = 2 * csfi * csfi - 1
    x = (theta - 40.0) / 25.0
    xx = x * x
    a0 = c[1] + c[2] * x + c[3] * xx + c[4] * x * xx
    a1 = c[5] + c[6] * x
    a2 = c[7] + c[8] * x
    gam = c[9] + c[10] * x + c[11] * xx
    s0 = c[12] + c[13] * x
    s = a2 * v
    if s < s0:
        a3 = 1.0 / (1.0 + math.exp(-s0))
        a3 = a3 * (s / s0) ** (s0 * (1.0 - a3))
    else:
        a3 = 1.0 / (1.0 + math.exp(-s))
    b0 = a3**gam * 10.0 ** (a0 + a1 * v)
    b1 = c[15] * v * (0.5 + x - math.tanh(4 * (x + c[16] + c[17] * v)))
    b1 = (c[14] * (1 + x) - b1) / (math.exp(0.34 * (v - c[18])) + 1)
    v0 = c[21] + c[22] * x + c[23] * xx
    d1 = c[24] + c[25] * x + c[26] * xx
    d2 = c[27] + c[28] * x
    v2 = v / v0 + 1
    if v2 < y0:
        v2 = a + b * (v2 - 1) ** pn
    b2 = (-d1 + d2 * v2) * math.exp(-v2)
    return b0 * (1 + b1 * csfi + b2 * cs2fi) ** 1.6


def test_cmod5n_matches_scalar_transcription():
    rng = np.random.default_rng(0)
    v = rng.uniform(0.5, 30.0, 1000)
    phi = rng.uniform(0.0, 360.0, 1000)
    theta = rng.uniform(16.0, 50.0, 1000)
    got = cmod5n(v, phi, theta)
    want = np.array([cmod5n_scalar(*args) for args in zip(v, phi, theta)])
    assert np.max(np.abs(got - want) / np.abs(want)) < 1e-10


def test_cmod5n_scalar_and_model_input():
    value = cmod5n(10.0, 45.0, 35.0)
    assert isinstance(value, float)
    assert value == pytest.approx(cmod5n_scalar(10.0, 45.0, 35.0), rel=1e-12)
    assert cmod5n_input(GmfInput(wind_speed=10.0, wind_direction_rel=45.0, incidence=35.0)) == value


def test_cmod5n_golden_value():
    assert cmod5n(10.0, 45.0, 35.0) == pytest.approx(CMOD5N_10MS_45DEG_35DEG, rel=1e-6)


@pytest.mark.parametrize("theta", [16.0, 50.0])
def test_cmod5n_incidence_endpoints_are_valid(theta):
    value = cmod5n(10.0, 0.0, theta)
    assert value > 0
    assert value == pytest.approx(cmod5n_scalar(10.0, 0.0, theta), rel=1e-12)
    want = [cmod5n_scalar(v, 90.0, theta) for v in (5.0, 15.0)]
    np.testing.assert_allclose(cmod5n(np.array([5.0, 15.0]), 90.0, theta), want)


@pytest.mark.parametrize("theta", [15.999, 50.001])
def test_cmod5n_rejects_incidence_just_outside(theta):
    with pytest.raises(IncidenceOutOfRange):
        cmod5n(10.0, 0.0, theta)


def test_cmod5n_direction_is_symmetric():
    for phi in (0, 30, 90, 135, 180):
        assert cmod5n(8.0, phi, 30.0) == cmod5n(8.0, 360 - phi, 30.0)
    assert cmod5n(8.0, -30.0, 30.0) == cmod5n(8.0, 30.0, 30.0)


def test_cmod5n_increases_with_wind_upwind():
    values = cmod5n(np.arange(2.0, 20.0, 1.0), 0.0, 35.0)
    assert np.all(np.diff(values) > 0)


def test_cmod5n_rejects_bad_inputs():
    with pytest.raises(IncidenceOutOfRange):
        cmod5n(10.0, 0.0, 60.0)
    with pytest.raises(InvalidGmfInput):
        cmod5n(-1.0, 0.0, 30.0)
    with pytest.raises(InvalidGmfInput):
        cmod5n(np.nan, 0.0, 30.0)
    with pytest.raises(ValueError):
        GmfInput(wind_speed=-2.0, incidence=30.0)


def test_cmod2pol_affine_in_db():
    db = 10 * np.log10(cmod2pol(np.array([20.0, 30.0, 40.0])))
    np.testing.assert_allclose(db, [-23.5, -24.5, -25.5], atol=1e-12)
    with pytest.raises(IncidenceOutOfRange):
        cmod2pol(10.0)


def test_normalize_reference_response_is_unity():
    theta = np.linspace(20.0, 45.0, 26)
    pair = normalize(cmod5n(10.0, 45.0, theta), cmod2pol(theta), theta)
    np.testing.assert_array_equal(pair.ssr_vv, np.ones_like(theta))
    np.testing.assert_array_equal(pair.ssr_vh, np.ones_like(theta))


def test_normalize_is_homogeneous():
    theta = np.array([25.0, 33.0, 41.0])
    vv = np.array([0.05, 0.1, 0.2])
    vh = np.array([0.001, 0.002, 0.004])
    base = normalize(vv, vh, theta)
    scaled = normalize(4.0 * vv, 4.0 * vh, theta)
    np.testing.assert_array_equal(scaled.ssr_vv, 4.0 * base.ssr_vv)
    np.testing.assert_array_equal(scaled.ssr_vh, 4.0 * base.ssr_vh)


def test_normalize_zero_and_negative_backscatter():
    pair = normalize(0.0, 0.0, 30.0)
    assert pair.ssr_vv == 0.0
    assert pair.ssr_vh == 0.0
    with pytest.raises(InvalidGmfInput):
        normalize(-0.1, 0.0, 30.0)


def test_load_gmf_verifies_checksum(tmp_path):
    data = json.loads(DEFAULT_VV_FILE.read_text())
    assert load_gmf(DEFAULT_VV_FILE).sha256 == coefficients_checksum(data["coefficients"])

    data["coefficients"][0] += 0.001
    tampered = tmp_path / "cmod5n.json"
    tampered.write_text(json.dumps(data))
    with pytest.raises(ChecksumMismatch):
        load_gmf(tampered)
