import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volmc import brdf
from volmc.acceptance import chi_square_directions, sphere_bins

Z = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _upper(rng, n):
    v = rng.normal(size=(n, 3))
    v[:, 2] = np.abs(v[:, 2]) + 1e-3
    return _unit(v)


def _scalar_oracle(m, r, a, wi, wo):
    """Per-channel scalar reimplementation of the GGX model with plain floats."""
    ci, co = wi[2], wo[2]
    hx, hy, hz = wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2]
    ln = math.sqrt(hx * hx + hy * hy + hz * hz)
    hx, hy, hz = hx / ln, hy / ln, hz / ln
    vh = wo[0] * hx + wo[1] * hy + wo[2] * hz
    alpha = r * r
    d = alpha**2 / (math.pi * (hz * hz * (alpha**2 - 1.0) + 1.0) ** 2)
    k = alpha / 2.0
    g = (ci / (ci * (1 - k) + k)) * (co / (co * (1 - k) + k))
    out = []
    for ac in a:
        f0 = 0.04 * (1 - m) + ac * m
        f = f0 + (1 - f0) * (1 - vh) ** 5
        out.append((1 - m) * ac / math.pi + d * f * g / (4 * ci * co))
    return out


def test_diffuse_example_at_normal_incidence():
    a = np.array([0.5, 0.5, 0.5])
    v = brdf.eval_brdf(0.0, 1.0, a, Z, Z, Z)
    fd, fs = brdf.brdf_parts(np.float64(0.0), 1.0, a, 1.0, 1.0, 1.0, 1.0)
    np.testing.assert_allclose(fd, 0.5 / math.pi)
    # D(alpha=1) = 1/pi, G = 1, F = 0.04 at normal incidence
    np.testing.assert_allclose(fs, 0.04 / math.pi / 4.0)
    np.testing.assert_allclose(v, fd + fs)


def test_matches_scalar_oracle(rng):
    wo = _unit([0.3, -0.2, 0.8])
    a = (0.9, 0.5, 0.2)
    for wi in _upper(rng, 200):
        got = brdf.eval_brdf(1.0, 0.3, np.array(a), Z, wi, wo)
        ref = _scalar_oracle(1.0, 0.3, a, wi, wo)
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=0)


def test_reciprocity_batch(rng):
    n = 10_000
    wi, wo = _upper(rng, n), _upper(rng, n)
    m, r = rng.uniform(0, 1, n), rng.uniform(0.05, 1, n)
    a = rng.uniform(0, 1, (n, 3))
    f1 = brdf.eval_brdf(m, r, a, Z, wi, wo)
    f2 = brdf.eval_brdf(m, r, a, Z, wo, wi)
    np.testing.assert_allclose(f1, f2, rtol=1e-6)


@given(
    st.floats(0, 1), st.floats(0.02, 1),
    st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1)),
    st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1)),
)
def test_reciprocity_and_positivity_property(m, r, wi, wo):
    wi, wo = _unit(wi), _unit(wo)
    a = np.array([0.3, 0.6, 0.9])
    f1 = brdf.eval_brdf(m, r, a, Z, wi, wo)
    f2 = brdf.eval_brdf(m, r, a, Z, wo, wi)
    assert np.all(np.isfinite(f1)) and np.all(f1 >= 0)
    np.testing.assert_allclose(f1, f2, rtol=1e-9)


def test_grazing_raises():
    with pytest.raises(brdf.GrazingAngleError):
        brdf.eval_brdf(0.0, 0.5, np.ones(3), Z, _unit([1, 0, 1e-8]), Z)
    with pytest.raises(brdf.GrazingAngleError):
        brdf.eval_brdf(0.0, 0.5, np.ones(3), Z, Z, _unit([1, 0, -0.1]))


def test_ndf_closed_forms():
    assert brdf.ndf_value(1.0, Z, Z) == pytest.approx(1 / math.pi)
    for r in (0.1, 0.5, 0.9):
        assert brdf.ndf_value(r, Z, np.array([1.0, 0, 0])) == pytest.approx(r**4 / math.pi)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0])
def test_ndf_normalization_stratified(r):
    # exact angular quadrature of D cos over the hemisphere via the substitution u = cos^2
    u = np.linspace(0.0, 1.0, 200_001)
    # d omega = 2 pi sin dtheta = pi du / cos, so D cos d omega = pi D du
    vals = math.pi * brdf.ndf(r, np.sqrt(u))
    assert np.trapezoid(vals, u) == pytest.approx(1.0, rel=1e-3)


def test_cosine_sampler(rng):
    n = 1_000_000
    w, pdf = brdf.sample_cosine(Z, rng.random(n), rng.random(n))
    assert np.all(w[:, 2] > 0)
    np.testing.assert_allclose(pdf, w[:, 2] / math.pi)
    assert abs(w[:, 2].mean() - 2 / 3) < 0.002
    p = chi_square_directions(w, lambda d: np.maximum(d[:, 2], 0) / math.pi)
    assert p > 0.01


def test_cosine_sampler_fixed_point():
    w, pdf = brdf.sample_cosine(Z, np.array([0.5]), np.array([0.5]))
    assert w[0, 2] == pytest.approx(math.sqrt(0.5))
    assert pdf[0] == pytest.approx(math.sqrt(0.5) / math.pi)


@pytest.mark.parametrize("r", [0.2, 0.6])
def test_ndf_half_vector_histogram(r, rng):
    n = 1_000_000
    h = brdf.sample_ndf_half(r, Z, rng.random(n), rng.random(n))
    # the cap above cos(theta) = z holds D-cos mass 1 - c(z), integrated in closed form
    a2 = r**4
    z = np.clip(sphere_bins()[0], 0.0, 1.0)
    cap = (1.0 - z**2) / (1.0 + (a2 - 1.0) * z**2)
    band = -np.diff(cap)
    mass = np.repeat(band[:, None] / 16, 16, axis=1)
    assert chi_square_directions(h, None, mass=mass) > 0.01


def test_ndf_sampled_direction_histogram(rng):
    r, n = 0.5, 1_000_000
    wo = _unit([0.4, 0.1, 0.9])
    wi, _, ok = brdf.sample_ndf(r, Z, wo, rng.random(n), rng.random(n))
    # rejected draws are kept as mass below the horizon; compare the accepted part only
    acc = wi[ok]
    mass = ok.mean()
    p = chi_square_directions(acc, lambda d: np.where(d[:, 2] > 0, brdf.ndf_pdf(r, Z, wo, d) / mass, 0.0))
    assert p > 0.01


def test_ndf_pdf_consistency_and_mirror_limit(rng):
    wo = _unit([0.2, -0.3, 0.9])
    wi, pdf, ok = brdf.sample_ndf(0.4, Z, wo, rng.random(1000), rng.random(1000))
    np.testing.assert_allclose(pdf[ok], brdf.ndf_pdf(0.4, Z, wo, wi[ok]), rtol=1e-9)
    wi, _, ok = brdf.sample_ndf(1e-4, Z, Z, rng.random(100), rng.random(100))
    assert ok.all()
    assert np.max(np.linalg.norm(wi - Z, axis=1)) < 1e-3


@pytest.mark.parametrize("lobe", [brdf.DIFFUSE, brdf.SPECULAR])
def test_combined_pdf_mass(lobe, rng):
    # integrate with uniform hemisphere samples; pdf / (1/2pi) averages to the hemispherical mass
    n = 1_000_000
    w, p_uni = brdf.sample_uniform_hemisphere(Z, rng.random(n), rng.random(n))
    wo = _unit([0.1, 0.3, 0.9])
    q = np.full(n, 1 / (4 * math.pi)) if lobe == brdf.DIFFUSE else None
    pdf = brdf.combined_pdf(Z, wo, w, lobe, r=0.7, q=q)
    assert np.all(pdf > 0)
    mass = np.mean(pdf / p_uni)
    if lobe == brdf.DIFFUSE:
        # half of a full-sphere vMF lies above the horizon
        expected = 0.99 * (0.5 * 0.5 + 0.5) + 0.01
        assert mass == pytest.approx(expected, rel=0.005)
    else:
        _, _, ok = brdf.sample_ndf(0.7, Z, wo, rng.random(n), rng.random(n))
        expected = 0.99 * ok.mean() + 0.01
        assert mass == pytest.approx(expected, rel=0.005)


def test_combined_pdf_at_normal():
    q = np.array([0.0])
    p = brdf.combined_pdf(Z, Z, Z[None], brdf.DIFFUSE, q=q, eps=0.0)
    assert p[0] == pytest.approx(1 / (2 * math.pi))


def test_diffuse_strategy_histogram_matches_pdf(rng):
    n = 1_000_000
    u = rng.random((n, 4))
    w, _ = brdf.sample_diffuse_strategy(Z, u)
    p = chi_square_directions(w, lambda d: brdf.diffuse_strategy_pdf(d[:, 2]))
    assert p > 0.01


def test_frame_orthonormal(rng):
    n = _unit(rng.normal(size=(1000, 3)))
    n[0] = [0, 0, -1.0]
    t, b = brdf.make_frame(n)
    for u, v in ((t, b), (t, n), (b, n)):
        np.testing.assert_allclose(np.sum(u * v, axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.cross(t, b), n, atol=1e-12)


def test_material_decode_in_range(rng):
    raw = rng.normal(scale=10, size=(2, 2, 2, 5))
    g = brdf.GridMaterial(raw)
    m, r, a = g.query(rng.uniform(-1.5, 1.5, (100, 3)))
    for v in (m, r, a):
        assert np.all((v >= 0) & (v <= 1))
    c = brdf.ConstantMaterial(0.3, 0.6, (0.2, 0.4, 0.8))
    back = brdf.ConstantMaterial.from_raw(c.raw())
    np.testing.assert_allclose([back.m, back.r, *back.a], [0.3, 0.6, 0.2, 0.4, 0.8], atol=1e-9)
    j = brdf.material_from_json(g.to_json())
    np.testing.assert_allclose(j.raw(), g.raw())
