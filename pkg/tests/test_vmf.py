import math

import numpy as np
import pytest

from volmc import autodiff as ad
from volmc import presets, vmf
from volmc.acceptance import cap_strata_integral, chi_square_directions

Z = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_pdf_closed_forms():
    assert vmf.vmf_pdf(Z, 0.0, _unit([1, 2, 3])) == pytest.approx(1 / (4 * math.pi))
    assert vmf.vmf_pdf(Z, 50.0, Z) == pytest.approx(50 / (2 * math.pi * (1 - math.exp(-100))))
    # huge kappa stays finite away from the mean
    v = vmf.vmf_pdf(Z, 1e4, -Z)
    assert np.isfinite(v) and v == 0.0


@pytest.mark.parametrize("kappa", [0.1, 5.0, 500.0])
def test_pdf_normalized(kappa, rng):
    edges = np.array([0.0, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 2.0])
    total = cap_strata_integral(lambda w: vmf.vmf_pdf(Z, kappa, w), Z, edges, 200_000, rng)
    assert total == pytest.approx(1.0, rel=0.005)


def test_uniform_and_concentrated_sampling(rng):
    n = 1_000_000
    w = vmf.sample_vmf(Z, 0.0, rng.random(n), rng.random(n))
    assert np.linalg.norm(w.mean(axis=0)) < 0.01
    mu = _unit([0.3, -0.5, 0.2])
    w = vmf.sample_vmf(mu, 1e4, rng.random(10_000), rng.random(10_000))
    assert np.max(np.arccos(np.clip(w @ mu, -1, 1))) < 0.05
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)


def test_sampler_histogram(rng):
    n = 1_000_000
    w = vmf.sample_vmf(Z, 10.0, rng.random(n), rng.random(n))
    assert chi_square_directions(w, lambda d: vmf.vmf_pdf(Z, 10.0, d)) > 0.01


def _mixture(rng, n_lobes=8):
    pts = rng.normal(size=(n_lobes, 3)) * 2.0
    return vmf.VmfField.single(pts, rng.uniform(0.5, 30, n_lobes), rng.uniform(0.2, 2, n_lobes))


def test_mixture_identities(rng):
    x = np.zeros((1, 3))
    w = _unit(rng.normal(size=(1, 50, 3)))
    one = vmf.VmfField.single([[1.0, 2.0, 0.5]], 7.0)
    two = vmf.VmfField.single([[1.0, 2.0, 0.5]] * 2, 7.0, [1.0, 3.0])
    ref = vmf.vmf_pdf(_unit([1.0, 2.0, 0.5]), 7.0, w[0])
    np.testing.assert_allclose(one.pdf(x, w)[0], ref, rtol=1e-9)
    np.testing.assert_allclose(two.pdf(x, w)[0], ref, rtol=1e-9)


def test_mixture_sampler_histogram(rng):
    f = _mixture(rng)
    x = np.zeros((1, 3))
    n = 1_000_000
    w = f.sample(x, rng.random((1, n)), rng.random((1, n)), rng.random((1, n)))[0]
    assert chi_square_directions(w, lambda d: f.pdf(x, d[None])[0]) > 0.01
    draw, density = f.sampler_at(x)
    u = rng.random((3, 1, 100))
    ws = draw(u[0], u[1], u[2])
    np.testing.assert_allclose(density(ws), f.pdf(x, ws), rtol=1e-12)


def test_degenerate_lobe_defaults_to_up():
    f = vmf.VmfField.single([[0.0, 0.0, 0.0]], 20.0)
    mu, kappa, _ = f.lobes(np.zeros((1, 3)))
    np.testing.assert_allclose(mu[0, 0], Z)
    assert kappa[0, 0] == 0.0
    p = f.pdf(np.zeros((1, 3)), _unit(np.array([[[1.0, 1, 1]]])))
    assert p[0, 0] == pytest.approx(1 / (4 * math.pi))


def test_fit_loss_zero_when_exact(rng):
    f = _mixture(rng, 4)
    x = np.zeros((1, 3))
    w = _unit(rng.normal(size=(1, 32, 3)))
    tape = ad.Tape()
    raw = tape.param("v", f.flat())
    zq = vmf.mixture_node(f, raw, x, w).value
    loss, g = vmf.fit_loss_and_grad(f, x, w, np.full((1, 32), 0.1), zq)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert np.max(np.abs(g)) < 1e-12
    with pytest.raises(ValueError):
        vmf.fit_loss_and_grad(f, x, w, np.zeros((1, 32)), zq)


def test_fit_gradient_matches_finite_differences(rng):
    raw = rng.normal(size=(2, 2, 2, 4, 5))
    raw[..., 3] = rng.uniform(0.5, 3.0, raw.shape[:4])
    f = vmf.VmfField(raw)
    x = rng.uniform(-0.8, 0.8, (3, 3))
    w = _unit(rng.normal(size=(3, 8, 3)))
    pdf = rng.uniform(0.05, 0.5, (3, 8))
    tgt = rng.uniform(0, 2, (3, 8))
    _, g = vmf.fit_loss_and_grad(f, x, w, pdf, tgt)
    h = 1e-6
    idx = [tuple(rng.integers(0, s) for s in raw.shape) for _ in range(25)]
    for i in idx:
        rp, rm = raw.copy(), raw.copy()
        rp[i] += h
        rm[i] -= h
        fd = (vmf.fit_loss_and_grad(vmf.VmfField(rp), x, w, pdf, tgt)[0] - vmf.fit_loss_and_grad(vmf.VmfField(rm), x, w, pdf, tgt)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), 1e-3)


def test_point_light_fit_finds_direction(rng):
    light = presets.point_light_vacuum().emitters[0]
    x = np.zeros((1, 3))
    field = vmf.VmfField.init(rng, res=1, lobes=4)
    state = ad.AdamState()
    m = 256
    for _ in range(2000):
        u = rng.random((1, m, 4))
        w_mix = field.sample(x, u[..., 0], u[..., 1], u[..., 2])
        z, phi = 2 * u[..., 1] - 1, 2 * math.pi * u[..., 2]
        s = np.sqrt(1 - z * z)
        w_uni = np.stack([s * np.cos(phi), s * np.sin(phi), z], -1)
        w = np.where((u[..., 3] < 0.5)[..., None], w_mix, w_uni)
        pdf = 0.5 * field.pdf(x, w) + 0.5 / (4 * math.pi)
        hit = np.isfinite(light.intersect(np.zeros((m, 3)), w[0]))
        target = np.where(hit, np.linalg.norm(light.radiance), 0.0)[None]
        field, _ = vmf.fit_step(field, state, x, w, pdf, target, 0.05)
    mu, _, lam = field.lobes(x)
    top = mu[0, np.argmax(lam[0])]
    true = _unit(light.position)
    assert math.degrees(math.acos(min(1.0, top @ true))) < 2.0


def test_json_round_trip(tmp_path, rng):
    f = vmf.VmfField.init(rng, res=3, lobes=5)
    p = tmp_path / "v.json"
    f.save(p)
    g = vmf.VmfField.load(p)
    np.testing.assert_array_equal(f.raw, g.raw)
    x = rng.uniform(-1, 1, (4, 3))
    w = _unit(rng.normal(size=(4, 6, 3)))
    np.testing.assert_array_equal(f.pdf(x, w), g.pdf(x, w))


def test_bad_raw_shape():
    with pytest.raises(ValueError):
        vmf.VmfField(np.zeros((2, 2, 2, 5)))
