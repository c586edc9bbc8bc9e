import math

import numpy as np
import pytest

from volmc import brdf, estimator, presets
from volmc.brdf import ConstantMaterial
from volmc.cache import ReferenceCache
from volmc.estimator import EstimatorConfig, Sampler, ShadingPoints
from volmc.render import pixel_trials
from volmc.rng import stream_key
from volmc.scene import Camera

Z = np.array([0.0, 0.0, 1.0])


def _points(scene, count, a=None):
    if a is not None:
        scene.materials = ConstantMaterial(0.0, 1.0, a)
    x = np.zeros((count, 3))
    return ShadingPoints.at(scene, x, Z, Z)


def _ones(x, w):
    return np.ones((x.shape[0], 3))


def _diffuse_part(sp, est):
    ss, li = est.records[0]
    contrib = ss.coef(sp) * li
    return np.sum(np.where((ss.lobe != brdf.SPECULAR)[None, :, None], contrib, 0.0), axis=1)


def test_lambertian_furnace_expectation():
    t = 100_000
    sp = _points(presets.vacuum(), t, (0.6, 0.6, 0.6))
    est = estimator.estimate_lo_plain(sp, _ones, 4, Sampler(), stream_key(1, np.arange(t)))
    d = _diffuse_part(sp, est)
    se = d.std(axis=0, ddof=1) / math.sqrt(t)
    assert np.all(np.abs(d.mean(axis=0) - 0.6) < 4 * se)


def test_black_albedo_has_zero_diffuse_part():
    sp = _points(presets.vacuum(), 100, (0.0, 0.0, 0.0))
    est = estimator.estimate_lo_plain(sp, _ones, 8, Sampler(), stream_key(2, np.arange(100)))
    assert np.all(_diffuse_part(sp, est) == 0.0)


def _cv_point(scene):
    x = np.array([[-0.4, 0.0, 0.0]]) + 0.26 * np.array([[0.0, -1.0, 0.3]]) / math.hypot(1.0, 0.3)
    n = (x - np.array([-0.4, 0.0, 0.0])) / np.linalg.norm(x - np.array([-0.4, 0.0, 0.0]))
    return ShadingPoints.at(scene, x, n, n)


def _replicate(sp, t):
    return ShadingPoints(*(np.repeat(v, t, axis=0) for v in (sp.x, sp.n, sp.wo, sp.m, sp.r, sp.a)), sp.offset)


def test_variance_follows_one_over_m():
    sc = presets.two_blob(point_light=False)
    ref = ReferenceCache(sc, n_sec=16)
    sp = _replicate(_cv_point(sc), 20_000)
    keys = stream_key(3, np.arange(20_000))
    v4 = estimator.estimate_lo_plain(sp, ref, 4, Sampler(), keys).value.var(axis=0).sum()
    sp16 = _replicate(_cv_point(sc), 5_000)
    v16 = estimator.estimate_lo_plain(sp16, ref, 16, Sampler(), stream_key(4, np.arange(5_000))).value.var(axis=0).sum()
    assert v4 / v16 == pytest.approx(4.0, rel=0.15)


def test_cv_with_identical_caches_reduces_to_fast():
    sc = presets.two_blob(point_light=False)
    ref = ReferenceCache(sc, n_sec=16)
    sp = _replicate(_cv_point(sc), 50)
    kf, kd = stream_key(5, np.arange(50), 0), stream_key(5, np.arange(50), 1)
    cv = estimator.estimate_lo_cv(sp, ref, ref, 8, 4, Sampler(), kf, kd)
    assert np.all(cv.records[1][1] == 0.0)
    plain = estimator.estimate_lo_plain(sp, ref, 8, Sampler(), kf)
    np.testing.assert_allclose(cv.value, plain.value, rtol=0, atol=0)


def test_cv_requires_distinct_streams():
    sp = _points(presets.vacuum(), 4, (0.5, 0.5, 0.5))
    k = stream_key(6, np.arange(4))
    with pytest.raises(ValueError, match="distinct"):
        estimator.estimate_lo_cv(sp, _ones, _ones, 4, 4, Sampler(), k, k)
    with pytest.raises(ValueError):
        estimator.estimate_lo_plain(sp, _ones, 0, Sampler(), k)


def test_cv_break_hook_introduces_bias(monkeypatch):
    t = 20_000
    sp = _points(presets.vacuum(), t, (0.6, 0.6, 0.6))
    zero = lambda x, w: np.zeros((x.shape[0], 3))
    kf, kd = stream_key(7, np.arange(t), 0), stream_key(7, np.arange(t), 1)
    good = estimator.estimate_lo_cv(sp, zero, _ones, 4, 4, Sampler(), kf, kd).value.mean(axis=0)
    monkeypatch.setenv("VOLMC_BREAK_CV", "1")
    bad = estimator.estimate_lo_cv(sp, zero, _ones, 4, 4, Sampler(), kf, kd).value.mean(axis=0)
    assert np.all(good > 0.55) and np.all(bad == 0.0)


def test_missing_ray_returns_env_exactly():
    sc = presets.vacuum(env=(0.5, 0.5, 0.5))
    o, d = sc.camera.rays()
    est = estimator.estimate_pixels(sc, o, d, np.arange(o.shape[0]), 0, 0, EstimatorConfig("ref"), Sampler(), ReferenceCache(sc))
    assert np.all(est.value == 0.5)


def _directional_albedo(m, r, a, cos_o, order=64):
    """Gauss-Legendre quadrature of f cos over the hemisphere."""
    wo = np.array([math.sqrt(1 - cos_o**2), 0.0, cos_o])
    gz, wz = np.polynomial.legendre.leggauss(order)
    gp, wp = np.polynomial.legendre.leggauss(2 * order)
    z = 0.5 * (gz + 1.0)
    phi = math.pi * (gp + 1.0)
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - zz**2)
    wi = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    f = brdf.eval_brdf(m, r, np.asarray(a), Z, wi, np.broadcast_to(wo, wi.shape))
    wts = (0.5 * wz[:, None] * math.pi * wp[None, :]).reshape(-1)
    return np.sum(f * (wi[:, 2] * wts)[:, None], axis=0)


def test_opaque_wall_matches_directional_albedo():
    sc = presets.wall(albedo=0.6, env=1.0)
    sc.camera = Camera([-2.0, 0.0, 0.0], [0.0, 0.0, 0.0], fov_deg=5.0, width=1, height=1)
    trials = 10_000
    cfg = EstimatorConfig("ref", m=4, n=64)
    ref = ReferenceCache(sc, n_sec=16)
    vals = pixel_trials(sc, np.array([0]), cfg, Sampler(), trials, seed=8, ref_fn=ref)[:, 0]
    o, d = sc.camera.rays()
    est = estimator.estimate_pixels(sc, o, d, np.array([0]), 0, 8, cfg, Sampler(), ref)
    tau = 1.0 - est.weights.sum()
    expect = (1 - tau) * _directional_albedo(0.0, 1.0, (0.6,) * 3, 1.0) + tau
    se = vals.std(axis=0, ddof=1) / math.sqrt(trials)
    assert np.all(np.abs(vals.mean(axis=0) - expect) < 4 * se)


def test_k_does_not_bias_pixels():
    sc = presets.two_blob(width=8, height=8, point_light=False)
    ref = ReferenceCache(sc, n_sec=16)
    ids = np.array([27, 28, 35, 36])
    t = 600
    a = pixel_trials(sc, ids, EstimatorConfig("ref", k=1, m=4, n=32), Sampler(), t, 9, ref)
    b = pixel_trials(sc, ids, EstimatorConfig("ref", k=4, m=4, n=32), Sampler(), t, 10, ref)
    se = np.sqrt(a.var(axis=0, ddof=1) / t + b.var(axis=0, ddof=1) / t)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * se + 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig("bogus")
    with pytest.raises(ValueError):
        EstimatorConfig(k=0)


def test_variance_statistics(rng):
    mean, var, se = estimator.summarize(np.full((50, 2, 3), 0.25))
    assert np.all(var == 0) and np.all(se == 0)
    _, var, _ = estimator.summarize(rng.random((100_000, 1, 3)))
    np.testing.assert_allclose(var, 1 / 12, rtol=0.05)
    with pytest.raises(ValueError):
        estimator.summarize(np.zeros((1, 2, 3)))


def test_variance_report_format():
    text = estimator.variance_report({"a": lambda t: np.full((3, 3), t), "b": lambda t: np.zeros((3, 3))}, 4, 16)
    lines = text.strip().splitlines()
    assert lines[0] == estimator.CSV_HEADER
    assert len(lines) == 1 + 2 * 3
    assert all(len(r.split(",")) == 11 for r in lines)
    assert lines[-1].startswith("b,16,0,0,0,0,0,0,0,0,0")
