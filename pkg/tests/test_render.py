import numpy as np
import pytest

from volmc import estimator, presets, render
from volmc.cache import ReferenceCache

CFG = estimator.EstimatorConfig("ref", m=2, n=16)


def _scene():
    return presets.two_blob(width=8, height=8)


def test_thread_count_does_not_change_pixels():
    sc = _scene()
    ref = ReferenceCache(sc, n_sec=8)
    a = render.render_image(sc, CFG, estimator.Sampler(), 2, 3, ref, threads=1, chunk=16)
    b = render.render_image(sc, CFG, estimator.Sampler(), 2, 3, ref, threads=3, chunk=16)
    assert a.shape == (8, 8, 3)
    assert a.tobytes() == b.tobytes()


def test_chunking_does_not_change_pixels():
    sc = _scene()
    ref = ReferenceCache(sc, n_sec=8)
    a = render.render_image(sc, CFG, estimator.Sampler(), 1, 4, ref, chunk=7)
    b = render.render_image(sc, CFG, estimator.Sampler(), 1, 4, ref, chunk=64)
    np.testing.assert_array_equal(a, b)


def test_error_shrinks_as_inverse_sqrt_spp():
    sc = _scene()
    ref = ReferenceCache(sc, n_sec=8)
    truth = render.render_image(sc, CFG, estimator.Sampler(), 4096, 1, ref)
    rmse = {}
    for spp in (16, 256):
        img = render.render_image(sc, CFG, estimator.Sampler(), spp, 2, ref)
        rmse[spp] = np.sqrt(np.mean((img - truth) ** 2))
    assert rmse[16] / rmse[256] == pytest.approx(4.0, rel=0.25)


def test_variance_variants_and_csv(rng):
    sc = _scene()
    ref = ReferenceCache(sc, n_sec=8)
    pix = render.spread_pixels(sc.camera, 4, sc)
    o, d = sc.camera.rays(pix)
    t0, t1, _ = sc.segment(o, d)
    assert np.all(t1 > t0)
    out = render.variance_variants(sc, pix, 3, 0, m=2, ref_fn=ref)
    assert list(out) == ["neither"] and out["neither"].shape == (3, 4, 3)
    text = render.variance_csv(out, 2)
    assert text.splitlines()[0] == estimator.CSV_HEADER and len(text.splitlines()) == 5
