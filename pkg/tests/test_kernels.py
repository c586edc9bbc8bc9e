import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volmc import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")

NP = kernels.BACKENDS["numpy"]


def nb():
    return kernels.BACKENDS["numba"]


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(0, 5))
def test_blob_backends_agree(seed, n, nb_blobs):
    r = np.random.default_rng(seed)
    pts = r.uniform(-1, 1, (n, 3))
    c = r.uniform(-0.5, 0.5, (nb_blobs, 3))
    peaks = r.uniform(0, 50, nb_blobs)
    radii = r.uniform(0.05, 0.5, nb_blobs)
    emit = r.random((nb_blobs, 3))
    s1, e1 = NP["blob_eval"](pts, c, peaks, radii, emit)
    s2, e2 = nb()["blob_eval"](pts, c, peaks, radii, emit)
    np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(e1, e2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(
        NP["blob_grad"](pts, c, peaks, radii), nb()["blob_grad"](pts, c, peaks, radii), rtol=1e-12, atol=1e-12
    )


@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 4))
def test_trilinear_backends_agree(seed, res, ch):
    r = np.random.default_rng(seed)
    grid = r.normal(size=(res, res + 1, res, ch))
    lo, hi = np.array([-1.0, -0.5, -1.0]), np.array([1.0, 1.5, 0.5])
    # include points outside the box: both backends clamp
    pts = r.uniform(-1.3, 1.6, (50, 3))
    np.testing.assert_allclose(NP["trilinear"](grid, pts, lo, hi), nb()["trilinear"](grid, pts, lo, hi), atol=1e-12)
    g = r.normal(size=(50, ch))
    np.testing.assert_allclose(
        NP["trilinear_scatter"](g, pts, grid.shape, lo, hi), nb()["trilinear_scatter"](g, pts, grid.shape, lo, hi), atol=1e-12
    )


def test_trilinear_reproduces_nodes_and_linear_fields(rng):
    res = 5
    ax = np.linspace(-1, 1, res)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    lin = (2 * X - Y + 0.5 * Z + 1)[..., None]
    pts = rng.uniform(-1, 1, (100, 3))
    for be in kernels.BACKENDS.values():
        v = be["trilinear"](lin, pts, np.full(3, -1.0), np.full(3, 1.0))[:, 0]
        np.testing.assert_allclose(v, 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 2] + 1, atol=1e-12)


def test_trilinear_scatter_is_adjoint(rng):
    grid = rng.normal(size=(4, 4, 4, 2))
    pts = rng.uniform(-1, 1, (30, 3))
    g = rng.normal(size=(30, 2))
    lo, hi = np.full(3, -1.0), np.full(3, 1.0)
    for be in kernels.BACKENDS.values():
        lhs = np.sum(be["trilinear"](grid, pts, lo, hi) * g)
        rhs = np.sum(grid * be["trilinear_scatter"](g, pts, grid.shape, lo, hi))
        assert lhs == pytest.approx(rhs, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_render_weights_agree_and_match_formula(seed, n):
    r = np.random.default_rng(seed)
    sigma = r.exponential(2.0, (7, n))
    delta = r.uniform(0.0, 0.3, (7, n))
    w1 = NP["render_weights"](sigma, delta)
    w2 = nb()["render_weights"](sigma, delta)
    od = sigma * delta
    trans = np.exp(-np.concatenate([np.zeros((7, 1)), np.cumsum(od, axis=1)[:, :-1]], axis=1))
    np.testing.assert_allclose(w1, trans * (1 - np.exp(-od)), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(w1, w2, rtol=1e-12, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_vmf_mixture_agree(seed):
    r = np.random.default_rng(seed)
    mu = r.normal(size=(3, 5, 3))
    mu /= np.linalg.norm(mu, axis=-1, keepdims=True)
    kappa = np.exp(r.uniform(-16, 9, (3, 5)))
    kappa[0, 0] = 0.0
    lam = r.uniform(0.1, 2, (3, 5))
    om = r.normal(size=(3, 7, 3))
    om /= np.linalg.norm(om, axis=-1, keepdims=True)
    np.testing.assert_allclose(NP["vmf_mixture"](mu, kappa, lam, om), nb()["vmf_mixture"](mu, kappa, lam, om), rtol=1e-10)


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 8))
def test_categorical_agree(seed, n, k):
    r = np.random.default_rng(seed)
    w = r.random((20, n)) * (r.random((20, n)) < 0.7)
    u = r.random((20, k))
    i1 = NP["categorical"](w, u)
    i2 = nb()["categorical"](w, u)
    np.testing.assert_array_equal(i1, i2)
    empty = w.sum(axis=1) == 0
    assert np.all(i1[empty] == -1)
    rows = np.nonzero(~empty)[0]
    assert np.all(w[rows[:, None], i1[rows]] > 0)


def test_categorical_frequencies(rng):
    w = np.array([[0.1, 0.0, 0.6, 0.3]])
    u = rng.random((1, 200_000))
    idx = kernels.categorical(w, u)[0]
    freq = np.bincount(idx, minlength=4) / idx.size
    np.testing.assert_allclose(freq, w[0] / w.sum(), atol=4e-3)
