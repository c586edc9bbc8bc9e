"""Hot numeric kernels with two interchangeable backends.

Each kernel exists as an explicit-loop numba function and as a vectorized
numpy function.  The public name is bound at import time; set
``VOLMC_NUMBA=0`` to force the numpy path (also used when numba is missing).
Both variants stay importable so ``benchmarks/bench_kernels.py`` can time
them against each other.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("VOLMC_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

INV_4PI = 1.0 / (4.0 * math.pi)
KAPPA_EPS = 1e-6


def _njit(fn):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# Gaussian blob sums
# ---------------------------------------------------------------------------


def blob_eval_numpy(points, centers, peaks, radii, emission):
    """Density and emitted-radiance density of a truncated gaussian blob sum.

    Returns ``sigma`` of shape (n,) and ``sigma_e`` of shape (n, 3) where
    ``sigma_e = sum_i sigma_i(x) * e_i``.
    """
    n = points.shape[0]
    if centers.shape[0] == 0:
        return np.zeros(n), np.zeros((n, 3))
    d = points[:, None, :] - centers[None, :, :]
    r2 = np.einsum("nbk,nbk->nb", d, d)
    s2 = radii * radii
    val = peaks * np.exp(-0.5 * r2 / s2)
    val = np.where(r2 <= 16.0 * s2, val, 0.0)
    return val.sum(axis=1), val @ emission


def _blob_eval_loop(points, centers, peaks, radii, emission):
    n = points.shape[0]
    nb = centers.shape[0]
    sigma = np.zeros(n)
    sigma_e = np.zeros((n, 3))
    for i in range(n):
        s = 0.0
        e0 = 0.0
        e1 = 0.0
        e2 = 0.0
        for b in range(nb):
            dx = points[i, 0] - centers[b, 0]
            dy = points[i, 1] - centers[b, 1]
            dz = points[i, 2] - centers[b, 2]
            r2 = dx * dx + dy * dy + dz * dz
            s2 = radii[b] * radii[b]
            if r2 <= 16.0 * s2:
                v = peaks[b] * math.exp(-0.5 * r2 / s2)
                s += v
                e0 += v * emission[b, 0]
                e1 += v * emission[b, 1]
                e2 += v * emission[b, 2]
        sigma[i] = s
        sigma_e[i, 0] = e0
        sigma_e[i, 1] = e1
        sigma_e[i, 2] = e2
    return sigma, sigma_e


def blob_grad_numpy(points, centers, peaks, radii):
    n = points.shape[0]
    if centers.shape[0] == 0:
        return np.zeros((n, 3))
    d = points[:, None, :] - centers[None, :, :]
    r2 = np.einsum("nbk,nbk->nb", d, d)
    s2 = radii * radii
    val = peaks * np.exp(-0.5 * r2 / s2)
    val = np.where(r2 <= 16.0 * s2, val, 0.0)
    return -np.einsum("nb,nbk->nk", val / s2, d)


def _blob_grad_loop(points, centers, peaks, radii):
    n = points.shape[0]
    nb = centers.shape[0]
    out = np.zeros((n, 3))
    for i in range(n):
        for b in range(nb):
            dx = points[i, 0] - centers[b, 0]
            dy = points[i, 1] - centers[b, 1]
            dz = points[i, 2] - centers[b, 2]
            r2 = dx * dx + dy * dy + dz * dz
            s2 = radii[b] * radii[b]
            if r2 <= 16.0 * s2:
                c = -peaks[b] * math.exp(-0.5 * r2 / s2) / s2
                out[i, 0] += c * dx
                out[i, 1] += c * dy
                out[i, 2] += c * dz
    return out


# ---------------------------------------------------------------------------
# Node-centered trilinear grids, values shaped (R0, R1, R2, C)
# ---------------------------------------------------------------------------


def _cell_coords_numpy(points, shape, lo, hi):
    res = np.asarray(shape[:3])
    g = (points - lo) / (hi - lo) * (res - 1)
    g = np.clip(g, 0.0, res - 1)
    i0 = np.minimum(np.floor(g).astype(np.int64), np.maximum(res - 2, 0))
    f = g - i0
    return i0, f


def trilinear_numpy(values, points, lo, hi):
    i0, f = _cell_coords_numpy(points, values.shape, lo, hi)
    res = np.asarray(values.shape[:3])
    out = np.zeros((points.shape[0], values.shape[3]))
    for corner in range(8):
        ox, oy, oz = (corner >> 2) & 1, (corner >> 1) & 1, corner & 1
        ix = np.minimum(i0[:, 0] + ox, res[0] - 1)
        iy = np.minimum(i0[:, 1] + oy, res[1] - 1)
        iz = np.minimum(i0[:, 2] + oz, res[2] - 1)
        w = (
            (f[:, 0] if ox else 1.0 - f[:, 0])
            * (f[:, 1] if oy else 1.0 - f[:, 1])
            * (f[:, 2] if oz else 1.0 - f[:, 2])
        )
        out += w[:, None] * values[ix, iy, iz]
    return out


def trilinear_scatter_numpy(grad_out, points, shape, lo, hi):
    """Adjoint of :func:`trilinear_numpy` with respect to the grid values."""
    i0, f = _cell_coords_numpy(points, shape, lo, hi)
    res = np.asarray(shape[:3])
    grad = np.zeros(shape)
    for corner in range(8):
        ox, oy, oz = (corner >> 2) & 1, (corner >> 1) & 1, corner & 1
        ix = np.minimum(i0[:, 0] + ox, res[0] - 1)
        iy = np.minimum(i0[:, 1] + oy, res[1] - 1)
        iz = np.minimum(i0[:, 2] + oz, res[2] - 1)
        w = (
            (f[:, 0] if ox else 1.0 - f[:, 0])
            * (f[:, 1] if oy else 1.0 - f[:, 1])
            * (f[:, 2] if oz else 1.0 - f[:, 2])
        )
        np.add.at(grad, (ix, iy, iz), w[:, None] * grad_out)
    return grad


def _cell_loop(points, i, r0, r1, r2, lo, hi):
    """Flat index of the lower cell corner, fractions and per-axis strides (0 on singleton axes)."""
    g0 = min(max((points[i, 0] - lo[0]) / (hi[0] - lo[0]) * (r0 - 1), 0.0), r0 - 1.0)
    g1 = min(max((points[i, 1] - lo[1]) / (hi[1] - lo[1]) * (r1 - 1), 0.0), r1 - 1.0)
    g2 = min(max((points[i, 2] - lo[2]) / (hi[2] - lo[2]) * (r2 - 1), 0.0), r2 - 1.0)
    k0 = min(int(math.floor(g0)), max(r0 - 2, 0))
    k1 = min(int(math.floor(g1)), max(r1 - 2, 0))
    k2 = min(int(math.floor(g2)), max(r2 - 2, 0))
    d0 = r1 * r2 if r0 > 1 else 0
    d1 = r2 if r1 > 1 else 0
    d2 = 1 if r2 > 1 else 0
    return (k0 * r1 + k1) * r2 + k2, g0 - k0, g1 - k1, g2 - k2, d0, d1, d2


_cell = _njit(_cell_loop) or _cell_loop


def _trilinear_loop(values, points, lo, hi):
    r0, r1, r2, nc = values.shape
    flat = values.reshape(r0 * r1 * r2, nc)
    n = points.shape[0]
    out = np.zeros((n, nc))
    for i in range(n):
        base, f0, f1, f2, d0, d1, d2 = _cell(points, i, r0, r1, r2, lo, hi)
        for corner in range(8):
            ox = (corner >> 2) & 1
            oy = (corner >> 1) & 1
            oz = corner & 1
            w = (f0 if ox else 1.0 - f0) * (f1 if oy else 1.0 - f1) * (f2 if oz else 1.0 - f2)
            j = base + ox * d0 + oy * d1 + oz * d2
            for c in range(nc):
                out[i, c] += w * flat[j, c]
    return out


def _trilinear_scatter_loop(grad_out, points, grad, lo, hi):
    r0, r1, r2, nc = grad.shape
    flat = grad.reshape(r0 * r1 * r2, nc)
    n = points.shape[0]
    for i in range(n):
        base, f0, f1, f2, d0, d1, d2 = _cell(points, i, r0, r1, r2, lo, hi)
        for corner in range(8):
            ox = (corner >> 2) & 1
            oy = (corner >> 1) & 1
            oz = corner & 1
            w = (f0 if ox else 1.0 - f0) * (f1 if oy else 1.0 - f1) * (f2 if oz else 1.0 - f2)
            j = base + ox * d0 + oy * d1 + oz * d2
            for c in range(nc):
                flat[j, c] += w * grad_out[i, c]
    return grad


# ---------------------------------------------------------------------------
# Quadrature weights along rays
# ---------------------------------------------------------------------------


def render_weights_numpy(sigma, delta):
    """Quadrature weights ``w_k = (1 - exp(-s_k d_k)) exp(-sum_{j<k} s_j d_j)``.

    ``sigma`` and ``delta`` are (R, N); returns (R, N).
    """
    od = sigma * delta
    acc = np.cumsum(od, axis=1) - od
    return -np.expm1(-od) * np.exp(-acc)


def _render_weights_loop(sigma, delta):
    r, n = sigma.shape
    w = np.empty((r, n))
    for i in range(r):
        acc = 0.0
        for k in range(n):
            od = sigma[i, k] * delta[i, k]
            w[i, k] = -math.expm1(-od) * math.exp(-acc)
            acc += od
    return w


# ---------------------------------------------------------------------------
# vMF mixtures: Z * q(omega) = sum_l lambda_l vMF(omega; mu_l, kappa_l)
# ---------------------------------------------------------------------------


def vmf_normalizer_numpy(kappa):
    kappa = np.asarray(kappa, dtype=float)
    safe = np.maximum(kappa, KAPPA_EPS)
    c = safe / (2.0 * math.pi * -np.expm1(-2.0 * safe))
    return np.where(kappa < KAPPA_EPS, INV_4PI, c)


def vmf_mixture_numpy(mu, kappa, lam, omega):
    """Unnormalized mixture density; mu (P,L,3), kappa/lam (P,L), omega (P,M,3) -> (P,M)."""
    cos = np.einsum("pmk,plk->pml", omega, mu)
    c = vmf_normalizer_numpy(kappa)
    comp = c[:, None, :] * np.exp(kappa[:, None, :] * (cos - 1.0))
    return np.einsum("pml,pl->pm", comp, lam)


def _vmf_mixture_loop(mu, kappa, lam, omega):
    p_n, l_n, _ = mu.shape
    m_n = omega.shape[1]
    out = np.zeros((p_n, m_n))
    cnorm = np.empty(l_n)
    for p in range(p_n):
        for l in range(l_n):
            k = kappa[p, l]
            if k < KAPPA_EPS:
                cnorm[l] = INV_4PI
            else:
                cnorm[l] = k / (2.0 * math.pi * -math.expm1(-2.0 * k))
        for m in range(m_n):
            s = 0.0
            for l in range(l_n):
                cos = (
                    omega[p, m, 0] * mu[p, l, 0]
                    + omega[p, m, 1] * mu[p, l, 1]
                    + omega[p, m, 2] * mu[p, l, 2]
                )
                s += lam[p, l] * cnorm[l] * math.exp(kappa[p, l] * (cos - 1.0))
            out[p, m] = s
    return out


# ---------------------------------------------------------------------------
# Categorical draws from nonnegative weight rows
# ---------------------------------------------------------------------------


def categorical_numpy(weights, u):
    """Indices distributed as ``Cat(weights[r] / sum)`` for each row; u is (R, K).

    Rows whose weights sum to zero return -1.
    """
    r, n = weights.shape
    total = weights.sum(axis=1)
    safe = np.where(total > 0.0, total, 1.0)
    cdf = np.cumsum(weights, axis=1) / safe[:, None]
    offset = np.arange(r, dtype=float)[:, None]
    flat = (cdf + offset).ravel()
    idx = np.searchsorted(flat, (u + offset).ravel(), side="right").reshape(u.shape)
    idx = idx - (np.arange(r) * n)[:, None]
    idx = np.clip(idx, 0, n - 1)
    nz = weights > 0.0
    last_nz = n - 1 - np.argmax(nz[:, ::-1], axis=1)
    picked = np.take_along_axis(weights, idx, axis=1)
    idx = np.where(picked > 0.0, idx, last_nz[:, None])
    return np.where(total[:, None] > 0.0, idx, -1)


def _categorical_loop(weights, u):
    r, n = weights.shape
    k_n = u.shape[1]
    out = np.empty((r, k_n), np.int64)
    cdf = np.empty(n)
    for i in range(r):
        total = 0.0
        last_nz = -1
        for k in range(n):
            total += weights[i, k]
            if weights[i, k] > 0.0:
                last_nz = k
        if not total > 0.0:
            for j in range(k_n):
                out[i, j] = -1
            continue
        acc = 0.0
        for k in range(n):
            acc += weights[i, k]
            cdf[k] = acc / total
        for j in range(k_n):
            idx = np.searchsorted(cdf, u[i, j], side="right")
            if idx > n - 1:
                idx = n - 1
            if not weights[i, idx] > 0.0:
                idx = last_nz
            out[i, j] = idx
    return out


# ---------------------------------------------------------------------------
# Binding
# ---------------------------------------------------------------------------

_blob_eval_nb = _njit(_blob_eval_loop)
_blob_grad_nb = _njit(_blob_grad_loop)
_trilinear_nb = _njit(_trilinear_loop)
_trilinear_scatter_nb = _njit(_trilinear_scatter_loop)
_render_weights_nb = _njit(_render_weights_loop)
_vmf_mixture_nb = _njit(_vmf_mixture_loop)
_categorical_nb = _njit(_categorical_loop)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def blob_eval_numba(points, centers, peaks, radii, emission):
    return _blob_eval_nb(_c(points), _c(centers), _c(peaks), _c(radii), _c(emission))


def blob_grad_numba(points, centers, peaks, radii):
    return _blob_grad_nb(_c(points), _c(centers), _c(peaks), _c(radii))


def trilinear_numba(values, points, lo, hi):
    return _trilinear_nb(_c(values), _c(points), _c(lo), _c(hi))


def render_weights_numba(sigma, delta):
    return _render_weights_nb(_c(sigma), _c(delta))


def vmf_mixture_numba(mu, kappa, lam, omega):
    return _vmf_mixture_nb(_c(mu), _c(kappa), _c(lam), _c(omega))


def categorical_numba(weights, u):
    return _categorical_nb(_c(weights), _c(u))


def trilinear_scatter_numba(grad_out, points, shape, lo, hi):
    return _trilinear_scatter_nb(_c(grad_out), _c(points), np.zeros(shape), _c(lo), _c(hi))


BACKENDS = {
    "numpy": {
        "blob_eval": blob_eval_numpy,
        "blob_grad": blob_grad_numpy,
        "trilinear": trilinear_numpy,
        "trilinear_scatter": trilinear_scatter_numpy,
        "render_weights": render_weights_numpy,
        "vmf_mixture": vmf_mixture_numpy,
        "categorical": categorical_numpy,
    }
}
if HAVE_NUMBA:
    BACKENDS["numba"] = {
        "blob_eval": blob_eval_numba,
        "blob_grad": blob_grad_numba,
        "trilinear": trilinear_numba,
        "trilinear_scatter": trilinear_scatter_numba,
        "render_weights": render_weights_numba,
        "vmf_mixture": vmf_mixture_numba,
        "categorical": categorical_numba,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = BACKENDS[BACKEND]

blob_eval = _active["blob_eval"]
blob_grad = _active["blob_grad"]
trilinear = _active["trilinear"]
trilinear_scatter = _active["trilinear_scatter"]
render_weights = _active["render_weights"]
vmf_mixture = _active["vmf_mixture"]
categorical = _active["categorical"]
