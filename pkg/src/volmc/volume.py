"""Volume-rendering quadrature and single-sample surface-point selection.

Rays are batched: ``t`` holds sample distances (R, N) measured from each
ray origin, ``t_far`` (R,) closes the last segment.
"""

import numpy as np

from . import kernels

TRANSPARENT_EPS = 1e-9


def uniform_partition(t_far, n, t_near=None):
    """Equal segments over [t_near, t_far]: distances (R, N) at segment starts."""
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    t_near = np.zeros_like(t_far) if t_near is None else np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    frac = np.arange(n) / n
    return t_near[:, None] + frac[None, :] * (t_far - t_near)[:, None]


def stratified_partition(t_far, n, u, t_near=None):
    """One jittered distance per equal stratum; ``u`` is (R, N) uniforms."""
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    t_near = np.zeros_like(t_far) if t_near is None else np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    frac = (np.arange(n)[None, :] + np.asarray(u).reshape(-1, n)) / n
    return t_near[:, None] + frac * (t_far - t_near)[:, None]


def segment_lengths(t, t_far):
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    return np.diff(np.concatenate([t, t_far[:, None]], axis=1), axis=1)


def quadrature_weights(field, origins, dirs, t, t_far):
    """Render weights (R, N), transparency (R,) and sample points (R, N, 3)."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(t, dtype=np.float64).reshape(origins.shape[0], -1)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    sigma = field.sigma(pts.reshape(-1, 3)).reshape(t.shape)
    w = weights_from_sigma(sigma, segment_lengths(t, t_far))
    return w, transparency(w), pts


def weights_from_sigma(sigma, delta):
    return kernels.render_weights(np.asarray(sigma, dtype=np.float64), np.asarray(delta, dtype=np.float64))


def transparency(w):
    return np.clip(1.0 - w.sum(axis=-1), 0.0, 1.0)


def composite(w, colors, env):
    """sum_k w_k c_k + tau * env for weights (..., N), colors (..., N, 3), env (..., 3)."""
    w = np.asarray(w, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    tau = 1.0 - w.sum(axis=-1)
    return np.einsum("...n,...nc->...c", w, colors) + tau[..., None] * np.asarray(env, dtype=np.float64)


def sample_surface_indices(w, k, u):
    """Batched categorical draw from w/W with multiplier W/K.

    ``u`` is (R, K).  Returns indices (R, K), -1 on rows with W < 1e-9, and
    the per-draw multiplier (R,) which is 0 on those rows.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1, np.shape(w)[-1])
    total = w.sum(axis=1)
    clear = total < TRANSPARENT_EPS
    idx = kernels.categorical(np.where(clear[:, None], 0.0, w), np.asarray(u, dtype=np.float64).reshape(-1, k))
    mult = np.where(clear, 0.0, total / k)
    return idx, mult


def sample_surface_points(w, k, rng):
    """Single-ray form: list of (index, multiplier) pairs, empty when transparent."""
    if k < 1:
        raise ValueError("K must be >= 1")
    u = np.asarray(rng.random(k)).reshape(1, k)
    idx, mult = sample_surface_indices(np.asarray(w).reshape(1, -1), k, u)
    if idx[0, 0] < 0:
        return []
    return [(int(i), float(mult[0])) for i in idx[0]]
