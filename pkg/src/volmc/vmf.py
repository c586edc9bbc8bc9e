"""Spatially varying von Mises-Fisher mixtures with point-projected means.

Each lobe stores a 3D point ``mu'`` plus raw concentration and weight; the
lobe mean seen from ``x`` is ``normalize(mu' - x)``.  Raw parameters live on
a node-centered trilinear grid (resolution 1 gives a global mixture) and are
interpolated before decoding.
"""

import json
import math

import numpy as np

from . import autodiff as ad
from . import kernels
from .brdf import make_frame
from .scene import DEFAULT_BOUNDS

KAPPA_MAX = 1e4
KAPPA_EPS = kernels.KAPPA_EPS
LAMBDA_FLOOR = 1e-6
DEGENERATE_EPS = 1e-6
INV_4PI = kernels.INV_4PI


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def vmf_pdf(mu, kappa, w):
    """Stable vMF density; broadcasts mu (..., 3), kappa (...), w (..., 3)."""
    mu = np.asarray(mu, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    cos = np.sum(mu * w, axis=-1)
    return kernels.vmf_normalizer_numpy(kappa) * np.exp(kappa * (cos - 1.0))


def sample_vmf(mu, kappa, u1, u2):
    """Inverse-CDF sampling around mu; kappa below 1e-6 samples the uniform sphere."""
    mu = np.asarray(mu, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    safe = np.maximum(kappa, KAPPA_EPS)
    cos_v = 1.0 + np.log(u1 + (1.0 - u1) * np.exp(-2.0 * safe)) / safe
    cos_u = 1.0 - 2.0 * u1
    cos = np.clip(np.where(kappa < KAPPA_EPS, cos_u, cos_v), -1.0, 1.0)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    phi = 2.0 * math.pi * np.asarray(u2)
    shape = np.broadcast_shapes(mu.shape[:-1], cos.shape)
    mu = np.broadcast_to(mu, shape + (3,))
    t, b = make_frame(mu)
    return (sin * np.cos(phi))[..., None] * t + (sin * np.sin(phi))[..., None] * b + cos[..., None] * mu


def project_means(mu_prime, x):
    """Unit lobe means from points; degenerate lobes get +z and a mask."""
    d = mu_prime - x[:, None, :]
    norm = np.linalg.norm(d, axis=-1)
    deg = norm < DEGENERATE_EPS
    mu = np.where(deg[..., None], np.array([0.0, 0.0, 1.0]), d / np.where(deg, 1.0, norm)[..., None])
    return mu, deg


class VmfField:
    """Raw lobe parameters on a grid: ``raw`` is (G0, G1, G2, L, 5) = [mu'(3), kappa_raw, lambda_raw]."""

    def __init__(self, raw, lo=None, hi=None):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 5 or raw.shape[4] != 5:
            raise ValueError("vMF raw parameters must be (G0, G1, G2, L, 5)")
        self.raw = raw
        self.lo = DEFAULT_BOUNDS[0] if lo is None else np.asarray(lo, dtype=np.float64)
        self.hi = DEFAULT_BOUNDS[1] if hi is None else np.asarray(hi, dtype=np.float64)

    @classmethod
    def init(cls, rng, res=16, lobes=128, lo=None, hi=None, spread=2.0, kappa0=2.0):
        """Lobe points uniform in a box ``spread`` times the scene box, shared by all cells."""
        lo = DEFAULT_BOUNDS[0] if lo is None else np.asarray(lo, dtype=np.float64)
        hi = DEFAULT_BOUNDS[1] if hi is None else np.asarray(hi, dtype=np.float64)
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * spread
        res = (res,) * 3 if np.isscalar(res) else tuple(res)
        lobe = np.empty((lobes, 5))
        lobe[:, :3] = c + half * (2.0 * rng.random((lobes, 3)) - 1.0)
        lobe[:, 3] = softplus_inv(kappa0)
        lobe[:, 4] = softplus_inv(1.0) + 0.01 * rng.normal(size=lobes)
        return cls(np.broadcast_to(lobe, res + lobe.shape).copy(), lo, hi)

    @classmethod
    def single(cls, mu_prime, kappa, lam=1.0):
        """Global mixture from decoded lobe arrays (L, 3), (L,), (L,)."""
        mu_prime = np.asarray(mu_prime, dtype=np.float64).reshape(-1, 3)
        n = mu_prime.shape[0]
        lobe = np.empty((n, 5))
        lobe[:, :3] = mu_prime
        lobe[:, 3] = softplus_inv(np.broadcast_to(kappa, (n,)))
        lobe[:, 4] = softplus_inv(np.maximum(np.broadcast_to(lam, (n,)) - LAMBDA_FLOOR, 1e-300))
        return cls(lobe[None, None, None])

    @property
    def n_lobes(self):
        return self.raw.shape[3]

    @property
    def resolution(self):
        return self.raw.shape[:3]

    def flat(self):
        return self.raw.reshape(self.resolution + (-1,))

    def decode(self, x):
        """mu' (P, L, 3), kappa (P, L), lambda (P, L) at points x (P, 3)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        v = kernels.trilinear(self.flat(), x, self.lo, self.hi).reshape(-1, self.n_lobes, 5)
        kappa = np.minimum(softplus(v[..., 3]), KAPPA_MAX)
        lam = softplus(v[..., 4]) + LAMBDA_FLOOR
        return v[..., :3], kappa, lam

    def lobes(self, x):
        """Projected unit means with degenerate lobes flattened to kappa = 0."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        mup, kappa, lam = self.decode(x)
        mu, deg = project_means(mup, x)
        return mu, np.where(deg, 0.0, kappa), lam

    def pdf(self, x, w):
        """Mixture density at points x (P, 3) for directions w (P, M, 3) -> (P, M)."""
        mu, kappa, lam = self.lobes(x)
        w = np.asarray(w, dtype=np.float64).reshape(mu.shape[0], -1, 3)
        zq = kernels.vmf_mixture(mu, kappa, lam, w)
        return zq / lam.sum(axis=1, keepdims=True)

    def sample(self, x, u_lobe, u1, u2):
        """Directions (P, M, 3) from the mixture; lobe picked with probability lambda / Z."""
        mu, kappa, lam = self.lobes(x)
        idx = kernels.categorical(lam, np.asarray(u_lobe, dtype=np.float64).reshape(mu.shape[0], -1))
        idx = np.maximum(idx, 0)
        mu_s = np.take_along_axis(mu, idx[..., None], axis=1)
        k_s = np.take_along_axis(kappa, idx, axis=1)
        return sample_vmf(mu_s, k_s, u1, u2)

    def sampler_at(self, x):
        """Closure drawing directions for the rows of x, as the BRDF samplers expect."""
        mu, kappa, lam = self.lobes(x)

        def draw(u_lobe, u1, u2):
            idx = np.maximum(kernels.categorical(lam, u_lobe.reshape(mu.shape[0], -1)), 0)
            mu_s = np.take_along_axis(mu, idx[..., None], axis=1)
            k_s = np.take_along_axis(kappa, idx, axis=1)
            return sample_vmf(mu_s, k_s, u1, u2)

        def density(w):
            return kernels.vmf_mixture(mu, kappa, lam, w) / lam.sum(axis=1, keepdims=True)

        return draw, density

    def with_raw(self, raw):
        return VmfField(raw, self.lo, self.hi)

    # -- serialization ------------------------------------------------------

    def to_json(self):
        return {
            "type": "vmf-field",
            "resolution": list(self.resolution),
            "lobes": self.n_lobes,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "mu_prime": self.raw[..., :3].ravel().tolist(),
            "kappa_raw": self.raw[..., 3].ravel().tolist(),
            "lambda_raw": self.raw[..., 4].ravel().tolist(),
        }

    @classmethod
    def from_json(cls, d):
        res = tuple(int(r) for r in d["resolution"])
        n = int(d["lobes"])
        raw = np.empty(res + (n, 5))
        raw[..., :3] = np.asarray(d["mu_prime"], dtype=np.float64).reshape(res + (n, 3))
        raw[..., 3] = np.asarray(d["kappa_raw"], dtype=np.float64).reshape(res + (n,))
        raw[..., 4] = np.asarray(d["lambda_raw"], dtype=np.float64).reshape(res + (n,))
        return cls(raw, d.get("lo"), d.get("hi"))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def mixture_node(field, raw, x, w):
    """Unnormalized mixture Z q as a tape node (P, M) from a raw flat grid node."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    p, n_l = x.shape[0], field.n_lobes
    v = ad.reshape(ad.trilinear(raw, x, field.lo, field.hi), (p, n_l, 5))
    mup = ad.take(v, (Ellipsis, slice(0, 3)))
    kappa = ad.minimum(ad.softplus(ad.take(v, (Ellipsis, 3))), KAPPA_MAX)
    lam = ad.softplus(ad.take(v, (Ellipsis, 4))) + LAMBDA_FLOOR
    d = mup - x[:, None, :]
    deg = np.linalg.norm(d.value, axis=-1) < DEGENERATE_EPS
    if np.any(deg):
        d = ad.where(deg[..., None], np.array([0.0, 0.0, 1.0]), d)
        kappa = ad.where(deg, 0.0, kappa)
    mu = ad.normalize3(d)
    wt = np.swapaxes(np.asarray(w, dtype=np.float64).reshape(p, -1, 3), 1, 2)
    cos = ad.matmul(mu, wt)
    small = kappa.value < KAPPA_EPS
    ksafe = ad.max(kappa, KAPPA_EPS)
    c = ksafe / (2.0 * math.pi * (1.0 - ad.exp(-2.0 * ksafe)))
    if np.any(small):
        c = ad.where(small, INV_4PI, c)
    comp = ad.reshape(c, (p, n_l, 1)) * ad.exp(ad.reshape(kappa, (p, n_l, 1)) * (cos - 1.0))
    return ad.sum(ad.reshape(lam, (p, n_l, 1)) * comp, axis=1)


def fit_loss(field, raw, x, w, pdf, target):
    """mean_j (Z q(w_j) - target_j)^2 / p(w_j); pdf and target are constants."""
    pdf = np.asarray(pdf, dtype=np.float64)
    if np.any(~(pdf > 0.0)):
        raise ValueError("fit_loss: sample pdfs must be > 0")
    zq = mixture_node(field, raw, x, w)
    r = zq - np.asarray(target, dtype=np.float64).reshape(zq.shape)
    return ad.mean(r * r / pdf.reshape(zq.shape))


def fit_loss_and_grad(field, x, w, pdf, target):
    tape = ad.Tape()
    raw = tape.param("vmf", field.flat())
    loss = fit_loss(field, raw, x, w, pdf, target)
    g = tape.backward(loss)["vmf"]
    return float(loss.value), g.reshape(field.raw.shape)


def fit_step(field, state, x, w, pdf, target, lr):
    """One Adam step on the raw parameters; returns (new field, loss)."""
    loss, g = fit_loss_and_grad(field, x, w, pdf, target)
    params = {"vmf": field.raw}
    ad.adam_step(params, {"vmf": g}, state, lr)
    return field.with_raw(params["vmf"]), loss


def radiance_norm(rgb):
    """Channel L2 norm used as the scalar fitting target."""
    return np.linalg.norm(np.asarray(rgb, dtype=np.float64), axis=-1)
