"""Disney-style GGX BRDF, material fields and direction samplers.

The BRDF is ``f = (1 - m) a / pi + D F G / (4 cos_i cos_o)`` with
Trowbridge-Reitz ``D`` (alpha = r^2), Schlick ``F`` (F0 = lerp(0.04, a, m))
and separable Smith-Schlick ``G`` (k = alpha / 2).

Every sampling density used in a division is mixed with a uniform
hemisphere at weight ``EPS_UNIFORM`` so it stays strictly positive above the
horizon.
"""

import math

import numpy as np

from . import autodiff as ad
from . import kernels
from .scene import DEFAULT_BOUNDS, SceneError, _arr, _get, _points

INV_PI = 1.0 / math.pi
INV_2PI = 0.5 / math.pi
F0_DIELECTRIC = 0.04
EPS_UNIFORM = 0.01
ALPHA_MIN = 1e-8
GRAZING_EPS = 1e-6

DIFFUSE, SPECULAR, FULL = 0, 1, 2


class GrazingAngleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Material fields
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(v, eps=1e-6):
    v = np.clip(np.asarray(v, dtype=np.float64), eps, 1.0 - eps)
    return np.log(v) - np.log1p(-v)


class ConstantMaterial:
    """Spatially constant (m, r, a); raw channels are [m, r, a_r, a_g, a_b]."""

    kind = "constant"

    def __init__(self, m, r, a):
        self.m = float(np.clip(m, 0.0, 1.0))
        self.r = float(np.clip(r, 0.0, 1.0))
        self.a = np.clip(np.asarray(a, dtype=np.float64).reshape(3), 0.0, 1.0)

    @classmethod
    def from_raw(cls, raw):
        v = _sigmoid(np.asarray(raw, dtype=np.float64).reshape(5))
        return cls(v[0], v[1], v[2:])

    def raw(self):
        return _logit(np.concatenate([[self.m, self.r], self.a]))

    def with_raw(self, raw):
        return ConstantMaterial.from_raw(raw)

    def query(self, pts):
        n = _points(pts).shape[0]
        return np.full(n, self.m), np.full(n, self.r), np.broadcast_to(self.a, (n, 3)).copy()

    def query_node(self, raw, pts):
        """Decode a raw (5,) node at points; returns (m (n,1), r (n,1), a (n,3)) nodes."""
        n = _points(pts).shape[0]
        v = ad.sigmoid(raw)
        ones = np.ones((n, 1))
        return ad.take(v, slice(0, 1)) * ones, ad.take(v, slice(1, 2)) * ones, ad.take(v, slice(2, 5)) * ones

    def mean_params(self):
        return self.m, self.r, self.a.copy()

    def to_json(self):
        return {"type": self.kind, "m": self.m, "r": self.r, "a": self.a.tolist()}


class GridMaterial:
    """Trilinear grid of raw parameters (R0, R1, R2, 5), sigmoid-decoded after interpolation."""

    kind = "trilinear-grid"

    def __init__(self, raw, lo=None, hi=None):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 4 or raw.shape[3] != 5:
            raise ValueError("material grid must be (R0, R1, R2, 5)")
        if not np.all(np.isfinite(raw)):
            raise ValueError("material grid values must be finite")
        self._raw = raw
        self.lo = DEFAULT_BOUNDS[0] if lo is None else np.asarray(lo, dtype=np.float64)
        self.hi = DEFAULT_BOUNDS[1] if hi is None else np.asarray(hi, dtype=np.float64)

    @classmethod
    def constant(cls, res, m, r, a, lo=None, hi=None):
        raw = ConstantMaterial(m, r, a).raw()
        res = (res,) * 3 if np.isscalar(res) else tuple(res)
        return cls(np.broadcast_to(raw, res + (5,)).copy(), lo, hi)

    def raw(self):
        return self._raw.copy()

    def with_raw(self, raw):
        return GridMaterial(raw, self.lo, self.hi)

    def query(self, pts):
        v = _sigmoid(kernels.trilinear(self._raw, _points(pts), self.lo, self.hi))
        return v[:, 0], v[:, 1], v[:, 2:]

    def query_node(self, raw, pts):
        v = ad.sigmoid(ad.trilinear(raw, _points(pts), self.lo, self.hi))
        return ad.take(v, (slice(None), slice(0, 1))), ad.take(v, (slice(None), slice(1, 2))), ad.take(
            v, (slice(None), slice(2, 5))
        )

    def mean_params(self):
        v = _sigmoid(self._raw).reshape(-1, 5).mean(axis=0)
        return v[0], v[1], v[2:]

    def to_json(self):
        return {
            "type": self.kind,
            "resolution": list(self._raw.shape[:3]),
            "raw": self._raw.ravel().tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
        }


def material_from_json(d, path="materials"):
    kind = _get(d, "type", path, "constant")
    try:
        if kind == "constant":
            return ConstantMaterial(float(_get(d, "m", path)), float(_get(d, "r", path)), _arr(d, "a", path, (3,)))
        if kind == "trilinear-grid":
            res = tuple(int(x) for x in _get(d, "resolution", path))
            return GridMaterial(
                _arr(d, "raw", path, res + (5,)),
                _arr(d, "lo", path, (3,), DEFAULT_BOUNDS[0]),
                _arr(d, "hi", path, (3,), DEFAULT_BOUNDS[1]),
            )
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(path, str(exc)) from None
    raise SceneError(f"{path}.type", f"unknown material type {kind!r}")


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def make_frame(n):
    """Right-handed orthonormal (t, b) completing unit normals n (..., 3)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def to_world(local, n):
    t, b = make_frame(n)
    return local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n


# ---------------------------------------------------------------------------
# GGX terms (numpy)
# ---------------------------------------------------------------------------


def alpha_of(r):
    return np.maximum(np.asarray(r, dtype=np.float64) ** 2, ALPHA_MIN)


def ndf(r, cos_h):
    """Trowbridge-Reitz D for roughness r at cos(n, h)."""
    a2 = alpha_of(r) ** 2
    c2 = np.asarray(cos_h) ** 2
    return a2 / (math.pi * (c2 * (a2 - 1.0) + 1.0) ** 2)


def ndf_value(r, n, h):
    n = np.asarray(n, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return ndf(r, np.clip(np.sum(n * h, axis=-1), 0.0, 1.0))


def fresnel(f0, cos_vh):
    return f0 + (1.0 - f0) * (1.0 - np.clip(cos_vh, 0.0, 1.0))[..., None] ** 5


def smith_g(r, cos_i, cos_o):
    k = alpha_of(r) / 2.0
    return cos_i / (cos_i * (1.0 - k) + k) * cos_o / (cos_o * (1.0 - k) + k)


def brdf_parts(m, r, a, cos_i, cos_o, cos_h, cos_vh):
    """Diffuse and specular BRDF values, broadcasting m, r (...), a (..., 3).

    Cosines must already be positive; returns (f_d (..., 3), f_s (..., 3)).
    """
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    fd = (1.0 - m)[..., None] * a * INV_PI
    f0 = F0_DIELECTRIC + m[..., None] * (a - F0_DIELECTRIC)
    spec = ndf(r, cos_h) * smith_g(r, cos_i, cos_o) / (4.0 * cos_i * cos_o)
    fs = fresnel(f0, cos_vh) * spec[..., None]
    return fd, fs


def half_vector_cosines(n, wi, wo):
    h = wi + wo
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    return np.sum(n * wi, axis=-1), np.sum(n * wo, axis=-1), np.sum(n * h, axis=-1), np.sum(wo * h, axis=-1)


def eval_brdf(m, r, a, n, wi, wo):
    """Total BRDF for a single configuration or broadcastable batches."""
    n, wi, wo = (np.asarray(v, dtype=np.float64) for v in (n, wi, wo))
    ci, co, ch, cvh = half_vector_cosines(n, wi, wo)
    if np.any(ci <= GRAZING_EPS) or np.any(co <= GRAZING_EPS):
        raise GrazingAngleError("eval_brdf: cos(n, wi) and cos(n, wo) must exceed 1e-6")
    fd, fs = brdf_parts(np.asarray(m, dtype=float), r, a, ci, co, ch, cvh)
    return fd + fs


def brdf_node(m, r, a, cos_i, cos_o, cos_h, cos_vh, lobe):
    """Differentiable BRDF; m, r (P,1) and a (P,3) nodes, cosines (P,J) arrays.

    ``lobe`` (J,) selects the part each sample estimates (DIFFUSE, SPECULAR
    or FULL).  Cosines at invalid samples must be replaced by harmless
    positive values by the caller; their contribution is masked elsewhere.
    """
    lobe = np.asarray(lobe)
    use_d = (lobe != SPECULAR).astype(float)[None, :, None]
    use_s = (lobe != DIFFUSE).astype(float)[None, :, None]
    a3 = ad.reshape(a, (a.shape[0], 1, 3))
    m3 = ad.reshape(m, (m.shape[0], 1, 1))
    fd = (1.0 - m3) * a3 * INV_PI
    alpha = ad.max(r * r, ALPHA_MIN)
    a2 = alpha * alpha
    d = a2 / (math.pi * (cos_h**2 * (a2 - 1.0) + 1.0) ** 2)
    k = alpha * 0.5
    g = cos_i / (cos_i * (1.0 - k) + k) * (cos_o / (cos_o * (1.0 - k) + k))
    spec = d * g / (4.0 * cos_i * cos_o)
    f0 = F0_DIELECTRIC + m3 * (a3 - F0_DIELECTRIC)
    schlick = ((1.0 - np.clip(cos_vh, 0.0, 1.0)) ** 5)[..., None]
    fres = f0 + (1.0 - f0) * schlick
    fs = fres * ad.reshape(spec, spec.shape + (1,))
    return fd * use_d + fs * use_s


# ---------------------------------------------------------------------------
# Samplers; u arguments are uniforms in [0, 1)
# ---------------------------------------------------------------------------


def sample_cosine(n, u1, u2):
    """Polar-mapped cosine-weighted hemisphere; returns (w, pdf)."""
    r = np.sqrt(u1)
    phi = 2.0 * math.pi * u2
    z = np.sqrt(np.maximum(1.0 - u1, 0.0))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    w = to_world(local, np.broadcast_to(n, local.shape))
    return w, z * INV_PI


def sample_uniform_hemisphere(n, u1, u2):
    z = np.asarray(u1, dtype=np.float64)
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = 2.0 * math.pi * u2
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return to_world(local, np.broadcast_to(n, local.shape)), np.full(np.shape(z), INV_2PI)


def sample_ndf_half(r, n, u1, u2):
    """Half-vector with density D(h) cos(n, h)."""
    a2 = alpha_of(r) ** 2
    cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1)
    cz = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sz = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    phi = 2.0 * math.pi * u2
    local = np.stack([sz * np.cos(phi), sz * np.sin(phi), cz], axis=-1)
    return to_world(local, np.broadcast_to(n, local.shape))


def ndf_pdf(r, n, wo, wi):
    """Density over wi of reflecting wo about a D(h) cos(n, h) half-vector."""
    h = wi + wo
    hn = np.linalg.norm(h, axis=-1, keepdims=True)
    h = h / np.maximum(hn, 1e-300)
    ch = np.sum(n * h, axis=-1)
    cvh = np.abs(np.sum(wo * h, axis=-1))
    ok = (ch > 0.0) & (hn[..., 0] > 1e-12) & (cvh > 0.0)
    return np.where(ok, ndf(r, np.clip(ch, 0, 1)) * ch / (4.0 * np.where(ok, cvh, 1.0)), 0.0)


def sample_ndf(r, n, wo, u1, u2):
    """Reflect wo about an NDF half-vector; returns (wi, pdf, accepted)."""
    n = np.asarray(n, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    h = sample_ndf_half(r, n, u1, u2)
    cvh = np.sum(wo * h, axis=-1)
    wi = 2.0 * cvh[..., None] * h - wo
    ok = np.sum(n * wi, axis=-1) > 0.0
    ch = np.sum(n * h, axis=-1)
    pdf = ndf(r, ch) * ch / (4.0 * np.maximum(np.abs(cvh), 1e-300))
    return wi, pdf, ok


def uniform_hemi_pdf(cos):
    return np.where(cos > 0.0, INV_2PI, 0.0)


def diffuse_strategy_pdf(cos, q=None, eps=EPS_UNIFORM):
    """Density of the diffuse-lobe strategy at directions with cosine ``cos``.

    ``q`` is the full-sphere vMF mixture density (``None`` for cosine only).
    """
    cosine = np.maximum(cos, 0.0) * INV_PI
    base = cosine if q is None else 0.5 * q + 0.5 * cosine
    return (1.0 - eps) * base + eps * uniform_hemi_pdf(cos)


def specular_strategy_pdf(r, n, wo, wi, eps=EPS_UNIFORM):
    cos = np.sum(n * wi, axis=-1)
    return (1.0 - eps) * ndf_pdf(r, n, wo, wi) + eps * uniform_hemi_pdf(cos)


def combined_pdf(n, wo, w, lobe, r=None, q=None, eps=EPS_UNIFORM):
    """Density that the sampler for ``lobe`` draws ``w`` from."""
    n, wo, w = (np.asarray(v, dtype=np.float64) for v in (n, wo, w))
    if lobe == SPECULAR:
        return specular_strategy_pdf(r, n, wo, w, eps)
    return diffuse_strategy_pdf(np.sum(n * w, axis=-1), q, eps)


def sample_diffuse_strategy(n, u, vmf_sampler=None, eps=EPS_UNIFORM):
    """Draw from the diffuse-lobe mixture with uniforms u (..., 4).

    ``vmf_sampler(u_lobe, u1, u2)`` returns full-sphere directions; the caller
    evaluates the pdf afterwards with :func:`diffuse_strategy_pdf`.
    Returns (w, strategy code: 0 uniform, 1 vMF, 2 cosine).
    """
    u0 = u[..., 0]
    pick_uniform = u0 < eps
    v = (u0 - eps) / (1.0 - eps)
    pick_vmf = (~pick_uniform) & (v < 0.5) if vmf_sampler is not None else np.zeros_like(pick_uniform)
    w_cos, _ = sample_cosine(n, u[..., 1], u[..., 2])
    w_uni, _ = sample_uniform_hemisphere(n, u[..., 1], u[..., 2])
    w = np.where(pick_uniform[..., None], w_uni, w_cos)
    code = np.where(pick_uniform, 0, 2)
    if vmf_sampler is not None:
        w_vmf = vmf_sampler(u[..., 3], u[..., 1], u[..., 2])
        w = np.where(pick_vmf[..., None], w_vmf, w)
        code = np.where(pick_vmf, 1, code)
    return w, code


def sample_specular_strategy(r, n, wo, u, eps=EPS_UNIFORM):
    """Draw from the specular-lobe mixture; returns (w, accepted)."""
    u0 = u[..., 0]
    pick_uniform = u0 < eps
    w_ndf, _, ok = sample_ndf(r, n, wo, u[..., 1], u[..., 2])
    w_uni, _ = sample_uniform_hemisphere(n, u[..., 1], u[..., 2])
    w = np.where(pick_uniform[..., None], w_uni, w_ndf)
    return w, pick_uniform | ok
