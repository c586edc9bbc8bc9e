"""Monte Carlo estimators of outgoing radiance and full pixel estimates.

Shading points are processed in batches of P.  Secondary directions are
split ceil(J/2) diffuse-strategy / floor(J/2) specular-strategy; each half
estimates its own BRDF lobe so the sum is unbiased for the full BRDF.

The control-variate estimator adds M' fast-cache taps to M paired
(reference - fast) taps drawn from an independent stream.  Every sample
record keeps the geometric terms so the same estimate can be rebuilt as a
differentiable expression of the material parameters.
"""

import dataclasses
import logging
import os

import numpy as np

from . import autodiff as ad
from . import brdf, volume
from .rng import Purpose, stream_key, uniforms
from .scene import derived_normals

log = logging.getLogger(__name__)

U_PER_SAMPLE = 4


def cv_broken():
    """Test hook: drop the correction term of the control variate."""
    return os.environ.get("VOLMC_BREAK_CV", "") not in ("", "0")


@dataclasses.dataclass
class ShadingPoints:
    x: np.ndarray
    n: np.ndarray
    wo: np.ndarray
    m: np.ndarray
    r: np.ndarray
    a: np.ndarray
    offset: float = 0.0

    @property
    def size(self):
        return self.x.shape[0]

    @property
    def origins(self):
        return self.x + self.offset * self.n

    @classmethod
    def at(cls, scene, x, n, wo):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        m, r, a = scene.materials.query(x)
        n = np.broadcast_to(np.asarray(n, dtype=np.float64), x.shape)
        wo = np.broadcast_to(np.asarray(wo, dtype=np.float64), x.shape)
        return cls(x, n, wo, m, r, a, scene.ray_offset)


@dataclasses.dataclass
class SampleSet:
    """Secondary directions for P points x J samples plus their estimator terms."""

    w: np.ndarray
    pdf: np.ndarray
    lobe: np.ndarray
    cos_i: np.ndarray
    cos_o: np.ndarray
    cos_h: np.ndarray
    cos_vh: np.ndarray
    valid: np.ndarray
    scale: np.ndarray
    strategy: np.ndarray

    @property
    def count(self):
        return self.w.shape[1]

    def brdf(self, sp):
        """BRDF part estimated by each sample (P, J, 3), zero where invalid."""
        ci = np.where(self.valid, self.cos_i, 1.0)
        co = np.where(self.valid, self.cos_o, 1.0)
        fd, fs = brdf.brdf_parts(sp.m[:, None], sp.r[:, None], sp.a[:, None, :], ci, co, self.cos_h, self.cos_vh)
        use_d = (self.lobe != brdf.SPECULAR)[None, :, None]
        use_s = (self.lobe != brdf.DIFFUSE)[None, :, None]
        f = np.where(use_d, fd, 0.0) + np.where(use_s, fs, 0.0)
        return np.where(self.valid[..., None], f, 0.0)

    def coef(self, sp):
        """Per-sample weight f cos / (p n_lobe) so that Lo = sum_j coef_j L_j."""
        return self.brdf(sp) * self.scale[..., None]


class Sampler:
    """Secondary-direction sampler: diffuse strategy (optionally with vMF) plus NDF."""

    def __init__(self, vmf=None, eps=brdf.EPS_UNIFORM):
        self.vmf = vmf
        self.eps = eps

    @property
    def name(self):
        return "vmf" if self.vmf is not None else "cosine"

    def draw(self, sp, count, u):
        """Draw ``count`` directions per point from uniforms u (P, count, 4)."""
        p = sp.size
        nd = (count + 1) // 2
        ns = count // 2
        lobe = np.full(count, brdf.DIFFUSE if ns else brdf.FULL)
        lobe[nd:] = brdf.SPECULAR
        n = sp.n[:, None, :]
        wo = sp.wo[:, None, :]
        ud, us = u[:, :nd], u[:, nd:]
        nb = np.broadcast_to(n, (p, nd, 3))
        if self.vmf is not None:
            draw, density = self.vmf.sampler_at(sp.x)
            wd, code = brdf.sample_diffuse_strategy(nb, ud, draw, self.eps)
            q = density(wd)
        else:
            wd, code = brdf.sample_diffuse_strategy(nb, ud, None, self.eps)
            q = None
        pd = brdf.diffuse_strategy_pdf(np.sum(nb * wd, axis=-1), q, self.eps)
        okd = np.ones((p, nd), bool)
        if ns:
            nsb = np.broadcast_to(n, (p, ns, 3))
            wob = np.broadcast_to(wo, (p, ns, 3))
            rs = sp.r[:, None]
            wsp, oks = brdf.sample_specular_strategy(rs, nsb, wob, us, self.eps)
            ps = brdf.specular_strategy_pdf(rs, nsb, wob, wsp, self.eps)
            w = np.concatenate([wd, wsp], axis=1)
            pdf = np.concatenate([pd, ps], axis=1)
            ok = np.concatenate([okd, oks], axis=1)
            code = np.concatenate([code, np.full((p, ns), 3)], axis=1)
        else:
            w, pdf, ok = wd, pd, okd
        ci, co, ch, cvh = brdf.half_vector_cosines(n, w, wo)
        valid = ok & (ci > brdf.GRAZING_EPS) & (co > brdf.GRAZING_EPS) & (pdf > 0.0)
        n_lobe = np.where(lobe == brdf.SPECULAR, max(ns, 1), nd).astype(float)
        scale = np.where(valid, ci / np.where(valid, pdf, 1.0), 0.0) / n_lobe[None, :]
        return SampleSet(w, pdf, lobe, ci, co, ch, cvh, valid, scale, code)


def sample_uniforms(keys, count):
    return uniforms(keys, count * U_PER_SAMPLE).reshape(np.shape(keys) + (count, U_PER_SAMPLE))


def _tap(cache_fn, sp, ss):
    o = np.repeat(sp.origins, ss.count, axis=0)
    return cache_fn(o, ss.w.reshape(-1, 3)).reshape(sp.size, ss.count, 3)


@dataclasses.dataclass
class RadianceEstimate:
    """Outgoing radiance (P, 3) plus the sample records that produced it.

    ``records`` is a list of (SampleSet, L) pairs with Lo = sum over records
    of sum_j coef_j L_j.
    """

    value: np.ndarray
    records: list
    counts: dict

    def per_sample(self, sp):
        """Per-tap contributions concatenated over records (P, J_total, 3)."""
        return np.concatenate([ss.coef(sp) * li for ss, li in self.records], axis=1)


def estimate_lo_plain(sp, cache_fn, m, sampler, keys):
    """(1/M) sum f L cos / p with L from ``cache_fn``; keys (P,) select the streams."""
    if m < 1:
        raise ValueError("M must be >= 1")
    ss = sampler.draw(sp, m, sample_uniforms(keys, m))
    li = _tap(cache_fn, sp, ss)
    value = np.sum(ss.coef(sp) * li, axis=1)
    return RadianceEstimate(value, [(ss, li)], {"M": m})


def estimate_lo_cv(sp, fast_fn, ref_fn, m_fast, m, sampler, keys_fast, keys_delta):
    """Fast-cache estimate over M' taps plus the (reference - fast) correction over M taps."""
    if m_fast < 1 or m < 1:
        raise ValueError("M' and M must be >= 1")
    if np.any(np.asarray(keys_fast) == np.asarray(keys_delta)):
        raise ValueError("control-variate sample sets must use distinct streams")
    s1 = sampler.draw(sp, m_fast, sample_uniforms(keys_fast, m_fast))
    l1 = _tap(fast_fn, sp, s1)
    value = np.sum(s1.coef(sp) * l1, axis=1)
    records = [(s1, l1)]
    s2 = sampler.draw(sp, m, sample_uniforms(keys_delta, m))
    l_ref = _tap(ref_fn, sp, s2)
    if not cv_broken():
        diff = l_ref - _tap(fast_fn, sp, s2)
        value = value + np.sum(s2.coef(sp) * diff, axis=1)
        records.append((s2, diff))
    return RadianceEstimate(value, records, {"M'": m_fast, "M": m})


def lo_node(sp, material, raw, est):
    """Rebuild ``est.value`` as a differentiable function of the raw material parameters."""
    m, r, a = material.query_node(raw, sp.x)
    total = None
    for ss, li in est.records:
        valid = ss.valid
        ci = np.where(valid, ss.cos_i, 1.0)
        co = np.where(valid, ss.cos_o, 1.0)
        f = brdf.brdf_node(m, r, a, ci, co, ss.cos_h, ss.cos_vh, ss.lobe)
        term = ad.sum(f * (ss.scale[..., None] * li), axis=1)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# Pixel estimates
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class EstimatorConfig:
    mode: str = "cv"  # cv | ref | fast
    k: int = 1
    m: int = 16
    m_fast: int = 64
    n: int = 64

    def __post_init__(self):
        if self.mode not in ("cv", "ref", "fast"):
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if min(self.k, self.m, self.m_fast, self.n) < 1:
            raise ValueError("sample counts must be >= 1")


@dataclasses.dataclass
class PixelEstimate:
    value: np.ndarray
    base: np.ndarray  # background plus emission, independent of the material
    multiplier: np.ndarray
    rows: np.ndarray
    points: ShadingPoints
    lo: RadianceEstimate
    degenerate: int
    weights: np.ndarray
    sample_points: np.ndarray


def pixel_keys(seed, pixel, trial, purpose, sub=0):
    return stream_key(seed, pixel, trial, int(purpose), sub)


def estimate_pixels(scene, origins, dirs, pixel, trial, seed, cfg, sampler, ref_fn=None, fast_fn=None):
    """Full pixel estimates for rays (R, 3): quadrature, K surface draws, shading, background.

    ``pixel`` (R,) and ``trial`` (scalar or (R,)) select the random streams,
    so any pixel can be reproduced in isolation.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    pixel = np.asarray(pixel, dtype=np.int64).reshape(-1)
    trial = np.broadcast_to(np.asarray(trial, dtype=np.int64), pixel.shape)
    t_near, t_far, bg = scene.segment(origins, dirs)
    u_part = uniforms(pixel_keys(seed, pixel, trial, Purpose.PARTITION), cfg.n)
    t = volume.stratified_partition(t_far, cfg.n, u_part, t_near)
    w, tau, pts = volume.quadrature_weights(scene.density, origins, dirs, t, t_far)
    u_surf = uniforms(pixel_keys(seed, pixel, trial, Purpose.SURFACE), cfg.k)
    idx, mult = volume.sample_surface_indices(w, cfg.k, u_surf)
    value = tau[:, None] * bg
    if scene.density.emissive:
        # emission needs no shading frame, so its quadrature sum is added exactly
        value = value + volume.composite(w, scene.density.emission(pts.reshape(-1, 3)).reshape(pts.shape), 0.0)

    rows, ks = np.nonzero(idx >= 0)
    x = pts[rows, idx[rows, ks]]
    normals, ok = derived_normals(scene.density, x)
    degenerate = int(np.count_nonzero(~ok))
    if degenerate:
        log.debug("%d sampled points with degenerate normals contribute zero", degenerate)
    rows, ks, x, normals = rows[ok], ks[ok], x[ok], normals[ok]
    sp = ShadingPoints.at(scene, x, normals, -dirs[rows])
    pix, tri = pixel[rows], trial[rows]
    if sp.size:
        if cfg.mode == "cv":
            lo = estimate_lo_cv(
                sp,
                fast_fn,
                ref_fn,
                cfg.m_fast,
                cfg.m,
                sampler,
                pixel_keys(seed, pix, tri, Purpose.FAST, ks),
                pixel_keys(seed, pix, tri, Purpose.DELTA, ks),
            )
        elif cfg.mode == "ref":
            lo = estimate_lo_plain(sp, ref_fn, cfg.m, sampler, pixel_keys(seed, pix, tri, Purpose.PLAIN, ks))
        else:
            lo = estimate_lo_plain(sp, fast_fn, cfg.m_fast, sampler, pixel_keys(seed, pix, tri, Purpose.FAST, ks))
    base = value.copy()
    if sp.size:
        np.add.at(value, rows, mult[rows, None] * lo.value)
    else:
        lo = RadianceEstimate(np.zeros((0, 3)), [], {})
    return PixelEstimate(value, base, mult, rows, sp, lo, degenerate, w, pts)


def pixel_node(scene, raw, est):
    """Differentiable pixel values (R, 3) w.r.t. the raw material parameters."""
    base = est.base
    tape = raw.tape
    if est.points.size == 0:
        return tape.const(base)
    lo = lo_node(est.points, scene.materials, raw, est.lo)
    n_rays = base.shape[0]
    onehot = np.zeros((n_rays, est.points.size))
    onehot[est.rows, np.arange(est.points.size)] = est.multiplier[est.rows]
    return ad.matmul(onehot, lo) + base


def estimate_shading(scene, x, n, wo, cache_fn, m, sampler, keys):
    """Convenience: plain estimate at explicit shading points."""
    sp = ShadingPoints.at(scene, x, n, wo)
    return estimate_lo_plain(sp, cache_fn, m, sampler, keys)


# ---------------------------------------------------------------------------
# Variance statistics
# ---------------------------------------------------------------------------

CSV_HEADER = "estimator,spp,mean_r,mean_g,mean_b,var_r,var_g,var_b,se_r,se_g,se_b"


def summarize(samples):
    """Mean, unbiased variance and standard error over axis 0 of (T, ..., 3)."""
    samples = np.asarray(samples, dtype=np.float64)
    t = samples.shape[0]
    if t < 2:
        raise ValueError("need at least 2 trials")
    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1)
    return mean, var, np.sqrt(var / t)


def variance_rows(name, spp, samples):
    """CSV rows (one per pixel) for trial samples shaped (T, P, 3)."""
    mean, var, se = summarize(samples)
    rows = []
    for p in range(mean.shape[0]):
        vals = np.concatenate([mean[p], var[p], se[p]])
        rows.append(f"{name},{spp}," + ",".join(f"{v:.10g}" for v in vals))
    return rows


def variance_report(variants, trials, spp):
    """Run each ``name -> fn(trial) -> (P, 3)`` variant for ``trials`` trials; returns CSV text."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    lines = [CSV_HEADER]
    for name, fn in variants.items():
        samples = np.stack([fn(t) for t in range(trials)])
        lines += variance_rows(name, spp, samples)
    return "\n".join(lines) + "\n"
