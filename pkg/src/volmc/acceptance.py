"""Acceptance suite: criteria 1-11, shared by ``volmc selftest`` and pytest.

Each check runs at its stated tolerance and returns a Result.  Expensive
artifacts (the fitted occluder sampler and cache) are built once per run and
reused by the checks that need them.
"""

import csv
import dataclasses
import math
import os
import tempfile
import time

import numpy as np
from scipy import stats

from . import autodiff as ad
from . import brdf, cache, cli, estimator, optimize, presets, render, vmf, volume
from .rng import RngStream, stream_key
from .scene import Camera, HomogeneousBox, Scene, derived_normals, unit


@dataclasses.dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} criterion {self.number:2d} {self.name}: {self.detail} [{self.seconds:.1f}s]"


class Context:
    """Per-run scratch space and memoized artifacts."""

    def __init__(self, seed=0, workdir=None, threads=1):
        self.seed = seed
        self.threads = threads
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="volmc-accept-")
            workdir = self._tmp.name
        self.workdir = workdir
        os.makedirs(workdir, exist_ok=True)
        self.memo = {}

    def path(self, *parts):
        p = os.path.join(self.workdir, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def once(self, key, fn):
        if key not in self.memo:
            self.memo[key] = fn()
        return self.memo[key]


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def cap_strata_integral(fn, axis, edges, n, rng):
    """Integral of fn over the sphere by equal-count uniform sampling of nested caps around ``axis``.

    ``edges`` are increasing values of 1 - cos(theta) from 0 to 2; each band
    is sampled uniformly in area, so no density formula of the integrand is used.
    """
    axis = unit(np.asarray(axis, dtype=np.float64))
    per = n // (len(edges) - 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = lo + (hi - lo) * rng.random(per)
        cos_t = 1.0 - s
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
        phi = 2.0 * math.pi * rng.random(per)
        local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
        w = brdf.to_world(local, np.broadcast_to(axis, local.shape))
        total += 2.0 * math.pi * (hi - lo) * float(np.mean(fn(w)))
    return total


def mixture_band_integral(fn, axes, edges, n, rng):
    """Defensive importance sampling: half uniform sphere, half uniform in nested cap bands around each axis.

    The proposal density is piecewise constant (band areas only), so no
    density formula of the integrand enters the estimate.
    """
    axes = unit(np.asarray(axes, dtype=np.float64).reshape(-1, 3))
    n_ax, n_band = axes.shape[0], len(edges) - 1
    areas = 2.0 * math.pi * np.diff(edges)
    n_cap = n // 2
    n_uni = n - n_cap
    z = 1.0 - 2.0 * rng.random(n_uni)
    phi = 2.0 * math.pi * rng.random(n_uni)
    s = np.sqrt(1.0 - z * z)
    w_uni = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    pick = np.floor(rng.random(n_cap) * n_ax).astype(np.int64)
    band = np.floor(rng.random(n_cap) * n_band).astype(np.int64)
    c = 1.0 - (edges[band] + np.diff(edges)[band] * rng.random(n_cap))
    st = np.sqrt(np.maximum(0.0, 1.0 - c * c))
    ph = 2.0 * math.pi * rng.random(n_cap)
    local = np.stack([st * np.cos(ph), st * np.sin(ph), c], axis=1)
    w = np.concatenate([w_uni, brdf.to_world(local, axes[pick])])
    one_minus = 1.0 - np.clip(w @ axes.T, -1.0, 1.0)
    b = np.clip(np.searchsorted(edges, one_minus, side="right") - 1, 0, n_band - 1)
    g = 0.5 / (4.0 * math.pi) + 0.5 * np.sum(1.0 / (n_band * areas[b]), axis=1) / n_ax
    return float(np.mean(fn(w) / g))


def sphere_bins(nz=32, nphi=16):
    return np.linspace(-1.0, 1.0, nz + 1), np.linspace(-math.pi, math.pi, nphi + 1)


def expected_bin_mass(pdf_fn, z_edges, phi_edges, order=8):
    """Per-bin probability by Gauss-Legendre quadrature in (z, phi) (area element dz dphi)."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    nz, nphi = len(z_edges) - 1, len(phi_edges) - 1
    zc = 0.5 * (z_edges[:-1] + z_edges[1:])[:, None] + 0.5 * np.diff(z_edges)[:, None] * gx[None, :]
    pc = 0.5 * (phi_edges[:-1] + phi_edges[1:])[:, None] + 0.5 * np.diff(phi_edges)[:, None] * gx[None, :]
    z = zc[:, None, :, None]
    p = pc[None, :, None, :]
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    w = np.stack(np.broadcast_arrays(s * np.cos(p), s * np.sin(p), z), axis=-1)
    vals = pdf_fn(w.reshape(-1, 3)).reshape(nz, nphi, order, order)
    wt = gw[:, None] * gw[None, :]
    scale = 0.25 * np.diff(z_edges)[:, None] * np.diff(phi_edges)[None, :]
    return np.einsum("abij,ij->ab", vals, wt) * scale


def chi_square_directions(samples, pdf_fn, nz=32, nphi=16, min_expected=5.0, mass=None):
    """Chi-square p-value of direction samples against a density over 512 equal-area bins.

    ``mass`` overrides the quadrature with exact per-bin probabilities (nz, nphi).
    """
    z_edges, phi_edges = sphere_bins(nz, nphi)
    z = np.clip(samples[:, 2], -1.0, 1.0)
    phi = np.arctan2(samples[:, 1], samples[:, 0])
    obs, _, _ = np.histogram2d(z, phi, bins=[z_edges, phi_edges])
    if mass is None:
        mass = expected_bin_mass(pdf_fn, z_edges, phi_edges)
    exp = np.asarray(mass) * samples.shape[0]
    obs, exp = obs.ravel(), exp.ravel()
    empty = exp <= 0.0
    if np.any(obs[empty] > 0):
        return 0.0
    obs, exp = obs[~empty], exp[~empty]
    small = exp < min_expected
    if np.any(small):
        obs = np.append(obs[~small], obs[small].sum())
        exp = np.append(exp[~small], exp[small].sum())
    exp = exp * obs.sum() / exp.sum()
    return float(stats.chisquare(obs, exp).pvalue)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def check_quadrature(ctx):
    """Homogeneous sigma=1 over unit length, N=1024: transmittance = e^-1 within rel 1e-3, < 1 s."""
    t0 = time.perf_counter()
    box = HomogeneousBox([0.0, -1.0, -1.0], [1.0, 1.0, 1.0], 1.0)
    scene = Scene(box, None)
    o = np.array([[-0.5, 0.0, 0.0]])
    d = np.array([[1.0, 0.0, 0.0]])
    t_near, t_far, _ = scene.segment(o, d)
    t = volume.uniform_partition(t_far, 1024, t_near)
    _, tau, _ = volume.quadrature_weights(box, o, d, t, t_far)
    dt = time.perf_counter() - t0
    rel = abs(tau[0] - math.exp(-1.0)) / math.exp(-1.0)
    ok = rel < 1e-3 and dt < 1.0
    return ok, f"tau={tau[0]:.6f} rel err {rel:.2e}, {dt * 1e3:.1f} ms"


def check_surface_sampling(ctx):
    """Categorical surface estimator matches the quadrature value within 4 SE for 100 rays x K in {1,2,4,8}."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(ctx.seed + 2)
    n_rays, n_seg, draws = 100, 16, 100_000
    worst = 0.0
    for ray in range(n_rays):
        # mix of opaque, partial and nearly transparent rays
        sigma = rng.exponential(1.0, n_seg) * 10.0 ** rng.uniform(-2.0, 1.0)
        delta = rng.uniform(0.02, 0.2, n_seg)
        color = rng.random((n_seg, 3))
        att = 1.0 - np.exp(-sigma * delta)
        trans = np.exp(-np.concatenate([[0.0], np.cumsum(sigma * delta)[:-1]]))
        w_oracle = trans * att
        truth = w_oracle @ color
        w = volume.weights_from_sigma(sigma[None], delta[None])[0]
        for k in (1, 2, 4, 8):
            u = rng.random((draws, k))
            idx, mult = volume.sample_surface_indices(np.broadcast_to(w, (draws, n_seg)), k, u)
            est = mult[:, None] * color[idx].sum(axis=1)
            mean = est.mean(axis=0)
            se = est.std(axis=0, ddof=1) / math.sqrt(draws)
            z = np.abs(mean - truth) / np.maximum(se, 1e-12)
            worst = max(worst, float(np.max(np.where(np.abs(mean - truth) < 1e-12, 0.0, z))))
    dt = time.perf_counter() - t0
    return worst <= 4.0 and dt < 120.0, f"worst |z| = {worst:.2f} over {n_rays} rays x 4 K, {dt:.0f}s"


def _cv_shading_point(scene):
    c = np.array([0.35, 0.1, -0.05])
    x = (c + 0.26 * unit(np.array([-1.0, -0.3, 0.1])))[None]
    n, ok = derived_normals(scene.density, x)
    if not ok[0]:
        raise RuntimeError("shading point has no normal")
    return x, n


def check_cv_unbiased(ctx, trials=200_000, chunk=5000):
    """Untrained fast cache: paired CV minus 64-sample reference-only estimate has zero mean (4 SE)."""
    t0 = time.perf_counter()
    scene = presets.two_blob(point_light=False)
    ref = cache.ReferenceCache(scene, n_sec=32)
    fast = cache.FastCache.init(RngStream(ctx.seed, 31), scene.lo, scene.hi).bind(scene)
    x, n = _cv_shading_point(scene)
    sampler = estimator.Sampler()
    s1 = np.zeros(3)
    s2 = np.zeros(3)
    for start in range(0, trials, chunk):
        ids = np.arange(start, min(start + chunk, trials))
        p = ids.size
        sp = estimator.ShadingPoints.at(scene, np.repeat(x, p, 0), np.repeat(n, p, 0), np.repeat(n, p, 0))
        cv = estimator.estimate_lo_cv(
            sp, fast, ref, 64, 16, sampler, stream_key(ctx.seed, 3, 1, ids), stream_key(ctx.seed, 3, 2, ids)
        ).value
        plain = estimator.estimate_lo_plain(sp, ref, 64, sampler, stream_key(ctx.seed, 3, 3, ids)).value
        d = cv - plain
        s1 += d.sum(axis=0)
        s2 += (d * d).sum(axis=0)
    mean = s1 / trials
    var = (s2 - trials * mean * mean) / (trials - 1)
    se = np.sqrt(var / trials)
    z = np.abs(mean) / np.maximum(se, 1e-300)
    dt = time.perf_counter() - t0
    ok = bool(np.all(z <= 4.0)) and dt < 300.0
    return ok, f"paired diff {np.array2string(mean, precision=5)} |z| {np.array2string(z, precision=2)}, {dt:.0f}s"


def _two_blob_points(scene, count=64):
    cam = scene.camera
    o, d = cam.rays()
    t_near, t_far, _ = scene.segment(o, d)
    t = volume.uniform_partition(t_far, 256, t_near)
    w, tau, pts = volume.quadrature_weights(scene.density, o, d, t, t_far)
    hit = np.nonzero(tau < 0.5)[0]
    sel = hit[np.linspace(0, hit.size - 1, count).astype(np.int64)]
    x = pts[sel, w[sel].argmax(axis=1)]
    n, ok = derived_normals(scene.density, x)
    return estimator.ShadingPoints.at(scene, x[ok], n[ok], -d[sel][ok])


def check_cv_variance(ctx, steps=2000, trials=1000):
    """Trained cache (< 10% rel L2 on 1e4 held-out rays) halves the variance at M=4 reference queries."""
    t0 = time.perf_counter()
    scene = presets.two_blob()
    ref = cache.ReferenceCache(scene, n_sec=32)
    rng = RngStream(ctx.seed, 41)
    fc = cache.FastCache.init(rng.spawn(1), scene.lo, scene.hi)
    cache.train_fast_cache(fc, scene, ref, steps, rng.spawn(2), batch=1024, lr=3e-3, lr_final=3e-4)
    x, w = cache.TrainingRays(scene, rng.spawn(3)).draw(rng.spawn(4), 10_000)
    rel = cache.relative_l2(fc, scene, ref, x, w)
    sp = _two_blob_points(scene)
    fast = fc.bind(scene)
    sampler = estimator.Sampler()
    ids = np.arange(sp.size)
    plain, cv = [], []
    for t in range(trials):
        plain.append(estimator.estimate_lo_plain(sp, ref, 4, sampler, stream_key(ctx.seed, 4, t, 1, ids)).value)
        cv.append(
            estimator.estimate_lo_cv(
                sp, fast, ref, 64, 4, sampler, stream_key(ctx.seed, 4, t, 2, ids), stream_key(ctx.seed, 4, t, 3, ids)
            ).value
        )
    v_plain = np.var(plain, axis=0, ddof=1).mean()
    v_cv = np.var(cv, axis=0, ddof=1).mean()
    ratio = v_cv / v_plain
    dt = time.perf_counter() - t0
    ok = rel < 0.10 and ratio <= 0.5
    return ok, f"rel L2 {rel:.3f}, var ratio {ratio:.3f} ({sp.size} points x {trials} trials), {dt:.0f}s"


def _random_mixture(rng, n_lobes, kappa_range):
    axes = unit(rng.normal(size=(n_lobes, 3)))
    kappa = np.exp(rng.uniform(np.log(kappa_range[0]), np.log(kappa_range[1]), n_lobes))
    lam = rng.uniform(0.2, 2.0, n_lobes)
    return vmf.VmfField.single(axes * rng.uniform(0.5, 2.0, (n_lobes, 1)), kappa, lam), axes


def check_vmf(ctx):
    """Normalization (0.5%), sampler chi-square (p > 0.01, 512 bins) and fit-loss gradients (rel 1e-4)."""
    rng = np.random.default_rng(ctx.seed + 5)
    parts = []
    ok = True
    mu = unit(np.array([0.3, -0.5, 0.8]))
    edges = np.array([0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.6, 1.2, 2.0])
    for kappa in (0.1, 5.0, 500.0):
        integ = cap_strata_integral(lambda w: vmf.vmf_pdf(mu, kappa, w), mu, edges, 1_000_000, rng)
        ok &= abs(integ - 1.0) < 5e-3
        parts.append(f"k={kappa:g}:{integ:.4f}")
    field, axes = _random_mixture(rng, 8, (0.5, 200.0))
    x0 = np.zeros((1, 3))
    integ = mixture_band_integral(lambda w: field.pdf(x0, w[None])[0], field.lobes(x0)[0][0], edges, 1_000_000, rng)
    ok &= abs(integ - 1.0) < 5e-3
    parts.append(f"mix8:{integ:.4f}")

    n = 1_000_000
    u = rng.random((n, 2))
    s = vmf.sample_vmf(mu, 10.0, u[:, 0], u[:, 1])
    p_single = chi_square_directions(s, lambda w: vmf.vmf_pdf(mu, 10.0, w))
    mix, _ = _random_mixture(rng, 8, (0.5, 30.0))
    u = rng.random((1, n, 3))
    s = mix.sample(x0, u[..., 0], u[..., 1], u[..., 2])[0]
    p_mix = chi_square_directions(s, lambda w: mix.pdf(x0, w[None])[0])
    ok &= p_single > 0.01 and p_mix > 0.01
    parts.append(f"chi2 p {p_single:.3f}/{p_mix:.3f}")

    gfield = vmf.VmfField.init(np.random.default_rng(ctx.seed + 6), 2, 4, spread=1.5, kappa0=3.0)
    gfield = gfield.with_raw(gfield.raw + 0.3 * rng.normal(size=gfield.raw.shape))
    xs = rng.uniform(-0.8, 0.8, (3, 3))
    ws = unit(rng.normal(size=(3, 5, 3)))
    pdf = rng.uniform(0.05, 1.0, (3, 5))
    target = rng.uniform(0.0, 2.0, (3, 5))
    _, g = vmf.fit_loss_and_grad(gfield, xs, ws, pdf, target)

    def loss_of(params):
        tape = ad.Tape()
        raw = tape.const(params["vmf"].reshape(gfield.flat().shape))
        return float(vmf.fit_loss(gfield, raw, xs, ws, pdf, target).value)

    fd = ad.numerical_grad(loss_of, {"vmf": gfield.raw}, h=1e-6)["vmf"]
    touched = np.abs(fd) > 1e-9
    err = ad.max_rel_err(g[touched], fd[touched])
    ok &= err < 1e-4
    parts.append(f"grad rel err {err:.1e}")
    return bool(ok), ", ".join(parts)


def occluder_artifacts(ctx):
    """Fitted vMF field and trained fast cache for the occluder scene (built once per run)."""

    def build():
        scene = presets.occluder()
        ref = cache.ReferenceCache(scene, n_sec=32)
        rng = RngStream(ctx.seed, 61)
        field, trace = optimize.fit_vmf_scene(scene, 800, rng.spawn(1), res=8, lobes=32, lr=0.1, seed=ctx.seed, ref_fn=ref)
        field_path = ctx.path("occluder", "vmf.json")
        field.save(field_path)
        return {"scene": scene, "ref": ref, "field": field, "field_path": field_path, "trace": trace}

    return ctx.once("occluder", build)


def occluder_cache(ctx):
    def build():
        art = occluder_artifacts(ctx)
        rng = RngStream(ctx.seed, 62)
        fc = cache.FastCache.init(rng.spawn(1), art["scene"].lo, art["scene"].hi)
        cache.train_fast_cache(fc, art["scene"], art["ref"], 2000, rng.spawn(2), lr_final=3e-4)
        path = ctx.path("occluder", "cache.bin")
        fc.save(path)
        return path

    return ctx.once("occluder-cache", build)


def check_occlusion_sampling(ctx, trials=1000):
    """Fitted sampler: >= 2x variance reduction at 16 spp and shadowed/lit pdf ratio toward the light < 0.2."""
    t0 = time.perf_counter()
    art = occluder_artifacts(ctx)
    scene, field, ref = art["scene"], art["field"], art["ref"]
    light = scene.emitters[0].position
    x_shadow = np.array([[-0.5, 0.0, -0.74]])
    x_lit = np.array([[0.5, 0.0, -0.74]])

    def toward(x):
        w = unit(light - x[0])
        return float(field.pdf(x, w[None, None])[0, 0])

    pdf_ratio = toward(x_shadow) / toward(x_lit)
    pix = render.spread_pixels(scene.camera, 64, scene)
    cfg = estimator.EstimatorConfig("ref", m=16)
    cos = render.pixel_trials(scene, pix, cfg, estimator.Sampler(), trials, ctx.seed + 6, ref, None, ctx.threads)
    fit = render.pixel_trials(scene, pix, cfg, estimator.Sampler(field), trials, ctx.seed + 6, ref, None, ctx.threads)
    reduction = np.var(cos, axis=0, ddof=1).mean() / np.var(fit, axis=0, ddof=1).mean()
    dt = time.perf_counter() - t0
    ok = reduction >= 2.0 and pdf_ratio < 0.2
    return ok, f"variance reduction {reduction:.2f}x, pdf ratio {pdf_ratio:.3f}, {dt:.0f}s (incl. fit)"


def _directional_albedo(r, cos_o, n, rng):
    """Integral of f (n.wi) over wi for m=0, a=1 by cosine-weighted MC."""
    nn = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n, 3))
    wo = np.array([math.sqrt(1.0 - cos_o**2), 0.0, cos_o])
    u = rng.random((n, 2))
    wi, pdf = brdf.sample_cosine(nn, u[:, 0], u[:, 1])
    ci, co, ch, cvh = brdf.half_vector_cosines(nn, wi, np.broadcast_to(wo, wi.shape))
    ok = ci > brdf.GRAZING_EPS
    fd, fs = brdf.brdf_parts(np.zeros(n), np.full(n, r), np.ones((n, 3)), np.where(ok, ci, 1.0), co, ch, cvh)
    val = np.where(ok, (fd + fs)[:, 0] * ci / pdf, 0.0)
    return float(val.mean())


def check_ggx(ctx):
    """NDF normalization (1%), reciprocity (1e-6) and the white-furnace bound (<= 1.02)."""
    rng = np.random.default_rng(ctx.seed + 7)
    parts = []
    z = np.array([0.0, 0.0, 1.0])
    edges = np.array([0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.4, 1.0])
    norm_ok = True
    for r in (0.1, 0.5, 1.0):
        integ = cap_strata_integral(lambda h: brdf.ndf(r, h[:, 2]) * h[:, 2], z, edges, 1_000_000, rng)
        norm_ok &= abs(integ - 1.0) < 0.01
        parts.append(f"NDF r={r}:{integ:.4f}")

    n = 10_000
    nrm = unit(rng.normal(size=(n, 3)))
    wi = brdf.to_world(unit(np.abs(rng.normal(size=(n, 3))) + [0.0, 0.0, 0.05]), nrm)
    wo = brdf.to_world(unit(np.abs(rng.normal(size=(n, 3))) + [0.0, 0.0, 0.05]), nrm)
    m, r, a = rng.random(n), rng.uniform(0.05, 1.0, n), rng.random((n, 3))
    f1 = brdf.eval_brdf(m, r, a, nrm, wi, wo)
    f2 = brdf.eval_brdf(m, r, a, nrm, wo, wi)
    recip = ad.max_rel_err(f1, f2, floor=1e-300)
    parts.append(f"reciprocity {recip:.1e}")

    furnace = {}
    for r in (0.2, 0.5, 1.0):
        furnace[r] = max(_directional_albedo(r, c, 1_000_000, rng) for c in (1.0, 0.7, 0.3))
    worst = max(furnace.values())
    parts.append("furnace max " + "/".join(f"{v:.4f}" for v in furnace.values()))
    ok = norm_ok and recip < 1e-6 and worst <= 1.02
    return ok, ", ".join(parts)


def check_gradient_trick(ctx, n=1_000_000):
    """Toy model: trick gradient within 5% of the analytic one; naive gradient biased by > 3 SE."""
    trick, naive, analytic = optimize.toy_gradients(0.5, n, np.random.default_rng(ctx.seed + 8))
    t_mean = trick.mean()
    n_mean, n_se = naive.mean(), naive.std(ddof=1) / math.sqrt(n)
    rel = abs(t_mean - analytic) / abs(analytic)
    bias_z = abs(n_mean - analytic) / n_se
    ok = rel < 0.05 and bias_z > 3.0
    return ok, f"analytic {analytic:.4f}, trick {t_mean:.4f} (rel {rel:.3f}), naive {n_mean:.4f} ({bias_z:.0f} SE off)"


def check_inversion(ctx):
    """Diffuse albedo within 0.05/channel and glossy roughness within 0.1 from 16 views of 32x32, < 10 min."""
    t0 = time.perf_counter()
    cases = {
        "diffuse": brdf.ConstantMaterial(0.0, 1.0, (0.7, 0.3, 0.2)),
        "glossy": brdf.ConstantMaterial(1.0, 0.2, (0.9, 0.8, 0.6)),
    }
    views = Camera.orbit(16, width=32, height=32, fov_deg=30.0)
    out = {}
    for name, truth in cases.items():
        scene = presets.sphere(material=truth)
        images = cli.synth_views(scene, views, 16, ctx.seed)
        cfg = optimize.InvertConfig(steps=250, batch=512, lr=0.05, lr_final=0.005, cache_steps=300, seed=ctx.seed, log_every=0)
        init = brdf.ConstantMaterial(0.05, 0.5, (0.5, 0.5, 0.5))
        mat, _, _, _ = optimize.invert_scene(scene, views, images, init, cfg, truth=truth)
        out[name] = mat
    dt = time.perf_counter() - t0
    a_err = float(np.max(np.abs(out["diffuse"].a - cases["diffuse"].a)))
    r_err = abs(out["glossy"].r - cases["glossy"].r)
    ok = a_err <= 0.05 and r_err <= 0.1 and dt < 600.0
    return ok, f"albedo err {a_err:.3f}, roughness err {r_err:.3f} (r={out['glossy'].r:.3f}), {dt:.0f}s"


def _run_cli(argv):
    code = cli.main(argv)
    if code != 0:
        raise RuntimeError(f"volmc {' '.join(argv)} exited {code}")


def check_determinism(ctx):
    """Equal seeds with different --threads give byte-identical PFM/PPM/CSV and parameter files."""
    files = {}
    for threads in (1, 3):
        out = ctx.path(f"det{threads}", "x")[:-2]
        common = ["--seed", str(ctx.seed + 10), "--threads", str(threads), "--out", out]
        _run_cli(["fit-vmf", "two-blob", "--steps", "10", "--batch", "64"] + common)
        _run_cli(["fit-cache", "two-blob", "--steps", "10", "--batch", "128"] + common)
        vm, cb = os.path.join(out, "vmf.json"), os.path.join(out, "cache.bin")
        _run_cli(["render", "two-blob", "--spp", "2", "--width", "24", "--height", "24", "--vmf", vm, "--cache", cb] + common)
        _run_cli(["variance", "two-blob", "--pixels", "8", "--trials", "4", "--vmf", vm, "--cache", cb] + common)
        files[threads] = {
            f: open(os.path.join(out, f), "rb").read()
            for f in ("render.pfm", "render.ppm", "variance.csv", "vmf.json", "cache.bin")
        }
    same = [f for f in files[1] if files[1][f] == files[3][f]]
    ok = len(same) == len(files[1])
    return ok, f"{len(same)}/{len(files[1])} outputs byte-identical across --threads 1/3"


def check_variance_ordering(ctx, trials=500):
    """Occluder scene, 16 spp: variance CSV ordered neither >= vMF-only >= vMF+fast-cache."""
    t0 = time.perf_counter()
    art = occluder_artifacts(ctx)
    cache_path = occluder_cache(ctx)
    out = ctx.path("variance", "x")[:-2]
    _run_cli(
        ["variance", "occluder", "--spp", "16", "--pixels", "64", "--trials", str(trials), "--vmf", art["field_path"],
         "--cache", cache_path, "--seed", str(ctx.seed + 11), "--threads", str(ctx.threads), "--out", out]
    )
    means = variance_by_estimator(os.path.join(out, "variance.csv"))
    v = [means["neither"], means["vmf"], means["vmf+cache"]]
    ok = v[0] >= v[1] >= v[2]
    dt = time.perf_counter() - t0
    return ok, "mean variance neither/vmf/vmf+cache = " + "/".join(f"{x:.4g}" for x in v) + f", {dt:.0f}s"


def variance_by_estimator(path):
    """Mean per-pixel, per-channel variance of each estimator in a variance CSV."""
    acc = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            acc.setdefault(row["estimator"], []).append([float(row[k]) for k in ("var_r", "var_g", "var_b")])
    return {k: float(np.mean(v)) for k, v in acc.items()}


CRITERIA = {
    1: ("quadrature", check_quadrature),
    2: ("surface-sampling-unbiased", check_surface_sampling),
    3: ("control-variate-unbiased", check_cv_unbiased),
    4: ("control-variate-variance", check_cv_variance),
    5: ("vmf-machinery", check_vmf),
    6: ("occlusion-aware-sampling", check_occlusion_sampling),
    7: ("ggx-properties", check_ggx),
    8: ("gradient-trick", check_gradient_trick),
    9: ("desk-scale-inversion", check_inversion),
    10: ("determinism", check_determinism),
    11: ("variance-ordering", check_variance_ordering),
}


def run_one(number, ctx):
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        ok, detail = fn(ctx)
    except Exception as exc:  # a crash is a failure of that criterion, not of the suite
        ok, detail = False, f"error: {type(exc).__name__}: {exc}"
    return Result(number, name, bool(ok), detail, time.perf_counter() - t0)


def run(only=None, seed=0, workdir=None, threads=1, echo=True):
    ctx = Context(seed, workdir, threads)
    results = []
    for number in sorted(only or CRITERIA):
        r = run_one(number, ctx)
        if echo:
            print(r.line(), flush=True)
        results.append(r)
    return results


def summary_table(results):
    lines = [f"{'#':>3}  {'criterion':<28} {'result':<6} {'time':>7}", "-" * 50]
    for r in results:
        lines.append(f"{r.number:>3}  {r.name:<28} {'PASS' if r.passed else 'FAIL':<6} {r.seconds:>6.1f}s")
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines)
