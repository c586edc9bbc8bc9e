"""Losses and the two-stage material inversion.

Stage 1 fits the fast cache and the vMF sampler against the reference
cache with geometry fixed.  Stage 2 optimizes the raw material parameters
with the gradient-trick photometric loss, continuing to refit the cache and
sampler on the secondary rays the renderer already traced.
"""

import dataclasses
import logging
import math

import numpy as np

from . import autodiff as ad
from . import brdf, cache, estimator, vmf
from .rng import Purpose, RngStream, stream_key, uniforms
from .scene import derived_normals

log = logging.getLogger(__name__)

LUMINANCE_FLOOR = 1e-3
IRRADIANCE_FLOOR = 1e-3
SMOOTH_FLOOR = 1e-4


@dataclasses.dataclass
class LossWeights:
    c_normals: float = 1.0
    c_brdf: float = 0.05
    eps: float = 0.01
    c_density: float = 0.0

    def __post_init__(self):
        if min(self.c_normals, self.c_brdf, self.eps, self.c_density) < 0:
            raise ValueError("loss weights must be >= 0")


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def photometric_gradient_trick(a, b, target, cache_luminance, stream_a=None, stream_b=None, delta=LUMINANCE_FLOOR):
    """sum_c 2 (I - A) sg(I - B) / sg(cache + delta), averaged over rays.

    ``a`` is a node, ``b`` a detached value from an independent estimate.
    Its gradient is unbiased for that of the squared error of E[A].
    """
    if stream_a is not None and stream_a == stream_b:
        raise ValueError("A and B must come from distinct sample streams")
    b = b.value if isinstance(b, ad.Node) else np.asarray(b, dtype=np.float64)
    cl = cache_luminance.value if isinstance(cache_luminance, ad.Node) else np.asarray(cache_luminance)
    target = np.asarray(target, dtype=np.float64)
    weight = 2.0 * (target - b) / (np.maximum(cl, 0.0) + delta)
    per_ray = ad.sum((target - a) * weight, axis=-1)
    return ad.mean(per_ray)


def naive_squared_error(a, target, cache_luminance, delta=LUMINANCE_FLOOR):
    """Single-estimate relative squared error; its gradient is biased for noisy A."""
    cl = np.asarray(cache_luminance.value if isinstance(cache_luminance, ad.Node) else cache_luminance)
    r = np.asarray(target, dtype=np.float64) - a
    return ad.mean(ad.sum(r * r / (np.maximum(cl, 0.0) + delta), axis=-1))


def normal_loss(weights, n_pred, n_derived, c_normals=1.0):
    """C sum_k w_k |n_pred - n_derived|^2; n_pred is a node (K, 3)."""
    d = n_pred - np.asarray(n_derived, dtype=np.float64)
    return c_normals * ad.sum(ad.sum(d * d, axis=-1) * np.asarray(weights, dtype=np.float64))


def smoothness_loss(material, raw, points, weights, xi, lam, c_brdf):
    """C sum_k w_k sum_beta |b(x) - b(x+xi)| / max(b(x), b(x+xi), 1e-4) * lambda_k.

    ``xi`` are the perturbations (K, 3) and ``lam`` the pseudo-albedo
    differences (K,); beta runs over m, r and the three albedo channels.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m0, r0, a0 = material.query_node(raw, points)
    m1, r1, a1 = material.query_node(raw, points + xi)
    b0 = ad.concat([m0, r0, a0], axis=1)
    b1 = ad.concat([m1, r1, a1], axis=1)
    rel = ad.abs(b0 - b1) / ad.max(ad.max(b0, b1), SMOOTH_FLOOR)
    w = np.asarray(weights, dtype=np.float64) * np.asarray(lam, dtype=np.float64)
    return c_brdf * ad.sum(ad.sum(rel, axis=1) * w)


def density_l1(tape, values, c_density=1.0):
    """C sum |values|; ``values`` may be a node or a plain array (frozen density)."""
    if values is None:
        return tape.const(0.0)
    if not isinstance(values, ad.Node):
        values = tape.const(values)
    return c_density * ad.sum(ad.abs(values))


TERMS = ("photometric", "normal", "smooth", "density")


def total_loss(tape, components, enabled=None):
    """Sum of the enabled loss components; disabled or missing ones count as 0."""
    total = tape.const(0.0)
    for name in TERMS:
        node = components.get(name)
        if node is None or (enabled is not None and not enabled.get(name, True)):
            continue
        total = total + node
    return total


# ---------------------------------------------------------------------------
# Toy model for the gradient trick
# ---------------------------------------------------------------------------


def toy_gradients(theta, n, rng, target=1.0, weight=1.0, noise="multiplicative"):
    """Per-trial dLoss/dtheta for estimator L(theta) = theta X or theta + N.

    Multiplicative noise uses X ~ U(0, 2); additive uses N ~ U(-1, 1).
    Returns (trick gradients, naive gradients, analytic objective gradient).
    """
    u = rng.random((n, 2))
    if noise == "multiplicative":
        xa, xb = 2.0 * u[:, 0], 2.0 * u[:, 1]
        la, lb = theta * xa, theta * xb
        dla = xa
        analytic = -2.0 * (target - theta) / weight
    elif noise == "additive":
        la, lb = theta + (2.0 * u[:, 0] - 1.0), theta + (2.0 * u[:, 1] - 1.0)
        dla = np.ones(n)
        analytic = -2.0 * (target - theta) / weight
    else:
        raise ValueError(noise)
    trick = -2.0 * dla * (target - lb) / weight
    naive = -2.0 * dla * (target - la) / weight
    return trick, naive, analytic


def toy_gradients_autodiff(theta, xa, xb, target=1.0, weight=1.0):
    """Batch-mean trick gradient of the multiplicative toy model, through the tape."""
    tape = ad.Tape()
    th = tape.param("theta", np.array([theta]))
    a = th * np.asarray(xa)
    loss = photometric_gradient_trick(
        ad.reshape(a, (-1, 1)), (theta * np.asarray(xb)).reshape(-1, 1), np.full((len(xa), 1), target),
        np.full((len(xa), 1), weight - LUMINANCE_FLOOR),
    )
    return tape.backward(loss)["theta"][0]


# ---------------------------------------------------------------------------
# Pseudo-albedo for the smoothness weights
# ---------------------------------------------------------------------------


def pseudo_albedo(scene, material, radiance_fn, x, n, wo, keys, samples=32):
    """Outgoing radiance over Lambertian-white irradiance, both from cosine samples."""
    sp = estimator.ShadingPoints(x, n, wo, *material.query(x), scene.ray_offset)
    u = uniforms(keys, 2 * samples).reshape(x.shape[0], samples, 2)
    nb = np.broadcast_to(n[:, None, :], (x.shape[0], samples, 3))
    w, pdf = brdf.sample_cosine(nb, u[..., 0], u[..., 1])
    li = radiance_fn(np.repeat(sp.origins, samples, axis=0), w.reshape(-1, 3)).reshape(x.shape[0], samples, 3)
    ci, co, ch, cvh = brdf.half_vector_cosines(nb, w, np.broadcast_to(wo[:, None, :], w.shape))
    ok = (ci > brdf.GRAZING_EPS) & (co > brdf.GRAZING_EPS)
    ci_s, co_s = np.where(ok, ci, 1.0), np.where(ok, co, 1.0)
    fd, fs = brdf.brdf_parts(sp.m[:, None], sp.r[:, None], sp.a[:, None, :], ci_s, co_s, ch, cvh)
    wgt = np.where(ok, ci_s / np.maximum(pdf, 1e-300), 0.0)[..., None] / samples
    out = np.sum((fd + fs) * wgt * li, axis=1)
    irr = np.sum(wgt * li, axis=1) / math.pi
    return out / np.maximum(irr, IRRADIANCE_FLOOR)


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class InvertConfig:
    steps: int = 400
    batch: int = 1024
    lr: float = 0.03
    lr_final: float = 0.003
    m: int = 16
    m_fast: int = 64
    n: int = 64
    k: int = 1
    n_sec: int = 32
    cache_steps: int = 200
    cache_lr: float = 3e-3
    cache_batch: int = 512
    vmf_steps: int = 0
    vmf_lr: float = 0.02
    vmf_lobes: int = 16
    vmf_res: int = 1
    refit_cache: bool = True
    refit_vmf: bool = False
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    use_vmf: bool = False
    seed: int = 0
    log_every: int = 50
    render_every: int = 0


class _RecordingReference:
    """Reference-cache wrapper that remembers the last batch of taps."""

    def __init__(self, ref):
        self.ref = ref
        self.last = None

    def __call__(self, x, w):
        rad, op = self.ref.query_with_opacity(x, w)
        self.last = (x, w, rad, op)
        return rad


def param_errors(material, truth):
    m, r, a = material.mean_params()
    tm, tr, ta = truth.mean_params()
    return abs(m - tm), abs(r - tr), float(np.max(np.abs(np.asarray(a) - np.asarray(ta))))


def fit_vmf_on_samples(field, state, sp, ss, radiance, lr):
    """One sampler update from rendered secondary taps (diffuse-strategy samples only)."""
    sel = ss.lobe != brdf.SPECULAR
    pdf = ss.pdf[:, sel]
    keep = np.all(pdf > 0.0, axis=1)
    if not np.any(keep):
        return field, float("nan")
    return vmf.fit_step(
        field, state, sp.x[keep], ss.w[keep][:, sel], pdf[keep], vmf.radiance_norm(radiance[keep][:, sel]), lr
    )


def fit_vmf_scene(scene, steps, rng, res=8, lobes=32, lr=0.1, batch=256, m=16, n=64, seed=0, field=None, ref_fn=None):
    """Stage-1 sampler fit from camera-pixel renders; returns (field, loss trace).

    Each step renders a random pixel batch with the current sampler and fits
    on the diffuse-strategy taps that render produced.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if scene.camera is None:
        raise ValueError("scene has no camera")
    if field is None:
        field = vmf.VmfField.init(rng.spawn(1), res, lobes, scene.lo, scene.hi)
    if ref_fn is None:
        ref_fn = cache.ReferenceCache(scene, n_sec=32)
    cam = scene.camera
    o, d = cam.rays()
    cfg = estimator.EstimatorConfig("ref", m=m, n=n)
    state = ad.AdamState()
    pick_rng = rng.spawn(int(Purpose.BATCH))
    trace = []
    for step in range(steps):
        ids = pick_rng.integers(0, cam.n_pixels, size=batch)
        est = estimator.estimate_pixels(scene, o[ids], d[ids], ids, step, seed, cfg, estimator.Sampler(field), ref_fn)
        if not est.lo.records:
            trace.append(float("nan"))
            continue
        ss, li = est.lo.records[0]
        field, loss = fit_vmf_on_samples(field, state, est.points, ss, li, lr)
        trace.append(loss)
    return field, np.asarray(trace)


def invert_scene(scene, views, images, init_material, cfg, truth=None, fast=None, field=None, on_step=None):
    """Recover the scene material from images; returns (material, trace rows, fast cache, vMF field).

    ``views`` are cameras and ``images`` matching (H*W, 3) linear arrays.
    ``scene.materials`` is replaced by the estimate as optimization proceeds.
    """
    rng = RngStream(cfg.seed, int(Purpose.INIT))
    ref = cache.ReferenceCache(scene, n_sec=cfg.n_sec)
    rec_ref = _RecordingReference(ref)
    scene.materials = init_material
    if fast is None:
        fast = cache.FastCache.init(rng.spawn(1), scene.lo, scene.hi)
        if cfg.cache_steps:
            cache.train_fast_cache(fast, scene, ref, cfg.cache_steps, rng.spawn(2), cfg.cache_batch, cfg.cache_lr)
    if cfg.use_vmf and field is None:
        field = vmf.VmfField.init(rng.spawn(3), cfg.vmf_res, cfg.vmf_lobes, scene.lo, scene.hi)
    sampler = estimator.Sampler(field if cfg.use_vmf else None)
    fast_fn = fast.bind(scene)

    origins, dirs, pix_ids, targets = [], [], [], []
    for v, (cam, img) in enumerate(zip(views, images)):
        o, d = cam.rays()
        origins.append(o)
        dirs.append(d)
        pix_ids.append(v * cam.n_pixels + np.arange(cam.n_pixels))
        targets.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    pix_ids = np.concatenate(pix_ids)
    targets = np.concatenate(targets)
    # rays that never meet density carry no material signal
    t_near, t_far, _ = scene.segment(origins, dirs)
    hit = np.nonzero(t_far > t_near)[0]

    ecfg = estimator.EstimatorConfig("cv", cfg.k, cfg.m, cfg.m_fast, cfg.n)
    raw = init_material.raw()
    state = ad.AdamState()
    cache_state = ad.AdamState()
    vmf_state = ad.AdamState()
    batch_rng = rng.spawn(int(Purpose.BATCH))
    rows = []
    for step in range(cfg.steps):
        lr = cfg.lr * (cfg.lr_final / cfg.lr) ** (step / max(cfg.steps - 1, 1))
        pick = hit[np.floor(batch_rng.random(min(cfg.batch, hit.size)) * hit.size).astype(np.int64)]
        o, d, pid, tgt = origins[pick], dirs[pick], pix_ids[pick], targets[pick]
        material = init_material.with_raw(raw)
        scene.materials = material
        est_a = estimator.estimate_pixels(scene, o, d, pid, 2 * step, cfg.seed, ecfg, sampler, rec_ref, fast_fn)
        est_b = estimator.estimate_pixels(scene, o, d, pid, 2 * step + 1, cfg.seed, ecfg, sampler, rec_ref, fast_fn)
        taps = rec_ref.last

        tape = ad.Tape()
        raw_node = tape.param("material", raw)
        a_node = estimator.pixel_node(scene, raw_node, est_a)
        cache_lum = _fast_part(est_a)
        comps = {"photometric": photometric_gradient_trick(
            a_node, est_b.value, tgt, cache_lum, 2 * step, 2 * step + 1
        )}
        w_cfg = cfg.weights
        if w_cfg.c_brdf > 0 and w_cfg.eps > 0 and est_a.points.size:
            comps["smooth"] = _smooth_term(scene, material, raw_node, est_a, fast_fn, w_cfg, cfg.seed, step)
        comps["density"] = density_l1(tape, None, w_cfg.c_density)
        loss = total_loss(tape, comps)
        if not np.isfinite(loss.value):
            raise cache.NumericError(f"inversion diverged at step {step}: loss {loss.value}, params {raw.tolist()}")
        grads = tape.backward(loss)
        params = {"material": raw}
        ad.adam_step(params, grads, state, lr)
        raw = params["material"]

        if cfg.refit_cache and taps is not None:
            x_t, w_t, rad_t, op_t = taps
            cache.cache_step(fast, cache_state, scene, x_t, w_t, rad_t, op_t, cfg.cache_lr * 0.3)
        if cfg.use_vmf and cfg.refit_vmf and est_b.lo.records:
            ss, _ = est_b.lo.records[-1]
            radiance = taps[2].reshape(ss.w.shape) if taps is not None else None
            if radiance is not None:
                field, _ = fit_vmf_on_samples(field, vmf_state, est_b.points, ss, radiance, cfg.vmf_lr)
                sampler = estimator.Sampler(field)

        material = init_material.with_raw(raw)
        errs = param_errors(material, truth) if truth is not None else (float("nan"),) * 3
        row = {
            "step": step,
            "photometric": float(comps["photometric"].value),
            "normal": 0.0,
            "smooth": float(comps["smooth"].value) if "smooth" in comps else 0.0,
            "density": float(comps["density"].value),
            "param_err_m": errs[0],
            "param_err_r": errs[1],
            "param_err_a": errs[2],
        }
        rows.append(row)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("invert step %d loss %.4g errs %s", step, row["photometric"], errs)
        if on_step is not None:
            on_step(step, material, fast, field)
    material = init_material.with_raw(raw)
    scene.materials = material
    return material, rows, fast, field


def _fast_part(est):
    """Detached fast-cache pixel estimate embedded in a control-variate estimate."""
    val = est.base
    if est.points.size and est.lo.records:
        ss, li = est.lo.records[0]
        lo_fast = np.sum(ss.coef(est.points) * li, axis=1)
        val = val.copy()
        np.add.at(val, est.rows, est.multiplier[est.rows, None] * lo_fast)
    return val


def _smooth_term(scene, material, raw_node, est, radiance_fn, w_cfg, seed, step):
    sp = est.points
    p = sp.size
    keys = stream_key(seed, step, int(Purpose.SMOOTH), np.arange(p))
    xi = w_cfg.eps * RngStream(seed, int(Purpose.SMOOTH), step).normal(size=(p, 3))
    x1 = sp.x + xi
    n1, ok = derived_normals(scene.density, x1)
    n1 = np.where(ok[:, None], n1, sp.n)
    a0 = pseudo_albedo(scene, material, radiance_fn, sp.x, sp.n, sp.wo, keys)
    a1 = pseudo_albedo(scene, material, radiance_fn, x1, n1, sp.wo, keys ^ np.uint64(0x5A5A))
    lam = np.mean(np.abs(a0 - a1), axis=1)
    wts = est.multiplier[est.rows]
    return smoothness_loss(material, raw_node, sp.x, wts, xi, lam, w_cfg.c_brdf)


INVERT_CSV_HEADER = "step,photometric,normal,smooth,density,param_err_m,param_err_r,param_err_a"


def trace_csv(rows):
    keys = INVERT_CSV_HEADER.split(",")
    lines = [INVERT_CSV_HEADER]
    for r in rows:
        lines.append(",".join(str(r[k]) if k == "step" else f"{r[k]:.8g}" for k in keys))
    return "\n".join(lines) + "\n"
