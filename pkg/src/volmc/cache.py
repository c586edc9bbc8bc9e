"""Incoming-radiance caches.

``ReferenceCache`` is the expensive, accurate oracle: it volume-renders the
analytic scene along the query ray and shades every sample with emission
plus shadowed direct light.  ``FastCache`` is the cheap learned cache: a
small network predicts S distances, blend logits and an opacity, features
are fetched from a dense grid at those distances and decoded once per ray.
"""

import json
import logging
import math
import struct

import numpy as np

from . import autodiff as ad
from . import brdf, kernels, volume
from .rng import stream_key, uniforms
from .scene import PointLight, SphereLight, derived_normals

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Reference cache
# ---------------------------------------------------------------------------


def direct_light(scene, pts, wo, shadow_samples=32):
    """Shadowed emitter contribution toward ``wo`` at surface-like samples (n, 3)."""
    n_pts = pts.shape[0]
    out = np.zeros((n_pts, 3))
    if not scene.emitters or n_pts == 0:
        return out
    normals, valid = derived_normals(scene.density, pts)
    m, r, a = scene.materials.query(pts)
    cos_o = np.sum(normals * wo, axis=-1)
    for e in scene.emitters:
        d = e.position - pts
        dist = np.linalg.norm(d, axis=-1)
        ldir = d / np.maximum(dist, 1e-12)[:, None]
        if isinstance(e, PointLight):
            e_in = e.intensity[None, :] / np.maximum(dist, 1e-12)[:, None] ** 2
            target = np.broadcast_to(e.position, pts.shape)
        elif isinstance(e, SphereLight):
            sin2 = np.clip((e.radius / np.maximum(dist, e.radius)) ** 2, 0.0, 1.0)
            solid = 2.0 * math.pi * (1.0 - np.sqrt(1.0 - sin2))
            e_in = solid[:, None] * e.radiance[None, :]
            target = e.position - e.radius * ldir
        else:
            raise TypeError(f"unknown emitter {e!r}")
        cos_i = np.sum(normals * ldir, axis=-1)
        lit = valid & (cos_i > brdf.GRAZING_EPS) & (cos_o > brdf.GRAZING_EPS) & (dist > e.radius)
        if not np.any(lit):
            continue
        idx = np.nonzero(lit)[0]
        ci, co, ch, cvh = brdf.half_vector_cosines(normals[idx], ldir[idx], wo[idx])
        fd, fs = brdf.brdf_parts(m[idx], r[idx], a[idx], ci, co, ch, cvh)
        # shadow rays leave from just outside the soft surface to avoid self-shadowing
        start = pts[idx] + scene.ray_offset * normals[idx]
        tr = scene.transmittance(start, target[idx], shadow_samples)
        out[idx] += (fd + fs) * (ci * tr)[:, None] * e_in[idx]
    return out


class ReferenceCache:
    """Quadrature render of the analytic scene along (x, w).

    ``bounces=1`` shades samples with emission plus shadowed direct light;
    ``bounces=2`` adds one indirect bounce estimated with ``m_inner``
    cosine-sampled rays into a one-bounce cache.
    """

    def __init__(self, scene, n_sec=32, bounces=1, m_inner=8, shadow_samples=32, weight_eps=1e-7, seed=0):
        if n_sec < 1 or bounces not in (1, 2):
            raise ValueError("need n_sec >= 1 and bounces in {1, 2}")
        self.scene = scene
        self.n_sec = int(n_sec)
        self.bounces = int(bounces)
        self.m_inner = int(m_inner)
        self.shadow_samples = int(shadow_samples)
        self.weight_eps = weight_eps
        self.queries = 0
        self._inner = ReferenceCache(scene, n_sec, 1, shadow_samples=shadow_samples) if bounces == 2 else None
        self.seed = int(seed)

    def trace(self, x, w):
        """Volume radiance (n, 3), transparency (n,), background (n, 3) and weights."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(w, dtype=np.float64).reshape(-1, 3)
        t_near, t_far, bg = self.scene.segment(x, w)
        t = volume.uniform_partition(t_far, self.n_sec, t_near)
        wts, tau, pts = volume.quadrature_weights(self.scene.density, x, w, t, t_far)
        vol = np.zeros((x.shape[0], 3))
        sel = wts > self.weight_eps
        if np.any(sel):
            ri, ki = np.nonzero(sel)
            p = pts[ri, ki]
            contrib = wts[ri, ki, None] * self.shade(p, -w[ri])
            for c in range(3):
                vol[:, c] = np.bincount(ri, weights=contrib[:, c], minlength=x.shape[0])
        return vol, tau, bg, wts

    def shade(self, pts, wo):
        s, se = self.scene.density.sigma_emission(pts)
        emit = np.where(s[:, None] > 0.0, se / np.where(s > 0.0, s, 1.0)[:, None], 0.0)
        out = emit + direct_light(self.scene, pts, wo, self.shadow_samples)
        if self._inner is not None:
            out = out + self._indirect(pts, wo)
        return out

    def _indirect(self, pts, wo):
        normals, valid = derived_normals(self.scene.density, pts)
        n_pts, m_in = pts.shape[0], self.m_inner
        # streams keyed by the point itself keep results independent of query order
        bits = np.ascontiguousarray(pts).view(np.uint64).reshape(n_pts, 3)
        keys = stream_key(self.seed, bits[:, 0], bits[:, 1], bits[:, 2])
        u = uniforms(keys, 2 * m_in).reshape(n_pts, m_in, 2)
        nn = np.repeat(normals[:, None, :], m_in, axis=1)
        wi, pdf = brdf.sample_cosine(nn, u[..., 0], u[..., 1])
        origin = pts + self.scene.ray_offset * normals
        li = self._inner.query(np.repeat(origin, m_in, axis=0), wi.reshape(-1, 3)).reshape(n_pts, m_in, 3)
        wo_b = np.broadcast_to(wo[:, None, :], wi.shape)
        ci, co, ch, cvh = brdf.half_vector_cosines(nn, wi, wo_b)
        ok = valid[:, None] & (ci > brdf.GRAZING_EPS) & (co > brdf.GRAZING_EPS)
        ci_s, co_s = np.where(ok, ci, 1.0), np.where(ok, co, 1.0)
        m, r, a = self.scene.materials.query(pts)
        fd, fs = brdf.brdf_parts(m[:, None], r[:, None], a[:, None, :], ci_s, co_s, ch, cvh)
        coef = np.where(ok, ci_s / np.maximum(pdf, 1e-300), 0.0)[..., None] / m_in
        return np.sum((fd + fs) * coef * li, axis=1)

    def query(self, x, w):
        """Incoming radiance along (x, w): volume part plus transparency times background."""
        vol, tau, bg, _ = self.trace(x, w)
        self.queries += vol.shape[0]
        return vol + tau[:, None] * bg

    def query_with_opacity(self, x, w):
        vol, tau, bg, _ = self.trace(x, w)
        self.queries += vol.shape[0]
        return vol + tau[:, None] * bg, 1.0 - tau

    __call__ = query


# ---------------------------------------------------------------------------
# Fast cache
# ---------------------------------------------------------------------------

PE_OCTAVES = 4
QUERY_CHUNK = 4096
ENCODING_DIM = 3 + 6 * PE_OCTAVES + 3


def encode(x, w, lo, hi):
    """Sinusoidal encoding of normalized position plus raw direction -> (n, 30).

    Octaves past the first use the double-angle identities instead of new sin/cos calls.
    """
    xn = 2.0 * (x - lo) / (hi - lo) - 1.0
    out = np.empty((x.shape[0], ENCODING_DIM))
    out[:, :3] = xn
    s, c = np.sin(math.pi * xn), np.cos(math.pi * xn)
    for k in range(PE_OCTAVES):
        out[:, 3 + 6 * k : 6 + 6 * k] = s
        out[:, 6 + 6 * k : 9 + 6 * k] = c
        s, c = 2.0 * s * c, 1.0 - 2.0 * s * s
    out[:, -3:] = w
    return out




def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    return math.log(p / (1.0 - p))


class FastCache:
    """Sampler MLP + feature grid + decoder; parameters live in ``self.params``."""

    NAMES = ("W0", "b0", "W1", "b1", "W2", "b2", "feat", "D0", "d0", "D1", "d1")

    def __init__(self, params, lo, hi, s=8, f=8):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.s = int(s)
        self.f = int(f)
        self.queries = 0

    @classmethod
    def init(cls, rng, lo, hi, s=8, f=8, grid_res=32, hidden=64, dec_hidden=32, feat_scale=0.1):
        out = 2 * s + 1
        b2 = np.zeros(out)
        # spread the initial distances over the ray instead of collapsing them at t_far / 2
        b2[:s] = [_logit((k + 0.5) / s) for k in range(s)]
        p = {
            "W0": _glorot(rng, ENCODING_DIM, hidden),
            "b0": np.zeros(hidden),
            "W1": _glorot(rng, hidden, hidden),
            "b1": np.zeros(hidden),
            "W2": _glorot(rng, hidden, out),
            "b2": b2,
            "feat": feat_scale * rng.normal(size=(grid_res,) * 3 + (f,)),
            "D0": _glorot(rng, f, dec_hidden),
            "d0": np.zeros(dec_hidden),
            "D1": _glorot(rng, dec_hidden, 3),
            "d1": np.zeros(3),
        }
        return cls(p, lo, hi, s, f)

    @property
    def grid_res(self):
        return self.params["feat"].shape[:3]

    def _heads(self, x, w):
        p = self.params
        h = encode(x, w, self.lo, self.hi) @ p["W0"]
        h += p["b0"]
        np.maximum(h, 0.0, out=h)
        h = h @ p["W1"]
        h += p["b1"]
        np.maximum(h, 0.0, out=h)
        o = h @ p["W2"]
        o += p["b2"]
        return o

    def predict(self, x, w, t_near, t_far):
        """Sorted distances (n, S), blend weights (n, S), opacity (n,) and color (n, 3)."""
        s = self.s
        o = self._heads(x, w)
        t = t_near[:, None] + _sigmoid(o[:, :s]) * (t_far - t_near)[:, None]
        logits = o[:, s : 2 * s]
        # blend logits travel with their distances, so sorting leaves the output unchanged
        order = np.argsort(t, axis=1)
        t = np.take_along_axis(t, order, axis=1)
        logits = np.take_along_axis(logits, order, axis=1)
        wts = np.exp(logits - logits.max(axis=1, keepdims=True))
        wts /= wts.sum(axis=1, keepdims=True)
        pts = x[:, None, :] + t[..., None] * w[:, None, :]
        feats = kernels.trilinear(self.params["feat"], pts.reshape(-1, 3), self.lo, self.hi)
        blended = np.einsum("ns,nsf->nf", wts, feats.reshape(-1, s, self.f))
        hd = np.maximum(blended @ self.params["D0"] + self.params["d0"], 0.0)
        color = np.logaddexp(0.0, hd @ self.params["D1"] + self.params["d1"])
        return t, wts, _sigmoid(o[:, 2 * s]), color

    def query(self, scene, x, w):
        """Radiance (n, 3) and opacity (n,) along (x, w) composited over the scene background."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(w, dtype=np.float64).reshape(-1, 3)
        t_near, t_far, bg = scene.segment(x, w)
        op, color = np.empty(x.shape[0]), np.empty((x.shape[0], 3))
        # bounded chunks keep the hidden activations in cache
        for a in range(0, x.shape[0], QUERY_CHUNK):
            b = a + QUERY_CHUNK
            _, _, op[a:b], color[a:b] = self.predict(x[a:b], w[a:b], t_near[a:b], t_far[a:b])
        self.queries += x.shape[0]
        return op[:, None] * color + (1.0 - op[:, None]) * bg, op

    def radiance(self, scene, x, w):
        return self.query(scene, x, w)[0]

    def bind(self, scene):
        """Callable ``(x, w) -> radiance`` for the estimators."""
        return lambda x, w: self.radiance(scene, x, w)

    def query_node(self, nodes, scene, x, w):
        """Differentiable radiance and opacity nodes from parameter nodes."""
        s = self.s
        n = x.shape[0]
        t_near, t_far, bg = scene.segment(x, w)
        enc = encode(x, w, self.lo, self.hi)
        h = ad.relu(ad.matmul(enc, nodes["W0"]) + nodes["b0"])
        h = ad.relu(ad.matmul(h, nodes["W1"]) + nodes["b1"])
        o = ad.matmul(h, nodes["W2"]) + nodes["b2"]
        t = ad.sigmoid(ad.take(o, (slice(None), slice(0, s)))) * (t_far - t_near)[:, None] + t_near[:, None]
        wts = ad.softmax(ad.take(o, (slice(None), slice(s, 2 * s))), axis=1)
        op = ad.sigmoid(ad.take(o, (slice(None), slice(2 * s, 2 * s + 1))))
        pts = ad.reshape(t, (n, s, 1)) * w[:, None, :] + x[:, None, :]
        feats = _trilinear_both(nodes["feat"], ad.reshape(pts, (n * s, 3)), self.lo, self.hi)
        blended = ad.sum(ad.reshape(feats, (n, s, self.f)) * ad.reshape(wts, (n, s, 1)), axis=1)
        hd = ad.relu(ad.matmul(blended, nodes["D0"]) + nodes["d0"])
        color = ad.softplus(ad.matmul(hd, nodes["D1"]) + nodes["d1"])
        rad = op * color + (1.0 - op) * bg
        return rad, ad.reshape(op, (n,))

    # -- serialization ------------------------------------------------------

    MAGIC = b"VMCFAST1"

    def save(self, path):
        header = {
            "format": "volmc-fast-cache",
            "dtype": "<f8",
            "S": self.s,
            "F": self.f,
            "resolution": list(self.grid_res),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "arrays": [[k, list(self.params[k].shape)] for k in self.NAMES],
        }
        hb = json.dumps(header).encode("utf-8")
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write(struct.pack("<Q", len(hb)))
            f.write(hb)
            for k in self.NAMES:
                f.write(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            data = f.read()
        if data[:8] != cls.MAGIC:
            raise ValueError(f"{path}: not a fast-cache blob")
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        off = 16 + hlen
        params = {}
        for name, shape in header["arrays"]:
            cnt = int(np.prod(shape))
            params[name] = np.frombuffer(data, dtype="<f8", count=cnt, offset=off).reshape(shape).astype(np.float64)
            off += 8 * cnt
        if off != len(data):
            raise ValueError(f"{path}: blob size mismatch")
        return cls(params, header["lo"], header["hi"], header["S"], header["F"])


def _trilinear_both(grid, pts, lo, hi):
    """Trilinear lookup differentiable in the grid and in the (node) points."""
    tape = grid.tape
    pv = pts.value
    val = kernels.trilinear(grid.value, pv, lo, hi)
    shape = grid.value.shape
    res = np.asarray(shape[:3])
    scale = (res - 1) / (hi - lo)
    gv = grid.value

    def vjp(g):
        g_grid = kernels.trilinear_scatter(g, pv, shape, lo, hi)
        # spatial derivative of the trilinear interpolant, zero where clamped
        gp = np.zeros_like(pv)
        fcoord = (pv - lo) * scale
        inside = (fcoord > 0) & (fcoord < res - 1)
        i0 = np.clip(np.floor(fcoord).astype(np.int64), 0, np.maximum(res - 2, 0))
        fr = np.clip(fcoord - i0, 0.0, 1.0)
        for corner in range(8):
            o = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
            idx = np.minimum(i0 + o, res - 1)
            vals = gv[idx[:, 0], idx[:, 1], idx[:, 2]]
            gdot = np.sum(vals * g, axis=1)
            wax = np.where(o == 1, fr, 1.0 - fr)
            for a in range(3):
                dw = (1.0 if o[a] else -1.0) * scale[a]
                others = np.prod(np.delete(wax, a, axis=1), axis=1)
                gp[:, a] += dw * others * gdot
        return g_grid, gp * inside

    return tape._push(val, "trilinear2", (grid, pts), vjp)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def random_directions(rng, n):
    z = 2.0 * rng.random(n) - 1.0
    phi = 2.0 * math.pi * rng.random(n)
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


class TrainingRays:
    """Half the origins uniform in the bounds, half just outside dense regions."""

    def __init__(self, scene, rng, pool=1 << 15):
        self.scene = scene
        d = scene.density
        cand = d.lo + (d.hi - d.lo) * rng.random((pool, 3))
        s = d.sigma(cand)
        smax = max(d.sigma_max(), 1e-12)
        dense = cand[s > 0.5 * smax]
        if dense.shape[0]:
            n, ok = derived_normals(d, dense)
            self.surface = (dense + scene.ray_offset * n)[ok]
        else:
            self.surface = np.zeros((0, 3))

    def draw(self, rng, n):
        d = self.scene.density
        n_surf = n // 2 if self.surface.shape[0] else 0
        x_uni = d.lo + (d.hi - d.lo) * rng.random((n - n_surf, 3))
        if n_surf:
            idx = np.floor(rng.random(n_surf) * self.surface.shape[0]).astype(np.int64)
            x = np.concatenate([x_uni, self.surface[idx]])
        else:
            x = x_uni
        return x, random_directions(rng, n)


def cache_loss(cache, nodes, scene, x, w, target, target_op):
    rad, op = cache.query_node(nodes, scene, x, w)
    r = rad - target
    q = op - target_op
    return ad.mean(ad.sum(r * r, axis=1)) + ad.mean(q * q)


def cache_step(cache, state, scene, x, w, target, target_op, lr):
    tape = ad.Tape()
    nodes = {k: tape.param(k, v) for k, v in cache.params.items()}
    # overflow shows up as a non-finite loss, which is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        loss = cache_loss(cache, nodes, scene, x, w, target, target_op)
    if not np.isfinite(loss.value):
        raise NumericError(f"fast-cache loss is non-finite ({loss.value})")
    grads = tape.backward(loss)
    ad.adam_step(cache.params, grads, state, lr)
    return float(loss.value)


def train_fast_cache(cache, scene, reference, steps, rng, batch=1024, lr=3e-3, lr_final=None, log_every=0):
    """Regress radiance and opacity onto the reference cache; returns the loss curve."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rays = TrainingRays(scene, rng)
    state = ad.AdamState()
    trace = []
    for step in range(steps):
        cur = lr if lr_final is None else lr * (lr_final / lr) ** (step / max(steps - 1, 1))
        x, w = rays.draw(rng, batch)
        target, target_op = reference.query_with_opacity(x, w)
        trace.append(cache_step(cache, state, scene, x, w, target, target_op, cur))
        if log_every and step % log_every == 0:
            log.info("fast cache step %d loss %.3g", step, trace[-1])
    return np.asarray(trace)


def relative_l2(cache, scene, reference, x, w):
    """sqrt(sum |fast - ref|^2 / sum |ref|^2) over a ray set."""
    f = cache.radiance(scene, x, w)
    r = reference.query(x, w)
    return float(np.sqrt(np.sum((f - r) ** 2) / max(np.sum(r**2), 1e-300)))
