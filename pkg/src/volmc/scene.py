"""Scene description: density fields, emitters, environment map, camera.

All queries are vectorized: points and directions are (n, 3) float arrays.
The canonical scene box is [-1, 1]^3; lengths are in scene units and
radiance is linear RGB.
"""

import dataclasses
import json
import logging
import math

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = (np.full(3, -1.0), np.full(3, 1.0))
NORMAL_EPS = 1e-9


class SceneError(ValueError):
    """Malformed scene description; ``path`` names the offending JSON field."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _vec(x, n=3):
    return np.asarray(x, dtype=np.float64).reshape(n)


def _points(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 3)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclasses.dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_far: float

    def __post_init__(self):
        self.origin = _vec(self.origin)
        self.direction = _vec(self.direction)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not self.t_far > 0.0:
            raise ValueError(f"t_far must be > 0, got {self.t_far}")

    def at(self, t):
        return self.origin + np.asarray(t)[..., None] * self.direction


# ---------------------------------------------------------------------------
# Density fields
# ---------------------------------------------------------------------------


class DensityField:
    """Base class; subclasses provide ``sigma``, ``emission`` and ``gradient``."""

    kind = "abstract"
    lo = DEFAULT_BOUNDS[0]
    hi = DEFAULT_BOUNDS[1]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def inside(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def sigma(self, pts):
        raise NotImplementedError

    def sigma_emission(self, pts):
        """Density and density-weighted emitted radiance (n,), (n, 3)."""
        s = self.sigma(pts)
        return s, np.zeros((s.shape[0], 3))

    @property
    def emissive(self):
        return bool(np.any(getattr(self, "emit", 0.0) > 0.0))

    def emission(self, pts):
        s, se = self.sigma_emission(_points(pts))
        safe = np.where(s > 0.0, s, 1.0)
        return np.where(s[:, None] > 0.0, se / safe[:, None], 0.0)

    def gradient(self, pts):
        raise NotImplementedError

    def sigma_max(self):
        raise NotImplementedError


class HomogeneousBox(DensityField):
    kind = "homogeneous-box"

    def __init__(self, lo, hi, sigma, emission=(0.0, 0.0, 0.0)):
        self.lo = _vec(lo)
        self.hi = _vec(hi)
        self.value = float(sigma)
        self.emit = _vec(emission)
        if self.value < 0.0:
            raise ValueError("box density must be >= 0")

    def sigma(self, pts):
        pts = _points(pts)
        return np.where(self.inside(pts), self.value, 0.0)

    def sigma_emission(self, pts):
        s = self.sigma(pts)
        return s, s[:, None] * self.emit

    def gradient(self, pts):
        return np.zeros_like(_points(pts))

    def sigma_max(self):
        return self.value

    def to_json(self):
        return {
            "type": self.kind,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "sigma": self.value,
            "emission": self.emit.tolist(),
        }


class BlobDensity(DensityField):
    """Sum of isotropic gaussians truncated at four radii.

    Each blob may carry an emitted radiance; the emission seen at a point is
    the density-weighted average of the blobs overlapping it.
    """

    kind = "gaussian-blob-sum"

    def __init__(self, centers, peaks, radii, emission=None, lo=None, hi=None):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        nb = self.centers.shape[0]
        self.peaks = np.asarray(peaks, dtype=np.float64).reshape(nb)
        self.radii = np.asarray(radii, dtype=np.float64).reshape(nb)
        if emission is None:
            emission = np.zeros((nb, 3))
        self.emit = np.asarray(emission, dtype=np.float64).reshape(nb, 3)
        if np.any(self.peaks < 0) or np.any(self.radii <= 0):
            raise ValueError("blob peaks must be >= 0 and radii > 0")
        self.lo = DEFAULT_BOUNDS[0] if lo is None else _vec(lo)
        self.hi = DEFAULT_BOUNDS[1] if hi is None else _vec(hi)

    def sigma_emission(self, pts):
        pts = _points(pts)
        s, se = kernels.blob_eval(pts, self.centers, self.peaks, self.radii, self.emit)
        inside = self.inside(pts)
        return np.where(inside, s, 0.0), np.where(inside[:, None], se, 0.0)

    def sigma(self, pts):
        return self.sigma_emission(pts)[0]

    def gradient(self, pts):
        pts = _points(pts)
        g = kernels.blob_grad(pts, self.centers, self.peaks, self.radii)
        return np.where(self.inside(pts)[:, None], g, 0.0)

    def sigma_max(self):
        return float(self.sigma(self.centers).max()) if len(self.centers) else 0.0

    def to_json(self):
        return {
            "type": self.kind,
            "centers": self.centers.tolist(),
            "peaks": self.peaks.tolist(),
            "radii": self.radii.tolist(),
            "emission": self.emit.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
        }


class GridDensity(DensityField):
    """Node-centered trilinear grid of nonnegative densities."""

    kind = "trilinear-grid"

    def __init__(self, values, lo=None, hi=None, emission=(0.0, 0.0, 0.0), fd_step=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError("grid values must be a 3D array")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("grid values must be finite and >= 0")
        self.values = values
        self.lo = DEFAULT_BOUNDS[0] if lo is None else _vec(lo)
        self.hi = DEFAULT_BOUNDS[1] if hi is None else _vec(hi)
        self.emit = _vec(emission)
        self.h = 1e-4 * self.diameter if fd_step is None else float(fd_step)

    @property
    def resolution(self):
        return self.values.shape

    def node_positions(self):
        axes = [np.linspace(self.lo[a], self.hi[a], self.values.shape[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def sigma(self, pts):
        pts = _points(pts)
        v = kernels.trilinear(self.values[..., None], pts, self.lo, self.hi)[:, 0]
        return np.where(self.inside(pts), v, 0.0)

    def sigma_emission(self, pts):
        s = self.sigma(pts)
        return s, s[:, None] * self.emit

    def gradient(self, pts):
        pts = _points(pts)
        g = np.empty_like(pts)
        for a in range(3):
            e = np.zeros(3)
            e[a] = self.h
            g[:, a] = (self.sigma(pts + e) - self.sigma(pts - e)) / (2.0 * self.h)
        return g

    def sigma_max(self):
        return float(self.values.max())

    @classmethod
    def from_shapes(cls, res, shapes, lo=None, hi=None, ramp_cells=3.0, emission=(0.0, 0.0, 0.0)):
        """Rasterize boxes/spheres into a grid with a soft edge of ``ramp_cells`` cells.

        Each shape is ``{"shape": "box", "lo", "hi", "sigma"}`` or
        ``{"shape": "sphere", "center", "radius", "sigma"}``; overlapping
        shapes take the maximum.
        """
        lo = DEFAULT_BOUNDS[0] if lo is None else _vec(lo)
        hi = DEFAULT_BOUNDS[1] if hi is None else _vec(hi)
        res = (res,) * 3 if np.isscalar(res) else tuple(res)
        axes = [np.linspace(lo[a], hi[a], res[a]) for a in range(3)]
        p = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        ramp = ramp_cells * float(np.max((hi - lo) / (np.asarray(res) - 1)))
        values = np.zeros(res)
        for i, s in enumerate(shapes):
            kind = s.get("shape")
            if kind == "box":
                b_lo, b_hi = _vec(s["lo"]), _vec(s["hi"])
                c = 0.5 * (b_lo + b_hi)
                half = 0.5 * (b_hi - b_lo)
                q = np.abs(p - c) - half
                sdf = np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)
            elif kind == "sphere":
                sdf = np.linalg.norm(p - _vec(s["center"]), axis=-1) - float(s["radius"])
            else:
                raise SceneError(f"density.shapes[{i}].shape", f"unknown shape {kind!r}")
            occ = np.clip(0.5 - sdf / ramp, 0.0, 1.0)
            values = np.maximum(values, float(s["sigma"]) * occ)
        return cls(values, lo, hi, emission)

    def to_json(self):
        return {
            "type": self.kind,
            "resolution": list(self.values.shape),
            "values": self.values.ravel().tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "emission": self.emit.tolist(),
        }


def density_at(field, x):
    return float(field.sigma(_points(x))[0])


def density_gradient(field, x):
    return field.gradient(_points(x))[0]


def derived_normals(field, pts):
    """Negative normalized density gradient; returns (normals, valid mask)."""
    g = field.gradient(_points(pts))
    norm = np.linalg.norm(g, axis=-1)
    valid = norm > NORMAL_EPS
    n = -g / np.where(valid, norm, 1.0)[:, None]
    return np.where(valid[:, None], n, 0.0), valid


def derived_normal(field, x):
    """Unit normal at ``x`` or ``None`` where the gradient vanishes."""
    n, ok = derived_normals(field, x)
    return n[0] if ok[0] else None


# ---------------------------------------------------------------------------
# Environment map
# ---------------------------------------------------------------------------


class EnvironmentMap:
    """Equirectangular RGB map; theta = acos(w_z) runs down the rows."""

    def __init__(self, texels, optimizable=False):
        texels = np.asarray(texels, dtype=np.float64)
        if texels.ndim != 3 or texels.shape[2] != 3:
            raise ValueError("environment texels must be (H, W, 3)")
        if not np.all(np.isfinite(texels)) or np.any(texels < 0):
            raise ValueError("environment texels must be finite and >= 0")
        self.texels = texels
        self.optimizable = bool(optimizable)

    @classmethod
    def constant(cls, rgb, h=32, w=64):
        return cls(np.broadcast_to(_vec(rgb), (h, w, 3)).copy())

    @classmethod
    def sky(cls, zenith, horizon, ground, h=32, w=64, spot=None):
        """Smooth sky gradient with an optional ``(direction, radius_rad, rgb)`` spot."""
        theta = (np.arange(h) + 0.5) / h * math.pi
        phi = (np.arange(w) + 0.5) / w * 2 * math.pi - math.pi
        cz = np.cos(theta)[:, None, None]
        up = np.clip(cz, 0.0, 1.0)
        down = np.clip(-cz, 0.0, 1.0)
        tex = up * _vec(zenith) + (1 - up - down) * _vec(horizon) + down * _vec(ground)
        tex = np.broadcast_to(tex, (h, w, 3)).copy()
        if spot is not None:
            d, rad, rgb = spot
            d = unit(_vec(d))
            st = np.sin(theta)[:, None]
            dirs = np.stack(
                [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(np.cos(theta)[:, None], (h, w))],
                axis=-1,
            )
            ang = np.arccos(np.clip(dirs @ d, -1, 1))
            tex += np.exp(-0.5 * (ang / rad) ** 2)[..., None] * _vec(rgb)
        return cls(tex)

    @property
    def shape(self):
        return self.texels.shape[:2]

    def lookup(self, dirs):
        """Bilinear taps: (rows (n,4), cols (n,4), weights (n,4))."""
        dirs = _points(dirs)
        h, w = self.shape
        theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
        phi = np.arctan2(dirs[:, 1], dirs[:, 0])
        y = theta / math.pi * h - 0.5
        x = (phi + math.pi) / (2 * math.pi) * w - 0.5
        y = np.clip(y, 0.0, h - 1.0)
        y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
        fy = y - y0
        y1 = np.minimum(y0 + 1, h - 1)
        x0f = np.floor(x)
        fx = x - x0f
        x0 = x0f.astype(np.int64) % w
        x1 = (x0 + 1) % w
        rows = np.stack([y0, y0, y1, y1], axis=1)
        cols = np.stack([x0, x1, x0, x1], axis=1)
        wts = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
        return rows, cols, wts

    def radiance(self, dirs):
        rows, cols, wts = self.lookup(dirs)
        tex = self.texels[rows, cols]
        # blend as offsets from the first tap so constant maps come back bit-exact
        return tex[:, 0] + np.einsum("nk,nkc->nc", wts[:, 1:], tex[:, 1:] - tex[:, :1])

    def to_json(self):
        h, w = self.shape
        return {"resolution": [h, w], "texels": self.texels.ravel().tolist(), "optimizable": self.optimizable}


def env_radiance(env, w):
    return env.radiance(_points(w))[0]


# ---------------------------------------------------------------------------
# Emitters
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class PointLight:
    position: np.ndarray
    intensity: np.ndarray
    kind: str = "point"

    def __post_init__(self):
        self.position = _vec(self.position)
        self.intensity = _vec(self.intensity)
        if np.any(self.intensity < 0):
            raise ValueError("emitter intensity must be >= 0")

    @property
    def radius(self):
        return 0.0

    def to_json(self):
        return {"kind": self.kind, "position": self.position.tolist(), "intensity": self.intensity.tolist()}


@dataclasses.dataclass
class SphereLight:
    position: np.ndarray
    radius: float
    radiance: np.ndarray
    kind: str = "spherical-area"

    def __post_init__(self):
        self.position = _vec(self.position)
        self.radiance = _vec(self.radiance)
        self.radius = float(self.radius)
        if not self.radius > 0.0:
            raise ValueError("area emitter radius must be > 0")
        if np.any(self.radiance < 0):
            raise ValueError("emitter radiance must be >= 0")

    def intersect(self, origins, dirs):
        """Nearest positive hit distance or inf; origins inside never hit."""
        oc = origins - self.position
        b = np.einsum("nk,nk->n", oc, dirs)
        c = np.einsum("nk,nk->n", oc, oc) - self.radius**2
        disc = b * b - c
        t = -b - np.sqrt(np.maximum(disc, 0.0))
        return np.where((disc >= 0.0) & (c > 0.0) & (t > 0.0), t, np.inf)

    def to_json(self):
        return {
            "kind": self.kind,
            "position": self.position.tolist(),
            "radius": self.radius,
            "radiance": self.radiance.tolist(),
        }


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = dataclasses.field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov_deg: float = 40.0
    width: int = 32
    height: int = 32

    def __post_init__(self):
        self.position = _vec(self.position)
        self.look_at = _vec(self.look_at)
        self.up = _vec(self.up)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera width/height must be >= 1")

    @property
    def n_pixels(self):
        return self.width * self.height

    def rays(self, pixel_ids=None):
        """Pinhole rays through pixel centers; pixel id = row * width + col, row 0 on top."""
        if pixel_ids is None:
            pixel_ids = np.arange(self.n_pixels)
        pixel_ids = np.asarray(pixel_ids)
        row, col = np.divmod(pixel_ids, self.width)
        fwd = unit(self.look_at - self.position)
        right = unit(np.cross(fwd, self.up))
        up = np.cross(right, fwd)
        tan = math.tan(math.radians(self.fov_deg) / 2)
        aspect = self.width / self.height
        sx = ((col + 0.5) / self.width * 2 - 1) * tan * aspect
        sy = (1 - (row + 0.5) / self.height * 2) * tan
        d = fwd + sx[:, None] * right + sy[:, None] * up
        o = np.broadcast_to(self.position, d.shape).copy()
        return o, unit(d)

    def to_json(self):
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "up": self.up.tolist(),
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def orbit(n_views, radius=3.0, elevation_deg=20.0, width=32, height=32, fov_deg=40.0):
        cams = []
        for i in range(n_views):
            az = 2 * math.pi * i / n_views
            el = math.radians(elevation_deg * (1 if i % 2 == 0 else -0.5))
            pos = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
            cams.append(Camera(pos, np.zeros(3), fov_deg=fov_deg, width=width, height=height))
        return cams


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


def ray_box(origins, dirs, lo, hi):
    """Slab test; returns (t_enter >= 0, t_exit) with t_exit <= t_enter for misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
    tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
    t_enter = np.maximum(tmin.max(axis=-1), 0.0)
    t_exit = tmax.min(axis=-1)
    return t_enter, t_exit


class Scene:
    def __init__(self, density, materials, emitters=(), env=None, camera=None, ray_offset=0.05, name="scene"):
        from .brdf import ConstantMaterial

        self.density = density
        self.materials = materials if materials is not None else ConstantMaterial(0.0, 1.0, (0.5, 0.5, 0.5))
        self.emitters = list(emitters)
        self.env = env if env is not None else EnvironmentMap.constant((0.0, 0.0, 0.0))
        self.camera = camera
        self.ray_offset = float(ray_offset)
        self.name = name

    @property
    def lo(self):
        return self.density.lo

    @property
    def hi(self):
        return self.density.hi

    @property
    def area_lights(self):
        return [e for e in self.emitters if isinstance(e, SphereLight)]

    def segment(self, origins, dirs):
        """Clip rays to the density bounds and the nearest area emitter.

        Returns ``(t_near, t_far, background)`` where ``background`` is the
        radiance arriving from beyond ``t_far`` (emitter radiance on a hit,
        otherwise the environment).  Rays that miss the box get
        ``t_far == t_near``.
        """
        origins = _points(origins)
        dirs = _points(dirs)
        t_near, t_far = ray_box(origins, dirs, self.lo, self.hi)
        t_far = np.maximum(t_far, t_near)
        bg = self.env.radiance(dirs)
        t_hit = np.full(origins.shape[0], np.inf)
        for e in self.area_lights:
            t = e.intersect(origins, dirs)
            closer = t < t_hit
            t_hit = np.where(closer, t, t_hit)
            bg = np.where(closer[:, None], e.radiance, bg)
        t_far = np.minimum(t_far, t_hit)
        t_near = np.minimum(t_near, t_far)
        return t_near, t_far, bg

    def transmittance(self, points, targets, n=32):
        """Midpoint-rule transmittance between point pairs (n,3) -> (n,)."""
        points = _points(points)
        targets = _points(targets)
        d = targets - points
        length = np.linalg.norm(d, axis=-1)
        t = (np.arange(n) + 0.5) / n
        p = points[:, None, :] + t[None, :, None] * d[:, None, :]
        s = self.density.sigma(p.reshape(-1, 3)).reshape(-1, n)
        return np.exp(-s.sum(axis=1) * length / n)

    def to_json(self):
        return {
            "name": self.name,
            "density": self.density.to_json(),
            "materials": self.materials.to_json(),
            "emitters": [e.to_json() for e in self.emitters],
            "environment": self.env.to_json(),
            "camera": None if self.camera is None else self.camera.to_json(),
            "ray_offset": self.ray_offset,
        }


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _get(d, key, path, default=dataclasses.MISSING):
    if not isinstance(d, dict):
        raise SceneError(path, "expected an object")
    if key not in d:
        if default is dataclasses.MISSING:
            raise SceneError(f"{path}.{key}", "missing required field")
        return default
    return d[key]


def _arr(d, key, path, shape=None, default=dataclasses.MISSING):
    v = _get(d, key, path, default)
    try:
        a = np.asarray(v, dtype=np.float64)
        if shape is not None:
            a = a.reshape(shape)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"{path}.{key}", f"bad numeric array ({exc})") from None
    if not np.all(np.isfinite(a)):
        raise SceneError(f"{path}.{key}", "values must be finite")
    return a


def density_from_json(d, path="density"):
    kind = _get(d, "type", path)
    lo = _arr(d, "lo", path, (3,), DEFAULT_BOUNDS[0])
    hi = _arr(d, "hi", path, (3,), DEFAULT_BOUNDS[1])
    try:
        if kind == "homogeneous-box":
            return HomogeneousBox(lo, hi, _get(d, "sigma", path), _arr(d, "emission", path, (3,), np.zeros(3)))
        if kind == "gaussian-blob-sum":
            c = _arr(d, "centers", path, (-1, 3))
            nb = c.shape[0]
            return BlobDensity(
                c,
                _arr(d, "peaks", path, (nb,)),
                _arr(d, "radii", path, (nb,)),
                _arr(d, "emission", path, (nb, 3), np.zeros((nb, 3))),
                lo,
                hi,
            )
        if kind == "trilinear-grid":
            emission = _arr(d, "emission", path, (3,), np.zeros(3))
            if "shapes" in d:
                return GridDensity.from_shapes(
                    _get(d, "resolution", path), _get(d, "shapes", path), lo, hi, d.get("ramp_cells", 3.0), emission
                )
            res = tuple(int(r) for r in _get(d, "resolution", path))
            return GridDensity(_arr(d, "values", path, res), lo, hi, emission)
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(path, str(exc)) from None
    raise SceneError(f"{path}.type", f"unknown density type {kind!r}")


def env_from_json(d, path="environment"):
    if d is None:
        return EnvironmentMap.constant((0.0, 0.0, 0.0))
    try:
        if "constant" in d:
            h, w = _get(d, "resolution", path, [32, 64])
            env = EnvironmentMap.constant(_arr(d, "constant", path, (3,)), h, w)
        elif "sky" in d:
            s = d["sky"]
            spot = None
            if "spot" in s:
                sp = s["spot"]
                spot = (
                    _arr(sp, "direction", f"{path}.sky.spot", (3,)),
                    float(_get(sp, "radius_rad", f"{path}.sky.spot")),
                    _arr(sp, "rgb", f"{path}.sky.spot", (3,)),
                )
            h, w = _get(d, "resolution", path, [32, 64])
            env = EnvironmentMap.sky(
                _arr(s, "zenith", f"{path}.sky", (3,)),
                _arr(s, "horizon", f"{path}.sky", (3,)),
                _arr(s, "ground", f"{path}.sky", (3,)),
                h,
                w,
                spot,
            )
        else:
            h, w = _get(d, "resolution", path)
            env = EnvironmentMap(_arr(d, "texels", path, (h, w, 3)))
        env.optimizable = bool(d.get("optimizable", False))
        return env
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(path, str(exc)) from None


def emitter_from_json(d, path):
    kind = _get(d, "kind", path)
    try:
        if kind == "point":
            return PointLight(_arr(d, "position", path, (3,)), _arr(d, "intensity", path, (3,)))
        if kind == "spherical-area":
            return SphereLight(
                _arr(d, "position", path, (3,)), float(_get(d, "radius", path)), _arr(d, "radiance", path, (3,))
            )
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(path, str(exc)) from None
    raise SceneError(f"{path}.kind", f"unknown emitter kind {kind!r}")


def camera_from_json(d, path="camera"):
    if d is None:
        return None
    try:
        return Camera(
            _arr(d, "position", path, (3,)),
            _arr(d, "look_at", path, (3,)),
            _arr(d, "up", path, (3,), np.array([0.0, 0.0, 1.0])),
            float(_get(d, "fov_deg", path, 40.0)),
            int(_get(d, "width", path, 32)),
            int(_get(d, "height", path, 32)),
        )
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(path, str(exc)) from None


def scene_from_json(d):
    from .brdf import material_from_json

    if not isinstance(d, dict):
        raise SceneError("$", "scene must be a JSON object")
    for key in ("density", "materials", "emitters", "environment", "camera"):
        if key not in d:
            raise SceneError(key, "missing required top-level key")
    emitters = _get(d, "emitters", "$")
    if not isinstance(emitters, list):
        raise SceneError("emitters", "expected a list")
    return Scene(
        density_from_json(d["density"]),
        material_from_json(d["materials"]),
        [emitter_from_json(e, f"emitters[{i}]") for i, e in enumerate(emitters)],
        env_from_json(d["environment"]),
        camera_from_json(d["camera"]),
        float(d.get("ray_offset", 0.05)),
        str(d.get("name", "scene")),
    )


def load_scene(path):
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return scene_from_json(d)


def save_scene(scene, path):
    with open(path, "w") as f:
        json.dump(scene.to_json(), f, indent=1)
