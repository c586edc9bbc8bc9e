"""Built-in test scenes shared by the tests, the acceptance suite and the CLI."""

from .brdf import ConstantMaterial
from .scene import (
    BlobDensity,
    Camera,
    EnvironmentMap,
    GridDensity,
    HomogeneousBox,
    PointLight,
    Scene,
    SphereLight,
)


def vacuum(env=(0.5, 0.5, 0.5), width=8, height=8):
    cam = Camera([0.0, -3.0, 0.0], [0.0, 0.0, 0.0], width=width, height=height)
    return Scene(
        HomogeneousBox([-1, -1, -1], [1, 1, 1], 0.0),
        ConstantMaterial(0.0, 1.0, (0.5, 0.5, 0.5)),
        [],
        EnvironmentMap.constant(env),
        cam,
        name="vacuum",
    )


def two_blob(width=32, height=32, point_light=True):
    """An emissive blob next to a diffuse one, a point light above and a sky."""
    density = BlobDensity(
        centers=[[-0.4, 0.0, 0.0], [0.35, 0.1, -0.05]],
        peaks=[40.0, 40.0],
        radii=[0.18, 0.24],
        emission=[[3.0, 1.6, 0.6], [0.0, 0.0, 0.0]],
    )
    emitters = [PointLight([0.1, -0.3, 0.9], [1.5, 1.5, 1.5])] if point_light else []
    env = EnvironmentMap.sky((0.25, 0.35, 0.6), (0.3, 0.3, 0.3), (0.08, 0.07, 0.06))
    cam = Camera([0.0, -3.2, 0.6], [0.0, 0.0, 0.0], fov_deg=35.0, width=width, height=height)
    return Scene(density, ConstantMaterial(0.0, 0.6, (0.7, 0.6, 0.5)), emitters, env, cam, ray_offset=0.04, name="two-blob")


def occluder(width=32, height=32, res=64):
    """Floor, a half slab above it and a small spherical light above the slab edge."""
    density = GridDensity.from_shapes(
        res,
        [
            {"shape": "box", "lo": [-1, -1, -1], "hi": [1, 1, -0.75], "sigma": 80.0},
            {"shape": "box", "lo": [-1, -1, 0.05], "hi": [0.05, 1, 0.35], "sigma": 80.0},
        ],
    )
    emitters = [SphereLight([0.2, 0.0, 0.75], 0.15, [60.0, 60.0, 60.0])]
    env = EnvironmentMap.constant((0.05, 0.05, 0.05))
    cam = Camera([0.0, -2.6, -0.1], [0.0, 0.0, -0.75], fov_deg=45.0, width=width, height=height)
    return Scene(density, ConstantMaterial(0.0, 1.0, (0.8, 0.8, 0.8)), emitters, env, cam, ray_offset=0.08, name="occluder")


def sphere(material=None, width=32, height=32, res=48, spot=True):
    """A soft-edged grid sphere under a sky with an optional bright spot."""
    density = GridDensity.from_shapes(res, [{"shape": "sphere", "center": [0, 0, 0], "radius": 0.6, "sigma": 80.0}])
    spot_def = ([0.4, -0.5, 0.75], 0.12, (25.0, 24.0, 22.0)) if spot else None
    env = EnvironmentMap.sky((0.5, 0.6, 0.8), (0.6, 0.6, 0.6), (0.15, 0.13, 0.1), spot=spot_def)
    if material is None:
        material = ConstantMaterial(0.0, 1.0, (0.7, 0.3, 0.2))
    cam = Camera([0.0, -3.0, 0.0], [0.0, 0.0, 0.0], fov_deg=30.0, width=width, height=height)
    return Scene(density, material, [], env, cam, ray_offset=0.08, name="sphere")


def point_light_vacuum(position=(0.3, 0.4, 0.7), radius=0.12, radiance=50.0):
    """Empty space with one small spherical light (a point light has no solid angle to hit)."""
    return Scene(
        HomogeneousBox([-1, -1, -1], [1, 1, 1], 0.0),
        ConstantMaterial(0.0, 1.0, (0.5, 0.5, 0.5)),
        [SphereLight(position, radius, [radiance] * 3)],
        EnvironmentMap.constant((0.0, 0.0, 0.0)),
        None,
        name="point-light-vacuum",
    )


def wall(albedo=0.6, env=1.0, sigma=400.0):
    """Opaque soft-edged slab x >= 0 lit by a constant environment."""
    density = GridDensity.from_shapes(32, [{"shape": "box", "lo": [0.0, -2, -2], "hi": [2, 2, 2], "sigma": sigma}])
    return Scene(
        density,
        ConstantMaterial(0.0, 1.0, (albedo,) * 3),
        [],
        EnvironmentMap.constant((env,) * 3),
        None,
        ray_offset=0.15,
        name="wall",
    )


PRESETS = {
    "vacuum": vacuum,
    "two-blob": two_blob,
    "occluder": occluder,
    "sphere": sphere,
    "point-light-vacuum": point_light_vacuum,
    "wall": wall,
}


def by_name(name, **kw):
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
