import json
import math

import numpy as np
import pytest

from volmc import presets
from volmc.scene import (
    BlobDensity,
    Camera,
    EnvironmentMap,
    GridDensity,
    HomogeneousBox,
    SceneError,
    SphereLight,
    derived_normals,
    load_scene,
    save_scene,
    scene_from_json,
)


@pytest.mark.parametrize("name", sorted(presets.PRESETS))
def test_json_round_trip(name, tmp_path):
    sc = presets.by_name(name)
    if sc.camera is None:
        sc.camera = Camera([0, -3, 0], [0, 0, 0], width=4, height=4)
    path = tmp_path / "s.json"
    save_scene(sc, path)
    d = json.loads(path.read_text())
    assert set(d) >= {"density", "materials", "emitters", "environment", "camera"}
    back = load_scene(path)
    pts = np.random.default_rng(0).uniform(-1, 1, (200, 3))
    np.testing.assert_allclose(back.density.sigma(pts), sc.density.sigma(pts), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(back.env.texels, sc.env.texels)
    assert back.ray_offset == sc.ray_offset
    o1, d1 = back.camera.rays()
    o2, d2 = sc.camera.rays()
    np.testing.assert_allclose(d1, d2)


def _base():
    return presets.two_blob().to_json()


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("camera"), "camera"),
        (lambda d: d["density"].update(type="voxels"), "density.type"),
        (lambda d: d["density"].pop("centers"), "density.centers"),
        (lambda d: d["density"].update(peaks=[1.0, "x"]), "density.peaks"),
        (lambda d: d["emitters"][0].update(kind="laser"), "emitters[0].kind"),
        (lambda d: d["emitters"][0].pop("position"), "emitters[0].position"),
        (lambda d: d["camera"].update(position=[0, 1]), "camera.position"),
        (lambda d: d.update(emitters={}), "emitters"),
    ],
)
def test_malformed_scene_names_the_field(mutate, field):
    d = _base()
    mutate(d)
    with pytest.raises(SceneError) as exc:
        scene_from_json(d)
    assert field in str(exc.value)


def test_bad_json_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"density": [1, 2,,]}')
    with pytest.raises(SceneError) as exc:
        load_scene(p)
    assert "bad.json:1:" in str(exc.value)


def test_homogeneous_box_and_bounds():
    box = HomogeneousBox([0, 0, 0], [1, 1, 1], 2.5)
    assert box.sigma(np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]])).tolist() == [2.5, 0.0]
    with pytest.raises(ValueError):
        HomogeneousBox([0, 0, 0], [1, 1, 1], -1.0)


def test_blob_gradient_matches_finite_differences(rng):
    b = BlobDensity([[0.1, 0.0, 0.2], [-0.3, 0.2, 0.0]], [10.0, 5.0], [0.3, 0.2])
    pts = rng.uniform(-0.5, 0.5, (20, 3))
    h = 1e-6
    fd = np.stack([(b.sigma(pts + h * e) - b.sigma(pts - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(b.gradient(pts), fd, rtol=1e-6, atol=1e-6)


def test_blob_emission_is_density_weighted():
    b = BlobDensity([[0, 0, 0], [0.1, 0, 0]], [1.0, 3.0], [0.2, 0.2], [[1, 0, 0], [0, 1, 0]])
    x = np.array([[0.05, 0, 0]])
    np.testing.assert_allclose(b.emission(x), [[0.25, 0.75, 0.0]])


def test_grid_normals_point_outward():
    g = GridDensity.from_shapes(32, [{"shape": "sphere", "center": [0, 0, 0], "radius": 0.5, "sigma": 50.0}])
    dirs = np.random.default_rng(1).normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n, ok = derived_normals(g, 0.5 * dirs)
    assert ok.all()
    assert np.all(np.sum(n * dirs, axis=1) > 0.95)


def test_degenerate_normal_flagged():
    g = HomogeneousBox([-1, -1, -1], [1, 1, 1], 1.0)
    _, ok = derived_normals(g, np.zeros((3, 3)))
    assert not ok.any()


def test_environment_lookup_wraps_and_clamps():
    tex = np.zeros((4, 8, 3))
    tex[:, 0] = 1.0
    tex[:, -1] = 1.0
    env = EnvironmentMap(tex)
    # phi = -pi and +pi are the same column seam
    w = np.array([[-1.0, -1e-9, 0.0], [-1.0, 1e-9, 0.0]])
    v = env.radiance(w)
    np.testing.assert_allclose(v[0], v[1], atol=1e-6)
    np.testing.assert_allclose(env.radiance(np.array([[0, 0, 1.0], [0, 0, -1.0]])).shape, (2, 3))
    c = EnvironmentMap.constant((0.2, 0.3, 0.4))
    np.testing.assert_allclose(c.radiance(np.random.default_rng(0).normal(size=(10, 3))), np.tile([0.2, 0.3, 0.4], (10, 1)))


def test_sky_spot_is_bright_in_its_direction():
    env = EnvironmentMap.sky((0.5, 0.5, 0.5), (0.5, 0.5, 0.5), (0.1, 0.1, 0.1), 64, 128, spot=([1, 0, 1], 0.2, (20, 20, 20)))
    d = np.array([[1, 0, 1.0]]) / math.sqrt(2)
    assert env.radiance(d)[0, 0] > 10
    assert env.radiance(-d)[0, 0] < 1


def test_camera_rays_unit_and_centered():
    cam = Camera([0, -3, 0], [0, 0, 0], fov_deg=40, width=5, height=3)
    o, d = cam.rays()
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    np.testing.assert_allclose(d[7], [0, 1, 0], atol=1e-12)
    assert d[0, 2] > 0 and d[0, 0] < 0  # row 0 is the top, column 0 the left


def test_segment_clips_to_box_and_area_lights():
    sc = presets.occluder()
    o = np.array([[-0.5, 0.0, 0.95], [0.2, 0.0, 3.0]])
    d = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
    t0, t1, bg = sc.segment(o, d)
    assert t0[0] == 0.0 and t1[0] == pytest.approx(1.95)
    # the second ray hits the light first: the light is its background
    assert t1[1] == pytest.approx(3.0 - 0.9)
    np.testing.assert_allclose(bg[1], 60.0)


def test_sphere_light_intersection():
    s = SphereLight([0, 0, 2], 0.5, [1, 1, 1])
    t = s.intersect(np.zeros((3, 3)), np.array([[0, 0, 1.0], [1.0, 0, 0], [0, 0, -1.0]]))
    assert t[0] == pytest.approx(1.5)
    assert np.isinf(t[1:]).all()


def test_transmittance_through_slab():
    sc = presets.occluder()
    tr = sc.transmittance(np.array([[-0.5, 0.0, -0.7]]), np.array([[-0.5, 0.0, 0.7]]), 256)
    assert tr[0] < 1e-3
