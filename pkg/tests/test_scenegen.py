from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointfuse.camera import CameraView, intrinsics_from_fov, look_rotation, make_extrinsics
from pointfuse.pipeline import SuiteSettings, backproject_scene, plan_views, toy_pose_config
from pointfuse.raycast import build_bvh, render_association
from pointfuse.scenegen import (
    DEFAULT_PALETTE,
    FLOOR,
    PICTURE,
    TABLE,
    WALL,
    PlacementError,
    SceneRecipe,
    canonical_feature,
    class_color,
    generate_scene,
    generate_scene_with_layout,
    majority_label,
    synth_features,
)


def test_empty_room_shell():
    m = generate_scene(SceneRecipe(seed=1, boxes=(0, 0), panels=(0, 0)))
    assert m.n_faces == 10
    assert set(np.unique(m.labels)) == {FLOOR, WALL}
    assert m.normals is not None and m.colors is not None
    # floor faces up, walls face into the room
    centre = m.vertices.mean(axis=0)
    for f in m.faces:
        a, b, c = m.vertices[f]
        n = np.cross(b - a, c - a)
        assert np.dot(n, centre - a) > 0


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_determinism_and_placement_record(seed):
    r = SceneRecipe(seed=seed, room_jitter=0.15, grid_step=0.5)
    m1, places = generate_scene_with_layout(r)
    m2 = generate_scene(r)
    for a in ("vertices", "faces", "labels", "colors", "normals"):
        np.testing.assert_array_equal(getattr(m1, a), getattr(m2, a))
    hist = Counter()
    for pl in places:
        ids = m1.labels[pl.first_vertex : pl.first_vertex + pl.n_vertices]
        assert (ids == pl.label).all()
        hist[pl.label] += pl.n_vertices
    assert sum(hist.values()) == m1.n_vertices
    assert hist == Counter(m1.labels.tolist())
    assert sum(pl.kind == "box" for pl in places) in range(2, 5)
    assert sum(pl.kind == "panel" for pl in places) in range(1, 4)
    # faces never mix objects
    assert (m1.labels[m1.faces] == m1.labels[m1.faces[:, :1]]).all()


def test_grid_step_bounds_edges():
    m = generate_scene(SceneRecipe(seed=3, grid_step=0.3))
    v = m.vertices[m.faces]
    edges = np.sort(np.linalg.norm(v - np.roll(v, 1, axis=1), axis=2), axis=1)
    # the longest edge of each triangle is the cell diagonal
    assert edges[:, :2].max() <= 0.3 + 1e-9


def test_impossible_placement():
    with pytest.raises(PlacementError):
        generate_scene(SceneRecipe(seed=0, room=(1.0, 1.0, 2.6), boxes=(3, 3)))
    with pytest.raises(PlacementError):
        generate_scene(SceneRecipe(seed=0, room=(4.0, 4.0, 1.2), boxes=(0, 0), panels=(1, 1)))


def test_recipe_validation():
    with pytest.raises(ValueError):
        SceneRecipe(room=(0, 1, 1))
    with pytest.raises(ValueError):
        SceneRecipe(boxes=(3, 1))
    with pytest.raises(ValueError):
        SceneRecipe(grid_step=0)
    with pytest.raises(ValueError):
        SceneRecipe(palette={i: (0, 0, 0) for i in range(1, 22)})


def test_majority_label():
    t = np.array([[1, 1, 2], [3, 2, 3], [4, 5, 6], [7, 7, 7], [0, 2, 0]])
    np.testing.assert_array_equal(majority_label(t), [1, 3, 4, 7, 0])


def down_camera(room, res=(20, 20)):
    K = intrinsics_from_fov(res[1], res[0], 60)
    E = make_extrinsics(look_rotation(0, -90), (room[0] / 2, room[1] / 2, 1.5))
    return CameraView(K, E, res[1], res[0])


def test_floor_pixel_and_miss_pixel():
    m = generate_scene(SceneRecipe(seed=2, boxes=(0, 0), panels=(0, 0)))
    cam = down_camera((4, 4))
    amap = render_association(m, build_bvh(m), cam)
    feat = synth_features(m, cam, amap, 32).data
    f = feat[10, 10]
    expect = np.zeros(32)
    expect[FLOOR - 1] = 1
    expect[20:23] = np.array(DEFAULT_PALETTE[FLOOR]) / 255
    np.testing.assert_allclose(f, expect, atol=1e-12)
    # a camera outside the room looking away sees nothing
    away = CameraView(cam.intrinsics, make_extrinsics(look_rotation(0, 90), (2, 2, 5)), 20, 20)
    amap = render_association(m, build_bvh(m), away)
    assert not amap.hit.any()
    assert not synth_features(m, away, amap, 32, noise=0.5).data.any()


def test_noise_and_errors():
    m = generate_scene(SceneRecipe(seed=2, boxes=(0, 0), panels=(0, 0)))
    cam = down_camera((4, 4))
    amap = render_association(m, build_bvh(m), cam)
    a = synth_features(m, cam, amap, 32, noise=0.1, seed=5).data
    b = synth_features(m, cam, amap, 32, noise=0.1, seed=5).data
    np.testing.assert_array_equal(a, b)
    resid = a[amap.hit] - synth_features(m, cam, amap, 32).data[amap.hit]
    assert abs(resid.std() - 0.1) < 0.01
    with pytest.raises(ValueError, match="dim"):
        synth_features(m, cam, amap, 22)
    with pytest.raises(ValueError, match="resolution"):
        synth_features(m, down_camera((4, 4), (10, 10)), amap, 32)


def test_noise_free_backprojection_matches_canonical():
    s = SuiteSettings(noise=0.0)
    m = generate_scene(SceneRecipe(seed=4, room_jitter=0.15, grid_step=0.2))
    plan = plan_views(m, toy_pose_config())
    store, cov = backproject_scene(m, plan, 32, 0.0, seed=0)
    hit = np.linalg.norm(store.features, axis=1) > 0
    assert hit.mean() > 0.8 and cov == pytest.approx(hit.mean())
    canon = np.stack([canonical_feature(l, c, s.image_dim) for l, c in zip(m.labels[hit], m.colors[hit])])
    cos = np.sum(canon * store.features[hit], axis=1)
    assert cos.min() > 0.99
    seen = set(np.unique(m.labels[hit]))
    assert {WALL, FLOOR, TABLE} <= seen and PICTURE in set(m.labels)


def test_class_color():
    assert class_color(FLOOR) == DEFAULT_PALETTE[FLOOR]
    assert class_color(0) == (0, 0, 0)
    assert class_color(5) == class_color(5)
    assert all(40 <= c < 230 for c in class_color(5))
