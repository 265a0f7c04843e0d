import math

import numpy as np
import pytest

from shapecodes.formats import dataset_bytes
from shapecodes.rng import make_rng
from shapecodes.shapeforge import (FAMILY_NAMES, Box, CameraPose, DatasetConfig, RenderConfig, Scene, ShapeSpec,
                                   generate_dataset, render_view, render_viewgrid, sample_shape, TRAIN, VAL, TEST,
                                   UNSEEN_TRAIN, UNSEEN_TEST)
from shapecodes.viewgrid import ViewSphereSpec, sample_view_sphere

VERTICAL_LIGHT = RenderConfig(light_direction=(0.0, 1.0, 0.0))


# -- view sphere --------------------------------------------------------------


def test_view_sphere_examples():
    modelnet = sample_view_sphere(12, [-90, -60, -30, 0, 30, 60, 90])
    assert modelnet.grid_shape == (7, 12) and modelnet.size == 84
    assert modelnet.azimuths == tuple(30.0 * k for k in range(12))
    shapenet = sample_view_sphere(8, [-60, -30, 0, 30, 60])
    assert shapenet.grid_shape == (5, 8)
    assert shapenet.azimuths == (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)
    single = sample_view_sphere(1, [0])
    assert single.grid_shape == (1, 1) and single.poses() == [(0.0, 0.0)]


def test_view_sphere_row_major_and_errors():
    spec = sample_view_sphere(3, [-30, 30])
    assert spec.poses() == [(-30.0, 0.0), (-30.0, 120.0), (-30.0, 240.0), (30.0, 0.0), (30.0, 120.0), (30.0, 240.0)]
    for bad in ([0, 0], [30, 0], [0, 91]):
        with pytest.raises(ValueError):
            sample_view_sphere(4, bad)
    with pytest.raises(ValueError):
        sample_view_sphere(0, [0])


# -- shapes -------------------------------------------------------------------


@pytest.mark.parametrize("family", FAMILY_NAMES)
def test_shapes_fit_unit_sphere(family):
    r = make_rng(0, 1, FAMILY_NAMES.index(family))
    pts = r.normal(size=(4000, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    for i in range(5):
        scene = sample_shape(family, r, i).scene()
        assert np.all(scene.sdf(pts) > 0), f"{family} pokes out of the unit sphere"
        # normalised to radius 0.95, so the surface comes close to the sphere somewhere
        assert scene.sdf(pts).min() < 0.15


def test_same_params_same_sdf():
    r = np.random.default_rng(0)
    pts = r.uniform(-1, 1, size=(500, 3))
    a = ShapeSpec("chair", (0.4, 0.6, 0.7, 0.05, 0.05), 1).scene()
    b = ShapeSpec("chair", (0.4, 0.6, 0.7, 0.05, 0.05), 9).scene()
    assert a.sdf(pts).tobytes() == b.sdf(pts).tobytes()


def test_at_least_ten_families():
    assert len(FAMILY_NAMES) >= 10


# -- renderer -----------------------------------------------------------------


def test_camera_basis_convention():
    c, r, u = CameraPose(0, 0).basis()
    np.testing.assert_allclose(c, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(r, [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(u, [0, 1, 0], atol=1e-15)
    for e, a in [(90, 0), (-90, 135), (45, 200)]:
        c, r, u = CameraPose(e, a).basis()
        frame = np.stack([c, r, u])
        np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        CameraPose(91, 0).basis()


def _cube_oracle(half, cfg):
    """Pixels whose centre projects inside [-half, half]^2; pixel size 2w/n, row 0 at the top."""
    n, w = cfg.image_size, cfg.ortho_window
    px = 2 * w / n
    lo = math.ceil((w - half) / px - 0.5)
    hi = math.floor((w + half) / px - 0.5)
    mask = np.zeros((n, n), dtype=bool)
    mask[lo:hi + 1, lo:hi + 1] = True
    return mask, lo, hi


@pytest.mark.parametrize("half", [0.5, 0.7, 0.33])
def test_cube_silhouette_matches_projection(half):
    cfg = RenderConfig()
    img = render_view(Scene([Box((0, 0, 0), (half, half, half))]), CameraPose(0, 0), cfg)
    oracle, lo, hi = _cube_oracle(half, cfg)
    np.testing.assert_array_equal(img > 0, oracle)
    # the visible +z face has normal (0, 0, 1)
    expected = cfg.ambient + cfg.diffuse * max(0.0, cfg.light_direction[2])
    np.testing.assert_allclose(img[oracle], expected, atol=1e-6)
    assert (lo, hi) == (int(np.argmax(oracle[lo])), int(oracle.shape[1] - 1 - np.argmax(oracle[lo][::-1])))


def test_empty_scene_is_background():
    img = render_view(Scene([]), CameraPose(30, 60))
    assert img.shape == (32, 32) and not img.any()


def test_sphere_identical_across_azimuths_under_vertical_light():
    from shapecodes.shapeforge import Ellipsoid

    sphere = Scene([Ellipsoid((0, 0, 0), (0.8, 0.8, 0.8))])
    grid = render_viewgrid(sphere, sample_view_sphere(12, [-60, 0, 60]), VERTICAL_LIGHT).images
    for row in grid:
        for img in row[1:]:
            np.testing.assert_array_equal(img > 0, row[0] > 0)
            np.testing.assert_allclose(img, row[0], atol=1e-6)


def test_cross_fourfold_symmetry():
    r = make_rng(3, 1, 10)
    cross = sample_shape("cross", r)
    grid = render_viewgrid(cross, sample_view_sphere(8, [-30, 0, 45]), VERTICAL_LIGHT).images
    for c in range(8):
        np.testing.assert_array_equal(grid[:, c] > 0, grid[:, (c + 2) % 8] > 0)
        np.testing.assert_allclose(grid[:, c], grid[:, (c + 2) % 8], atol=1e-6)


def test_viewgrid_cells_equal_single_renders():
    shape = sample_shape("t_bracket", np.random.default_rng(4))
    spec = sample_view_sphere(4, [-90, 0, 60])
    cfg = RenderConfig(image_size=16)
    grid = render_viewgrid(shape, spec, cfg).images
    for i, e in enumerate(spec.elevations):
        for j, a in enumerate(spec.azimuths):
            assert grid[i, j].tobytes() == render_view(shape, CameraPose(e, a), cfg).tobytes()


def test_azimuth_periodicity_and_range():
    shape = sample_shape("stepped", np.random.default_rng(5))
    a = render_view(shape, CameraPose(30, 40))
    b = render_view(shape, CameraPose(30, 400))
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1
    assert np.all((a == 0) | (a >= RenderConfig().ambient))


# -- datasets -----------------------------------------------------------------


def test_dataset_counts():
    cfg = DatasetConfig(num_classes=5, instances_per_class=20)
    ds = generate_dataset(cfg, sample_view_sphere(12, [-90, -60, -30, 0, 30, 60, 90]), RenderConfig(image_size=8), 2)
    assert len(ds) == 100
    assert ds.pixels.shape[1:3] == (7, 12)
    assert ds.pixels.shape[0] * 84 == 8400
    counts = {s: len(ds.split_indices(s)) for s in (TRAIN, VAL, TEST)}
    assert counts == {TRAIN: 70, VAL: 10, TEST: 20}


def test_dataset_splits_and_unseen(small_dataset):
    ds = small_dataset
    assert len(ds) == 50
    seen = set(ds.classes_in(TRAIN))
    unseen = set(ds.classes_in(UNSEEN_TRAIN))
    assert seen == {0, 1, 2, 3} and unseen == {4}
    assert set(ds.classes_in(UNSEEN_TEST)) == unseen and not (seen & unseen)
    assert ds.class_names == FAMILY_NAMES[:5]
    assert ds.pixels[ds.pixels > 0].min() >= round(255 * 0.2)


def test_dataset_is_deterministic(small_dataset):
    cfg = DatasetConfig(num_classes=4, instances_per_class=10, num_unseen=1, unseen_per_class=10)
    spec = ViewSphereSpec(8, (-60.0, -30.0, 0.0, 30.0, 60.0))
    again = generate_dataset(cfg, spec, RenderConfig(image_size=16), seed=5)
    assert dataset_bytes(again) == dataset_bytes(small_dataset)
    other = generate_dataset(cfg, spec, RenderConfig(image_size=16), seed=6)
    assert dataset_bytes(other) != dataset_bytes(small_dataset)


def test_parallel_generation_matches_serial():
    cfg = DatasetConfig(num_classes=2, instances_per_class=3, val_fraction=0, test_fraction=0)
    spec = sample_view_sphere(4, [0, 45])
    a = generate_dataset(cfg, spec, RenderConfig(image_size=8), 1, workers=1)
    b = generate_dataset(cfg, spec, RenderConfig(image_size=8), 1, workers=2)
    assert dataset_bytes(a) == dataset_bytes(b)


def test_too_many_classes():
    with pytest.raises(ValueError):
        generate_dataset(DatasetConfig(num_classes=len(FAMILY_NAMES) + 1), sample_view_sphere(1, [0]))
    with pytest.raises(ValueError):
        DatasetConfig(num_classes=10, num_unseen=3).family_order()


def test_silhouette_area_differs_across_families(small_dataset):
    ds = small_dataset
    area = (ds.pixels > 0).mean(axis=(1, 2, 3, 4))
    labels = ds.class_ids.astype(int)
    classes = np.unique(labels)
    means = np.array([area[labels == c].mean() for c in classes])
    assert len(np.unique(np.round(means, 4))) == len(classes)
    # between-class share of the variance: the classes are not one blob
    between = sum((labels == c).sum() * (m - area.mean()) ** 2 for c, m in zip(classes, means))
    total = ((area - area.mean()) ** 2).sum()
    assert between / total > 0.2
