import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import baseline_grid_loop, grids_as_float, heatmap_loop, knn_loop, mean_grid_loop, recon_mse_x1000_loop

from shapecodes import evaluation
from shapecodes.evaluation import (AVG_KINDS, AVG_VIEW, AVG_VIEWGRID, CLASS_AVG_VIEWGRID, FeatureSet, NetReconstructor,
                                   NotApplicable, evaluate_reconstruction, fit_avg_from_dataset, fit_avg_predictor,
                                   knn_classify, knn_predict, per_view_mse_heatmap, pixel_features,
                                   recognition_accuracy, sample_views)
from shapecodes.network import NetConfig, ShapeCodeNet
from shapecodes.shapeforge import TEST, TRAIN, UNSEEN_TEST


# -- average predictors -------------------------------------------------------


def test_avg_view_constant_example():
    grids = np.stack([np.full((2, 3, 2, 2), 0.2), np.full((2, 3, 2, 2), 0.4)])
    pred = fit_avg_predictor(grids, AVG_VIEW).grid_for()
    np.testing.assert_allclose(pred, 0.3, rtol=1e-15)
    assert pred.shape == (2, 3, 2, 2)


def test_single_object_class_viewgrid_is_exact():
    g = np.random.default_rng(0).uniform(size=(1, 2, 3, 4, 4))
    p = fit_avg_predictor(g, CLASS_AVG_VIEWGRID, [7])
    np.testing.assert_array_equal(p.grid_for(7), g[0])
    with pytest.raises(NotApplicable):
        p.grid_for(3)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_avg_predictor(np.zeros((0, 1, 1, 2, 2)), AVG_VIEW)
    with pytest.raises(ValueError):
        fit_avg_predictor(np.zeros((1, 1, 1, 2, 2)), CLASS_AVG_VIEWGRID)
    with pytest.raises(ValueError):
        fit_avg_predictor(np.zeros((1, 1, 1, 2, 2)), "median")


@pytest.mark.parametrize("kind", AVG_KINDS)
def test_baselines_match_brute_force_means(small_dataset, kind):
    ds = small_dataset
    idx = ds.split_indices(TRAIN)
    grids, labels = grids_as_float(ds, idx), [int(c) for c in ds.class_ids[idx]]
    pred = fit_avg_from_dataset(ds, kind)
    for c in sorted(set(labels)):
        np.testing.assert_allclose(pred.grid_for(c), baseline_grid_loop(kind, grids, labels, c), rtol=0, atol=1e-12)


def _baseline_fn(kind, ds):
    idx = ds.split_indices(TRAIN)
    grids, labels = grids_as_float(ds, idx), [int(c) for c in ds.class_ids[idx]]
    cache = {}

    def predict(g, c, row, col):
        if c not in cache:
            cache[c] = baseline_grid_loop(kind, grids, labels, c)
        return cache[c]
    return predict


@pytest.mark.parametrize("kind", [AVG_VIEW, CLASS_AVG_VIEWGRID])
def test_reconstruction_score_matches_loop(small_dataset, kind):
    ds = small_dataset
    idx = ds.split_indices(TEST)
    res = evaluate_reconstruction(fit_avg_from_dataset(ds, kind), ds, TEST)
    expected = recon_mse_x1000_loop(_baseline_fn(kind, ds), grids_as_float(ds, idx), ds.class_ids[idx], "canonical")
    assert abs(res.overall - expected) < 1e-9
    assert res.pairs == len(idx) * ds.spec.size


def test_class_baselines_not_applicable_on_unseen(small_dataset):
    with pytest.raises(NotApplicable):
        evaluate_reconstruction(fit_avg_from_dataset(small_dataset, CLASS_AVG_VIEWGRID), small_dataset, UNSEEN_TEST)


def test_avg_view_no_better_than_avg_viewgrid(small_dataset):
    for split in (TEST, UNSEEN_TEST):
        v = evaluate_reconstruction(fit_avg_from_dataset(small_dataset, AVG_VIEW), small_dataset, split).overall
        g = evaluate_reconstruction(fit_avg_from_dataset(small_dataset, AVG_VIEWGRID), small_dataset, split).overall
        assert v >= g


class _Perfect:
    mode = "canonical"

    def predict_batch(self, grids, class_ids, rows, cols):
        return np.asarray(grids, dtype=np.float64)


def test_perfect_predictor_scores_zero(small_dataset):
    assert evaluate_reconstruction(_Perfect(), small_dataset, TEST).overall == 0.0


def _net(ds, seed=0):
    n, m = ds.spec.grid_shape
    return ShapeCodeNet(NetConfig(image_size=ds.image_size, num_elevations=n, num_azimuths=m), seed=seed)


def test_relative_network_score_and_heatmap_match_loops(small_dataset):
    ds = small_dataset
    rec = NetReconstructor(_net(ds), ds.spec.elevations)
    idx = ds.split_indices(UNSEEN_TEST)[:2]

    def predict(g, c, row, col):
        return rec.net.predict(g[row, col][None], [ds.spec.elevations[row]])[0].astype(np.float64)

    grids, labels = grids_as_float(ds, idx), ds.class_ids[idx]
    heat = per_view_mse_heatmap(rec, ds, idx)
    assert heat.shape == ds.spec.grid_shape
    np.testing.assert_allclose(heat, heatmap_loop(predict, grids, labels, "relative"), rtol=0, atol=1e-9)


class _ConstantError:
    """Predicts ground truth plus 0.1 everywhere."""
    mode = "relative"

    def predict_batch(self, grids, class_ids, rows, cols):
        from shapecodes.viewgrid import shift_images
        return shift_images(np.asarray(grids, dtype=np.float64), np.asarray(cols)) + 0.1


def test_constant_error_gives_uniform_heatmap(small_dataset):
    heat = per_view_mse_heatmap(_ConstantError(), small_dataset, [0, 1])
    np.testing.assert_allclose(heat, 0.01, rtol=1e-12)
    with pytest.raises(ValueError):
        per_view_mse_heatmap(_ConstantError(), small_dataset, [])


# -- k-NN ---------------------------------------------------------------------


def test_knn_examples():
    X = np.array([[0.0, 0], [1, 0], [0, 3], [5, 5]])
    y = np.array([0, 1, 2, 2])
    assert knn_classify(FeatureSet(X, y), X[2], k=1) == 2
    # k=4 on a line: classes 3 and 8 each get two votes, class 8 is closer in total
    X = np.array([[-1.0], [-4.0], [2.0], [2.5]])
    y = np.array([3, 3, 8, 8])
    assert knn_classify(FeatureSet(X, y), np.array([0.0]), k=4) == 8
    # equal votes and equal summed distance: lower class id
    X = np.array([[-1.0], [1.0]])
    assert knn_classify(FeatureSet(X, np.array([4, 2])), np.array([0.0]), k=2) == 2


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_classify(FeatureSet(np.zeros((0, 2)), np.zeros(0)), np.zeros(2))
    with pytest.raises(ValueError):
        knn_classify(FeatureSet(np.zeros((2, 2)), np.zeros(2)), np.zeros(2), k=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 7))
def test_knn_matches_loop_and_permutation(seed, k):
    r = np.random.default_rng(seed)
    n = int(r.integers(k, 25))
    # small integer grid so exact distance ties are common
    X = r.integers(0, 3, size=(n, 2)).astype(float)
    y = r.integers(0, 3, size=n)
    Q = r.integers(0, 3, size=(6, 2)).astype(float)
    pred = knn_predict(FeatureSet(X, y), Q, k)
    assert pred.tolist() == [knn_loop(X, y, q, k) for q in Q]
    perm = r.permutation(n)
    assert knn_predict(FeatureSet(X[perm], y[perm]), Q, k).tolist() == pred.tolist()
    # duplicating rows of the predicted class never changes the answer
    for q, p in zip(Q, pred):
        extra = X[y == p]
        X2, y2 = np.concatenate([X, extra]), np.concatenate([y, np.full(len(extra), p)])
        assert knn_classify(FeatureSet(X2, y2), q, k) == p


def test_one_hot_features_are_perfect(small_dataset, monkeypatch):
    # some low-resolution views of different families coincide, so key the features by object instead
    ds = small_dataset
    monkeypatch.setattr(evaluation, "gather_views", lambda d, objs, rows, cols: np.eye(8)[d.class_ids[objs]])
    assert recognition_accuracy(lambda x: x, ds, "seen", 20, 5, 0) == 100.0
    assert recognition_accuracy(lambda x: x, ds, "unseen", 20, 5, 0) == 100.0


def test_sample_views_deterministic_and_capped(small_dataset):
    a = sample_views(small_dataset, TRAIN, 30, seed=2)
    b = sample_views(small_dataset, TRAIN, 30, seed=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    labels = small_dataset.class_ids[a[0]]
    assert all((labels == c).sum() == 30 for c in range(4))
    assert len(set(zip(*a))) == len(a[0])  # without replacement
    capped = sample_views(small_dataset, TRAIN, 10 ** 6, seed=0)
    assert len(capped[0]) == len(small_dataset.split_indices(TRAIN)) * small_dataset.spec.size


def test_random_features_above_chance(small_dataset):
    ds = small_dataset
    accs = [recognition_accuracy(lambda im, net=_net(ds, s): net.features(im, "fc3"), ds, "seen", 100, 5, s)
            for s in range(5)]
    assert np.mean(accs) > 100.0 / 4
    assert recognition_accuracy(pixel_features, ds, "seen", 100, 5, 0) > 100.0 / 4
