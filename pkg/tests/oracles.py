"""Brute-force reference implementations shared by the unit and acceptance tests.

Deliberately written as plain loops, independent of the vectorised code paths.
"""
import numpy as np


def grids_as_float(ds, idx):
    return [ds.pixels[i].astype(np.float64) / 255.0 for i in idx]


def mean_image_loop(grids):
    n, m, h, w = grids[0].shape
    acc, count = np.zeros((h, w)), 0
    for g in grids:
        for i in range(n):
            for j in range(m):
                acc += g[i, j]
                count += 1
    return acc / count


def mean_grid_loop(grids):
    acc = np.zeros(grids[0].shape)
    for g in grids:
        acc += g
    return acc / len(grids)


def baseline_grid_loop(kind, train_grids, train_labels, label):
    """Prediction of an average baseline for an object of class ``label``."""
    if kind.startswith("class_"):
        pool = [g for g, c in zip(train_grids, train_labels) if c == label]
        if not pool:
            return None
        kind = kind[len("class_"):]
    else:
        pool = train_grids
    if kind == "avg_view":
        img = mean_image_loop(pool)
        n, m = pool[0].shape[:2]
        return np.array([[img for _ in range(m)] for _ in range(n)])
    return mean_grid_loop(pool)


def pair_mse_loop(pred, grid, col, mode):
    """Per-pixel MSE; in relative mode prediction column j is compared with grid column (j + col) mod M."""
    n, m = grid.shape[:2]
    total, count = 0.0, 0
    for i in range(n):
        for j in range(m):
            src = (j + col) % m if mode == "relative" else j
            d = pred[i, j] - grid[i, src]
            total += float(np.sum(d * d))
            count += d.size
    return total / count


def recon_mse_x1000_loop(predict, grids, labels, mode):
    """Average over every (object, observed cell) pair; ``predict(grid, label, row, col)`` returns a grid."""
    total, pairs = 0.0, 0
    for g, c in zip(grids, labels):
        n, m = g.shape[:2]
        for row in range(n):
            for col in range(m):
                total += pair_mse_loop(predict(g, c, row, col), g, col, mode)
                pairs += 1
    return 1000.0 * total / pairs


def heatmap_loop(predict, grids, labels, mode):
    """(N, M) mean MSE keyed by the observed cell."""
    n, m = grids[0].shape[:2]
    out = np.zeros((n, m))
    for row in range(n):
        for col in range(m):
            s = 0.0
            for g, c in zip(grids, labels):
                s += pair_mse_loop(predict(g, c, row, col), g, col, mode)
            out[row, col] = s / len(grids)
    return out


def knn_loop(train_x, train_y, query, k):
    """Every row within the k-th smallest distance votes; ties by summed distance then label."""
    d = [float(np.sqrt(np.sum((np.asarray(x, float) - np.asarray(query, float)) ** 2))) for x in train_x]
    cut = sorted(d)[k - 1]
    order = [i for i in range(len(d)) if d[i] <= cut]
    votes = {}
    for i in order:
        cnt, dist = votes.get(int(train_y[i]), (0, 0.0))
        votes[int(train_y[i])] = (cnt + 1, dist + d[i])
    return min(votes, key=lambda c: (-votes[c][0], votes[c][1], c))
