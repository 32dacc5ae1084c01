"""Pointwise supremum over the control interval, vectorised across nodes."""
from __future__ import annotations

import numpy as np

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def control_grid(h_max: float, n: int) -> np.ndarray:
    return np.linspace(-h_max, h_max, n)


def grid_argmax(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Index of the best control along the last axis; ties go to the smallest |h|."""
    order = np.argsort(np.abs(grid), kind="stable")
    return order[np.argmax(values[..., order], axis=-1)]


def maximize(objective, h_max: float, n_grid: int, tol: float = 1e-6, grid=None):
    """Coarse grid search then golden-section refinement inside the bracketing cell.

    ``objective(h)`` takes controls of shape (n_nodes, m) and returns values of the
    same shape. A caller may pass the (1, n_grid) ``grid`` row it already holds so the
    objective can recognise it and reuse cached terms. Returns (h_star, value) arrays
    of shape (n_nodes,).
    """
    if grid is None:
        grid = control_grid(h_max, n_grid)[None, :]
    vals = objective(grid)
    grid = grid[0]
    j = grid_argmax(vals, grid)
    rows = np.arange(vals.shape[0])
    best_h = grid[j]
    best_v = vals[rows, j]

    a = grid[np.maximum(j - 1, 0)].copy()
    b = grid[np.minimum(j + 1, n_grid - 1)].copy()
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = objective(c[:, None])[:, 0]
    fd = objective(d[:, None])[:, 0]
    width = np.max(b - a)
    n_iter = int(np.ceil(np.log(tol / width) / np.log(INV_PHI))) if width > tol else 0
    for _ in range(n_iter):
        left = fc >= fd
        # left probe wins: keep [a, d]; otherwise keep [c, b]
        a, b = np.where(left, a, c), np.where(left, d, b)
        probe = np.where(left, b - INV_PHI * (b - a), a + INV_PHI * (b - a))
        fp = objective(probe[:, None])[:, 0]
        c, d = np.where(left, probe, d), np.where(left, c, probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    mid = 0.5 * (a + b)
    fm = objective(mid[:, None])[:, 0]
    better = fm > best_v
    return np.where(better, mid, best_h), np.where(better, fm, best_v)
