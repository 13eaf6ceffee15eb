"""Density discretisation, region statistics and weighted-Voronoi partitions.

The region is covered by a ``grid`` x ``grid`` lattice over its bounding box.
Only cells whose centre lies inside the (convex) region are kept; all
per-cell arrays below are indexed over those in-region cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .model import ScenarioConfig


@dataclass(frozen=True)
class DensityGrid:
    centers: np.ndarray  # (K, 2) in-region cell centres, m
    mass: np.ndarray  # (K,) sensors per cell
    ij: np.ndarray  # (K, 2) lattice indices (ix, iy)
    shape: tuple  # (grid, grid)
    cell_size: tuple  # (dx, dy), m

    @property
    def n_cells(self) -> int:
        return len(self.mass)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @cached_property
    def index_map(self) -> np.ndarray:
        """(grid, grid) array of in-region cell index, -1 outside the region."""
        idx = np.full(self.shape, -1, dtype=np.int64)
        idx[self.ij[:, 0], self.ij[:, 1]] = np.arange(self.n_cells)
        return idx


def inside_convex(points, vertices) -> np.ndarray:
    """Half-plane test against every edge of a convex polygon (boundary counts as inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    # sign of the shoelace area: +1 for counter-clockwise vertex order
    orient = np.sign(np.sum(v[:, 0] * np.roll(v, -1, axis=0)[:, 1] - np.roll(v, -1, axis=0)[:, 0] * v[:, 1]))
    rel = pts[:, None, :] - v[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(orient * cross >= -1e-9 * np.abs(e).max() ** 2, axis=1)


def build_grid(config: ScenarioConfig) -> DensityGrid:
    """Discretise the sensor density over in-region cells.

    Uniform density spreads ``sensor_count`` equally over the in-region cells,
    so the total is exact. Explicit densities are integrated as value times
    cell area at each centre.
    """
    n = config.grid
    x0, y0, x1, y1 = config.bbox
    dx, dy = (x1 - x0) / n, (y1 - y0) / n
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    centers = np.column_stack([x0 + (ix + 0.5) * dx, y0 + (iy + 0.5) * dy])
    inside = inside_convex(centers, config.vertices)
    if config.density_samples is None:
        mass = np.full(int(inside.sum()), config.sensor_count / inside.sum())
    else:
        dens = np.asarray(config.density_samples, dtype=float).ravel()
        mass = dens[inside] * dx * dy
        if not mass.sum() > 0:
            raise ValueError("density has no mass inside the region")
    return DensityGrid(
        centers=centers[inside],
        mass=mass,
        ij=np.column_stack([ix[inside], iy[inside]]),
        shape=(n, n),
        cell_size=(dx, dy),
    )


@dataclass(frozen=True)
class RegionStats:
    vols: np.ndarray  # (N,)
    cents: np.ndarray  # (N, 2)
    inertia: np.ndarray  # (N,) sum of mass * |omega - c_n|^2 over the region
    degenerate: np.ndarray  # (N,) bool, zero-volume regions


@dataclass(frozen=True)
class Partition:
    owner: np.ndarray  # (K,) AP index per in-region cell
    n_aps: int

    def stats(self, grid: DensityGrid, fallback: Optional[np.ndarray] = None) -> RegionStats:
        return region_stats(self, grid, fallback)


def region_stats(partition: Partition, grid: DensityGrid, fallback=None) -> RegionStats:
    """Volumes, centroids and central second moments of every region.

    A zero-volume region takes its centroid from ``fallback`` (normally the
    current AP position) and is flagged degenerate.
    """
    n = partition.n_aps
    own = partition.owner
    m = grid.mass
    vols = np.bincount(own, weights=m, minlength=n)
    sx = np.bincount(own, weights=m * grid.centers[:, 0], minlength=n)
    sy = np.bincount(own, weights=m * grid.centers[:, 1], minlength=n)
    degenerate = ~(vols > 0)
    cents = np.zeros((n, 2)) if fallback is None else np.array(fallback, dtype=float)
    ok = ~degenerate
    cents[ok, 0] = sx[ok] / vols[ok]
    cents[ok, 1] = sy[ok] / vols[ok]
    off = grid.centers - cents[own]
    inertia = np.bincount(own, weights=m * np.einsum("ij,ij->i", off, off), minlength=n)
    return RegionStats(vols=vols, cents=cents, inertia=inertia, degenerate=degenerate)


def weighted_voronoi_assign(p, a, grid: DensityGrid) -> Partition:
    """Each cell goes to argmin_n a_n |p_n - omega|^2, ties to the lowest index."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    d2 = ((grid.centers[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    owner = np.argmin(d2 * a[None, :], axis=1)
    return Partition(owner=owner, n_aps=len(p))


def neighbors(partition: Partition, grid: DensityGrid) -> list[tuple[int, int]]:
    """Sorted list of (i, j), i < j, whose regions share a 4-adjacent cell pair."""
    img = np.full(grid.shape, -1, dtype=np.int64)
    img[grid.ij[:, 0], grid.ij[:, 1]] = partition.owner
    pairs = set()
    for u, w in ((img[1:, :], img[:-1, :]), (img[:, 1:], img[:, :-1])):
        mask = (u >= 0) & (w >= 0) & (u != w)
        if mask.any():
            lo = np.minimum(u[mask], w[mask])
            hi = np.maximum(u[mask], w[mask])
            pairs.update(zip(lo.tolist(), hi.tolist()))
    return sorted(pairs)


def are_neighbors(i: int, j: int, partition: Partition, grid: DensityGrid) -> bool:
    img = np.full(grid.shape, -1, dtype=np.int64)
    img[grid.ij[:, 0], grid.ij[:, 1]] = partition.owner
    for u, w in ((img[1:, :], img[:-1, :]), (img[:, 1:], img[:, :-1])):
        if np.any(((u == i) & (w == j)) | ((u == j) & (w == i))):
            return True
    return False


class UnionSplit:
    """Threshold family of splits of the union of regions i and j.

    For h = alpha p_i + (1 - alpha) p_j a union cell goes to i iff
    a_i |p_i - w|^2 - a_j |p_j - w|^2 <= a_i |p_i - h|^2 - a_j |p_j - h|^2.
    The right-hand side falls as alpha grows, so v_i(alpha) is nonincreasing.
    Cells are presorted by their key so a split is one ``searchsorted``.
    """

    def __init__(self, i, j, p, a, partition: Partition, grid: DensityGrid):
        if i == j:
            raise ValueError("i and j must differ")
        self.i, self.j = int(i), int(j)
        p = np.asarray(p, dtype=float)
        self.pi, self.pj = p[self.i].copy(), p[self.j].copy()
        self.ai, self.aj = float(a[self.i]), float(a[self.j])
        self.partition = partition
        self.grid = grid
        cells = np.flatnonzero((partition.owner == self.i) | (partition.owner == self.j))
        w = grid.centers[cells]
        di = ((w - self.pi) ** 2).sum(1)
        dj = ((w - self.pj) ** 2).sum(1)
        key = self.ai * di - self.aj * dj
        order = np.argsort(key, kind="stable")
        self.cells = cells[order]
        self.key = key[order]
        mass = grid.mass[self.cells]
        self.cum_mass = np.concatenate([[0.0], np.cumsum(mass)])
        # prefix sums of mass * |p - w|^2 for the sensor term on each side
        self.cum_di = np.concatenate([[0.0], np.cumsum(mass * di[order])])
        self.cum_dj = np.concatenate([[0.0], np.cumsum(mass * dj[order])])
        self.total = float(self.cum_mass[-1])
        self.seg2 = float(((self.pi - self.pj) ** 2).sum())
        self.current_count = int((partition.owner[self.cells] == self.i).sum())

    def h(self, alpha):
        return alpha * self.pi + (1.0 - alpha) * self.pj

    def threshold(self, alpha) -> float:
        return (self.ai * (1.0 - alpha) ** 2 - self.aj * alpha ** 2) * self.seg2

    def count(self, alpha) -> int:
        """Number of union cells (in key order) owned by i at alpha."""
        return int(np.searchsorted(self.key, self.threshold(alpha), side="right"))

    def volumes_at_count(self, k):
        vi = float(self.cum_mass[k])
        return vi, self.total - vi

    def volumes(self, alpha):
        return self.volumes_at_count(self.count(alpha))

    def sensor_moments_at_count(self, k):
        """(sum over i-cells of mass |p_i - w|^2, same for j) for a threshold split."""
        return float(self.cum_di[k]), float(self.cum_dj[-1] - self.cum_dj[k])

    def current_moments(self):
        own = self.partition.owner[self.cells]
        mass = self.grid.mass[self.cells]
        w = self.grid.centers[self.cells]
        is_i = own == self.i
        di = ((w[is_i] - self.pi) ** 2).sum(1)
        dj = ((w[~is_i] - self.pj) ** 2).sum(1)
        vi = float(mass[is_i].sum())
        return vi, self.total - vi, float((mass[is_i] * di).sum()), float((mass[~is_i] * dj).sum())

    def owners_at_count(self, k) -> np.ndarray:
        owner = self.partition.owner.copy()
        owner[self.cells[:k]] = self.i
        owner[self.cells[k:]] = self.j
        return owner

    def partition_at_count(self, k) -> Partition:
        return Partition(owner=self.owners_at_count(k), n_aps=self.partition.n_aps)


def split_union(i, j, alpha, p, a, partition: Partition, grid: DensityGrid):
    """Re-split the union of regions i and j at h = alpha p_i + (1 - alpha) p_j.

    Returns ``(owner, v_i, v_j)``; cells outside the union keep their owner.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not are_neighbors(i, j, partition, grid):
        raise ValueError(f"regions {i} and {j} are not neighbours")
    split = UnionSplit(i, j, p, a, partition, grid)
    k = split.count(alpha)
    vi, vj = split.volumes_at_count(k)
    return split.owners_at_count(k), vi, vj


def export_partition_csv(path, partition: Partition, grid: DensityGrid, p=None, q=None) -> int:
    """Write kind,x_m,y_m,owner_or_index rows; returns the number of data rows."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "x_m", "y_m", "owner_or_index"])
        for (x, y), o in zip(grid.centers, partition.owner):
            w.writerow(["cell", repr(float(x)), repr(float(y)), int(o)])
            rows += 1
        for kind, pts in (("ap", p), ("bs", q)):
            if pts is None:
                continue
            for k, (x, y) in enumerate(np.asarray(pts, dtype=float)):
                w.writerow([kind, repr(float(x)), repr(float(y)), k])
                rows += 1
    return rows
