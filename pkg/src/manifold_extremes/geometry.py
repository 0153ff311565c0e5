"""Epsilon-nets, packing bounds, restricted Voronoi partitions and the
anisotropic discretization grid on product manifolds.

All distances are ambient Euclidean. Ties resolve to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core_math import Structure, unit_ball_volume
from .manifold import Manifold, Product

_CHUNK = 2048


class ReachConstraintError(ValueError):
    pass


def _check_reach(M: Manifold, epsilon: float):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if epsilon >= M.reach / 2.0:
        raise ReachConstraintError(
            f"epsilon={epsilon} violates the reach constraint epsilon < reach/2 = {M.reach / 2.0}"
        )


def _nearest(points: np.ndarray, seeds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest seed (lowest index on ties) and its distance."""
    idx = np.empty(len(points), dtype=np.int64)
    dist = np.empty(len(points))
    for lo in range(0, len(points), _CHUNK):
        blk = points[lo: lo + _CHUNK]
        d = np.linalg.norm(blk[:, None, :] - seeds[None, :, :], axis=-1)
        j = np.argmin(d, axis=1)
        idx[lo: lo + _CHUNK] = j
        dist[lo: lo + _CHUNK] = d[np.arange(len(blk)), j]
    return idx, dist


def sample_spacing(sample: np.ndarray) -> float:
    """Largest nearest-neighbour distance within a sample."""
    if len(sample) < 2:
        return math.inf
    d, _ = cKDTree(sample).query(sample, k=2)
    return float(d[:, 1].max())


def min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    d, _ = cKDTree(points).query(points, k=2)
    return float(d[:, 1].min())


@dataclass
class EpsilonNet:
    manifold: Manifold
    epsilon: float
    points: np.ndarray
    candidates: np.ndarray = field(repr=False)
    candidate_indices: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.points)

    def certify(self, sample: np.ndarray | None = None) -> dict:
        """Literal covering and packing checks against ``sample`` (default: candidates)."""
        sample = self.candidates if sample is None else np.asarray(sample, dtype=float)
        _, dist = _nearest(sample, self.points)
        covering = float(dist.max())
        packing = min_pairwise_distance(self.points)
        return {
            "size": len(self.points),
            "covering_radius": covering,
            "min_pairwise_distance": packing,
            "covering_ok": bool(covering <= self.epsilon),
            "packing_ok": bool(packing > self.epsilon),
            "n_checked": int(len(sample)),
        }


def build_epsilon_net(
    M: Manifold, epsilon: float, candidate_resolution: int, *, enforce_reach: bool = True
) -> EpsilonNet:
    """Greedy farthest-point epsilon-net over a dense candidate sample of M.

    Starts from the first candidate and keeps adding the candidate farthest
    from the current net while that distance exceeds ``epsilon``. Every added
    point is farther than ``epsilon`` from all earlier ones, so packing holds
    by construction, and the loop exit is exactly covering.
    """
    if enforce_reach:
        _check_reach(M, epsilon)
    elif not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    candidates, _ = M.quadrature(candidate_resolution)
    spacing = sample_spacing(candidates)
    if spacing > epsilon / 4.0:
        raise ValueError(
            f"candidate sample too coarse: spacing {spacing:.4g} exceeds epsilon/4 = {epsilon / 4.0:.4g}; "
            "raise candidate_resolution"
        )
    chosen = [0]
    dist = np.linalg.norm(candidates - candidates[0], axis=1)
    while True:
        j = int(np.argmax(dist))
        if dist[j] <= epsilon:
            break
        chosen.append(j)
        dist = np.minimum(dist, np.linalg.norm(candidates - candidates[j], axis=1))
    idx = np.array(chosen)
    return EpsilonNet(M, float(epsilon), candidates[idx], candidates, idx)


def packing_bound(M: Manifold, epsilon: float) -> float:
    """H_r(M) / (cos^r(theta) eps^r B_r) with theta = arcsin(eps/2), for eps < reach/2."""
    _check_reach(M, epsilon)
    r = M.intrinsic_dim
    theta = math.asin(epsilon / 2.0)
    return M.volume() / (math.cos(theta) ** r * epsilon**r * unit_ball_volume(r))


def half_radius_packing_bound(M: Manifold, epsilon: float) -> float:
    """Volume bound on an epsilon-packing using disjoint balls of radius eps/2.

    Points pairwise farther than eps apart own disjoint eps/2-balls, each
    holding at least cos^r(arcsin(eps/(4 reach))) (eps/2)^r B_r of volume.
    """
    _check_reach(M, epsilon)
    r = M.intrinsic_dim
    theta = math.asin(min(1.0, epsilon / (4.0 * M.reach)))
    return M.volume() / (math.cos(theta) ** r * (epsilon / 2.0) ** r * unit_ball_volume(r))


@dataclass
class VoronoiPartition:
    seeds: EpsilonNet
    sample: np.ndarray = field(repr=False)
    cell_assignment: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)

    def cell_sizes(self) -> np.ndarray:
        return np.bincount(self.cell_assignment, minlength=len(self.seeds))

    def sandwich_check(self) -> dict:
        """B(x_i, eps/2) cap M  within V_i  within B(x_i, eps) cap M, per sample point."""
        eps = self.seeds.epsilon
        seeds = self.seeds.points
        inner_bad = 0
        for lo in range(0, len(self.sample), _CHUNK):
            blk = self.sample[lo: lo + _CHUNK]
            d = np.linalg.norm(blk[:, None, :] - seeds[None, :, :], axis=-1)
            near = d <= eps / 2.0
            assigned = self.cell_assignment[lo: lo + _CHUNK]
            rows, cols = np.nonzero(near)
            inner_bad += int(np.count_nonzero(assigned[rows] != cols))
        outer_bad = int(np.count_nonzero(self.distances > eps))
        return {"inner_violations": inner_bad, "outer_violations": outer_bad,
                "ok": inner_bad == 0 and outer_bad == 0}

    def cell_components(self, link_radius: float | None = None) -> np.ndarray:
        """Number of connected components of each cell in the sample adjacency graph."""
        if link_radius is None:
            link_radius = 1.5 * sample_spacing(self.sample)
        pairs = cKDTree(self.sample).query_pairs(link_radius, output_type="ndarray")
        same = self.cell_assignment[pairs[:, 0]] == self.cell_assignment[pairs[:, 1]]
        pairs = pairs[same]
        from scipy.sparse import coo_matrix

        n = len(self.sample)
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        out = np.zeros(len(self.seeds), dtype=int)
        for cell in range(len(self.seeds)):
            out[cell] = len(np.unique(labels[self.cell_assignment == cell]))
        return out

    def rows(self):
        """(point_index, seed_index, distance) triples."""
        return [(i, int(s), float(d)) for i, (s, d) in enumerate(zip(self.cell_assignment, self.distances))]


def restricted_voronoi(net: EpsilonNet, sample, *, check_density: bool = True) -> VoronoiPartition:
    """Nearest-seed partition of a dense on-manifold sample."""
    if len(net.points) == 0:
        raise ValueError("restricted Voronoi needs a non-empty net")
    sample = np.asarray(sample, dtype=float)
    if check_density:
        spacing = sample_spacing(sample)
        if spacing > net.epsilon / 8.0:
            raise ValueError(
                f"sample spacing {spacing:.4g} exceeds epsilon/8 = {net.epsilon / 8.0:.4g}"
            )
    idx, dist = _nearest(sample, net.points)
    return VoronoiPartition(net, sample, idx, dist)


@dataclass
class DiscretizationGrid:
    structure: Structure
    h: float
    gamma: float
    theta: float
    points: np.ndarray = field(repr=False)
    spacings: tuple[float, ...]
    counts: tuple[int, ...]
    fallback: tuple[bool, ...]

    def summary(self) -> dict:
        return {
            "h": self.h, "gamma": self.gamma, "theta": self.theta,
            "spacings": list(self.spacings), "counts": list(self.counts),
            "fallback": list(self.fallback), "n_points": int(len(self.points)),
        }


def grid_spacings(s: Structure, h: float, gamma: float, theta: float) -> tuple[float, ...]:
    """h*gamma*theta^(-2/alpha_1) for block 1, gamma*theta^(-2/alpha_i) for the rest."""
    out = []
    for i, alpha in enumerate(s.exponents):
        step = gamma * theta ** (-2.0 / alpha)
        out.append(h * step if i == 0 else step)
    return tuple(out)


def build_discretization_grid(M: Manifold, s: Structure, h: float, gamma: float, theta: float) -> DiscretizationGrid:
    """Tensor grid stepping factor 1 at h*gamma*theta^(-2/alpha_1) and factor 2
    at gamma*theta^(-2/alpha_2) arc length."""
    problems = []
    if not (0.0 < h <= 1.0):
        problems.append(f"h={h} must lie in (0,1]")
    if not gamma > 0:
        problems.append(f"gamma={gamma} must be positive")
    if not theta > 0:
        problems.append(f"theta={theta} must be positive")
    factors = [M.left, M.right] if isinstance(M, Product) and s.k == 2 else [M]
    if len(factors) != s.k:
        problems.append(f"manifold has {len(factors)} factor(s) but structure has k={s.k} blocks")
    else:
        for i, (F, e, r) in enumerate(zip(factors, s.block_sizes, s.manifold_dims)):
            if F.ambient_dim != e or F.intrinsic_dim != r:
                problems.append(
                    f"factor {i + 1} lives in R^{F.ambient_dim} with dim {F.intrinsic_dim}, "
                    f"structure block wants e={e}, r={r}"
                )
    if problems:
        raise ValueError("; ".join(problems))
    spacings = grid_spacings(s, h, gamma, theta)
    pieces, flags = [], []
    for F, step in zip(factors, spacings):
        pts, fb = F.arc_grid(step)
        pieces.append(pts)
        flags.append(fb)
    points = pieces[0]
    for extra in pieces[1:]:
        ia, ib = np.meshgrid(np.arange(len(points)), np.arange(len(extra)), indexing="ij")
        points = np.concatenate([points[ia.ravel()], extra[ib.ravel()]], axis=-1)
    return DiscretizationGrid(
        s, float(h), float(gamma), float(theta), points, spacings,
        tuple(len(p) for p in pieces), tuple(flags),
    )
