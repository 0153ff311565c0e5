"""Closed-form compact manifolds: parametrizations, tangent frames, quadrature.

Every built-in kind carries an analytic reach. Frames come from analytic
Jacobians orthonormalized with a fixed column order, so a given point always
yields the same frame.

Chart seams (where frames may jump):
  circle, flat_torus, interval_product: none.
  sphere(2): the two poles, where the azimuth column degenerates; a fixed
  frame is used there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ON_MANIFOLD_TOL = 1e-8


class OffManifoldError(ValueError):
    pass


def _orthonormal_columns(J: np.ndarray) -> np.ndarray:
    # Gram-Schmidt in column order, positive diagonal of R.
    Q, R = np.linalg.qr(J)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


@dataclass(frozen=True)
class TangentFrame:
    base_point: np.ndarray
    columns: np.ndarray


class Manifold:
    """Base class for parametrized compact submanifolds."""

    kind: str = "abstract"

    @property
    def intrinsic_dim(self) -> int:
        raise NotImplementedError

    @property
    def ambient_dim(self) -> int:
        raise NotImplementedError

    @property
    def reach(self) -> float:
        raise NotImplementedError

    def volume(self) -> float:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def embed(self, params) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, params) -> np.ndarray:
        """Ambient Jacobian of the parametrization, shape (n, r)."""
        raise NotImplementedError

    def locate(self, point) -> np.ndarray:
        """Parameters of an on-manifold point; raises OffManifoldError otherwise."""
        raise NotImplementedError

    def quadrature(self, resolution: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes (N, n) and weights (N,) for integrals against H_r."""
        raise NotImplementedError

    def arc_grid(self, spacing: float) -> tuple[np.ndarray, bool]:
        """Points stepped at roughly ``spacing`` arc length.

        Returns the points and whether the single-point fallback was used.
        """
        raise NotImplementedError

    def frame_at_params(self, params) -> np.ndarray:
        return _orthonormal_columns(self.jacobian(params))

    def factors(self) -> list["Manifold"]:
        return [self]

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_point(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.ambient_dim,):
            raise OffManifoldError(f"point of shape {p.shape} is not in R^{self.ambient_dim}")
        return p


@dataclass(frozen=True)
class Circle(Manifold):
    radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    kind = "circle"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    intrinsic_dim = property(lambda self: 1)
    ambient_dim = property(lambda self: 2)
    reach = property(lambda self: float(self.radius))

    def volume(self):
        return 2.0 * math.pi * self.radius

    def diameter(self):
        return 2.0 * self.radius

    def embed(self, params):
        th = np.asarray(params, dtype=float)[..., 0]
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def jacobian(self, params):
        th = float(np.asarray(params, dtype=float).reshape(-1)[0])
        return self.radius * np.array([[-math.sin(th)], [math.cos(th)]])

    def locate(self, point):
        p = self._check_point(point) - np.asarray(self.center)
        if abs(np.linalg.norm(p) - self.radius) > ON_MANIFOLD_TOL:
            raise OffManifoldError(f"point {point} is not on the circle of radius {self.radius}")
        return np.array([math.atan2(p[1], p[0]) % (2.0 * math.pi)])

    def quadrature(self, resolution):
        th = 2.0 * math.pi * np.arange(resolution) / resolution
        pts = self.embed(th[:, None])
        return pts, np.full(resolution, self.volume() / resolution)

    def arc_grid(self, spacing):
        if spacing >= self.diameter():
            return self.embed(np.zeros((1, 1))), True
        count = math.ceil(self.volume() / spacing)
        th = 2.0 * math.pi * np.arange(count) / count
        return self.embed(th[:, None]), False

    def to_dict(self):
        return {"kind": "circle", "radius": self.radius, "center": list(self.center)}


@dataclass(frozen=True)
class Sphere(Manifold):
    """Round sphere S^dim of the given radius centred at the origin (dim 1 or 2)."""

    dim: int = 2
    radius: float = 1.0
    kind = "sphere"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"sphere dimension {self.dim} unsupported; only S^1 and S^2 are built in")
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    intrinsic_dim = property(lambda self: self.dim)
    ambient_dim = property(lambda self: self.dim + 1)
    reach = property(lambda self: float(self.radius))

    @property
    def _circle(self) -> Circle:
        return Circle(self.radius)

    def volume(self):
        if self.dim == 1:
            return 2.0 * math.pi * self.radius
        return 4.0 * math.pi * self.radius**2

    def diameter(self):
        return 2.0 * self.radius

    def embed(self, params):
        if self.dim == 1:
            return self._circle.embed(params)
        p = np.asarray(params, dtype=float)
        ph, la = p[..., 0], p[..., 1]
        return self.radius * np.stack(
            [np.sin(ph) * np.cos(la), np.sin(ph) * np.sin(la), np.cos(ph)], axis=-1
        )

    def jacobian(self, params):
        if self.dim == 1:
            return self._circle.jacobian(params)
        ph, la = (float(x) for x in np.asarray(params, dtype=float).reshape(-1)[:2])
        d_ph = [math.cos(ph) * math.cos(la), math.cos(ph) * math.sin(la), -math.sin(ph)]
        d_la = [-math.sin(ph) * math.sin(la), math.sin(ph) * math.cos(la), 0.0]
        return self.radius * np.array([d_ph, d_la]).T

    def frame_at_params(self, params):
        if self.dim == 2:
            ph = float(np.asarray(params, dtype=float).reshape(-1)[0])
            if abs(math.sin(ph)) < 1e-12:
                # pole seam
                return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        return super().frame_at_params(params)

    def locate(self, point):
        if self.dim == 1:
            return self._circle.locate(point)
        p = self._check_point(point)
        rho = np.linalg.norm(p)
        if abs(rho - self.radius) > ON_MANIFOLD_TOL:
            raise OffManifoldError(f"point {point} is not on the sphere of radius {self.radius}")
        ph = math.acos(max(-1.0, min(1.0, p[2] / rho)))
        la = math.atan2(p[1], p[0]) % (2.0 * math.pi)
        return np.array([ph, la])

    def quadrature(self, resolution):
        if self.dim == 1:
            return self._circle.quadrature(resolution)
        n_ph = max(resolution // 2, 4)
        n_la = resolution
        ph = (np.arange(n_ph) + 0.5) * math.pi / n_ph
        la = 2.0 * math.pi * np.arange(n_la) / n_la
        PH, LA = np.meshgrid(ph, la, indexing="ij")
        params = np.stack([PH.ravel(), LA.ravel()], axis=-1)
        w = self.radius**2 * np.sin(PH.ravel()) * (math.pi / n_ph) * (2.0 * math.pi / n_la)
        return self.embed(params), w

    def arc_grid(self, spacing):
        if self.dim == 1:
            return self._circle.arc_grid(spacing)
        if spacing >= self.diameter():
            return np.array([[0.0, 0.0, self.radius]]), True
        n_rings = math.ceil(math.pi * self.radius / spacing)
        pts = []
        for j in range(n_rings):
            ph = (j + 0.5) * math.pi / n_rings
            n_ring = max(1, math.ceil(2.0 * math.pi * self.radius * math.sin(ph) / spacing))
            la = 2.0 * math.pi * np.arange(n_ring) / n_ring
            pts.append(self.embed(np.stack([np.full(n_ring, ph), la], axis=-1)))
        return np.concatenate(pts), False

    def to_dict(self):
        return {"kind": "sphere", "dim": self.dim, "radius": self.radius}


@dataclass(frozen=True)
class FlatTorus(Manifold):
    """Product of circles with the given circumferences, embedded in R^{2k}."""

    lengths: tuple[float, ...] = (2.0 * math.pi, 2.0 * math.pi)
    kind = "flat_torus"

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if not self.lengths or any(not x > 0 for x in self.lengths):
            raise ValueError(f"flat torus lengths must be positive, got {self.lengths}")

    @property
    def _circles(self):
        return [Circle(L / (2.0 * math.pi)) for L in self.lengths]

    intrinsic_dim = property(lambda self: len(self.lengths))
    ambient_dim = property(lambda self: 2 * len(self.lengths))
    reach = property(lambda self: min(self.lengths) / (2.0 * math.pi))

    def volume(self):
        return float(np.prod(self.lengths))

    def diameter(self):
        return math.sqrt(sum((L / math.pi) ** 2 for L in self.lengths))

    def _as_product(self) -> Manifold:
        circles = self._circles
        out = circles[0]
        for c in circles[1:]:
            out = Product(out, c)
        return out

    def embed(self, params):
        return self._as_product().embed(params)

    def jacobian(self, params):
        return self._as_product().jacobian(params)

    def frame_at_params(self, params):
        return self._as_product().frame_at_params(params)

    def locate(self, point):
        return self._as_product().locate(point)

    def quadrature(self, resolution):
        return self._as_product().quadrature(resolution)

    def arc_grid(self, spacing):
        return self._as_product().arc_grid(spacing)

    def to_dict(self):
        return {"kind": "flat_torus", "lengths": list(self.lengths)}


@dataclass(frozen=True)
class IntervalProduct(Manifold):
    """Axis-aligned box in R^k (full-dimensional; infinite reach)."""

    bounds: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    kind = "interval_product"

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b or any(hi <= lo for lo, hi in b):
            raise ValueError(f"interval bounds must satisfy lo < hi, got {self.bounds}")
        object.__setattr__(self, "bounds", b)

    intrinsic_dim = property(lambda self: len(self.bounds))
    ambient_dim = property(lambda self: len(self.bounds))
    reach = property(lambda self: math.inf)

    def volume(self):
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def diameter(self):
        return math.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds))

    def embed(self, params):
        return np.asarray(params, dtype=float)

    def jacobian(self, params):
        return np.eye(len(self.bounds))

    def locate(self, point):
        p = self._check_point(point)
        for x, (lo, hi) in zip(p, self.bounds):
            if x < lo - ON_MANIFOLD_TOL or x > hi + ON_MANIFOLD_TOL:
                raise OffManifoldError(f"point {point} lies outside the box {self.bounds}")
        return p.copy()

    def _axes(self, counts):
        return [np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2])
                for (lo, hi), c in zip(self.bounds, counts)]

    def quadrature(self, resolution):
        axes, weights = [], []
        for lo, hi in self.bounds:
            x = lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
            axes.append(x)
            weights.append(np.full(resolution, (hi - lo) / resolution))
        grids = np.meshgrid(*axes, indexing="ij")
        wgrid = np.meshgrid(*weights, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        return pts, np.prod(np.stack([w.ravel() for w in wgrid]), axis=0)

    def arc_grid(self, spacing):
        if spacing >= self.diameter():
            return np.array([[(lo + hi) / 2 for lo, hi in self.bounds]]), True
        counts = [math.ceil((hi - lo) / spacing) + 1 for lo, hi in self.bounds]
        grids = np.meshgrid(*self._axes(counts), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1), False

    def to_dict(self):
        return {"kind": "interval_product", "bounds": [list(b) for b in self.bounds]}


@dataclass(frozen=True)
class Product(Manifold):
    left: Manifold = field(default_factory=Circle)
    right: Manifold = field(default_factory=Circle)
    kind = "product"

    intrinsic_dim = property(lambda self: self.left.intrinsic_dim + self.right.intrinsic_dim)
    ambient_dim = property(lambda self: self.left.ambient_dim + self.right.ambient_dim)
    reach = property(lambda self: min(self.left.reach, self.right.reach))

    def volume(self):
        return self.left.volume() * self.right.volume()

    def diameter(self):
        return math.hypot(self.left.diameter(), self.right.diameter())

    def factors(self):
        return [*self.left.factors(), *self.right.factors()]

    def _split_params(self, params):
        p = np.asarray(params, dtype=float)
        r1 = self.left.intrinsic_dim
        return p[..., :r1], p[..., r1:]

    def embed(self, params):
        a, b = self._split_params(params)
        return np.concatenate([self.left.embed(a), self.right.embed(b)], axis=-1)

    def _block(self, A, B):
        out = np.zeros((A.shape[0] + B.shape[0], A.shape[1] + B.shape[1]))
        out[: A.shape[0], : A.shape[1]] = A
        out[A.shape[0]:, A.shape[1]:] = B
        return out

    def jacobian(self, params):
        a, b = self._split_params(params)
        return self._block(self.left.jacobian(a), self.right.jacobian(b))

    def frame_at_params(self, params):
        a, b = self._split_params(params)
        return self._block(self.left.frame_at_params(a), self.right.frame_at_params(b))

    def locate(self, point):
        p = self._check_point(point)
        n1 = self.left.ambient_dim
        return np.concatenate([self.left.locate(p[:n1]), self.right.locate(p[n1:])])

    def _tensor(self, pa, wa, pb, wb):
        ia, ib = np.meshgrid(np.arange(len(wa)), np.arange(len(wb)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        return np.concatenate([pa[ia], pb[ib]], axis=-1), wa[ia] * wb[ib]

    def quadrature(self, resolution):
        pa, wa = self.left.quadrature(resolution)
        pb, wb = self.right.quadrature(resolution)
        return self._tensor(pa, wa, pb, wb)

    def arc_grid(self, spacing):
        pa, fa = self.left.arc_grid(spacing)
        pb, fb = self.right.arc_grid(spacing)
        pts, _ = self._tensor(pa, np.ones(len(pa)), pb, np.ones(len(pb)))
        return pts, fa or fb

    def to_dict(self):
        return {"kind": "product", "left": self.left.to_dict(), "right": self.right.to_dict()}


def tangent_frame(M: Manifold, t) -> TangentFrame:
    """Orthonormal n x r frame spanning the tangent space of M at t."""
    params = M.locate(t)
    return TangentFrame(base_point=np.asarray(t, dtype=float), columns=M.frame_at_params(params))


def hausdorff_integral(M: Manifold, f: Callable, resolution: int) -> float:
    """Quadrature of f against the r-dimensional Hausdorff measure on M.

    ``f`` receives an (N, n) array of ambient points; a function that only
    accepts single points is evaluated pointwise instead.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be at least 8, got {resolution}")
    pts, w = M.quadrature(resolution)
    try:
        vals = np.broadcast_to(np.asarray(f(pts), dtype=float), w.shape)
    except (ValueError, TypeError):
        vals = np.array([float(f(p)) for p in pts])
    return float(np.dot(w, vals))


def sphere_grid(p: int, resolution: int) -> np.ndarray:
    """Quasi-uniform points on S^{p-1}: uniform angles (p=2), Fibonacci lattice (p=3)."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if p == 1:
        return np.array([[1.0], [-1.0]])
    if p == 2:
        th = 2.0 * math.pi * np.arange(resolution) / resolution
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if p == 3:
        i = np.arange(resolution) + 0.5
        z = 1.0 - 2.0 * i / resolution
        golden = math.pi * (3.0 - math.sqrt(5.0))
        phi = golden * np.arange(resolution)
        rho = np.sqrt(1.0 - z**2)
        pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)
    raise ValueError(f"sphere grids are only built in for p in {{1, 2, 3}}; got p={p}")


def manifold_from_config(cfg: dict) -> Manifold:
    kind = cfg.get("kind")
    if kind == "circle":
        return Circle(float(cfg.get("radius", 1.0)), tuple(cfg.get("center", (0.0, 0.0))))
    if kind == "sphere":
        return Sphere(int(cfg.get("dim", 2)), float(cfg.get("radius", 1.0)))
    if kind == "flat_torus":
        return FlatTorus(tuple(cfg["lengths"]))
    if kind == "interval_product":
        return IntervalProduct(tuple(tuple(b) for b in cfg["bounds"]))
    if kind == "product":
        return Product(manifold_from_config(cfg["left"]), manifold_from_config(cfg["right"]))
    raise ValueError(f"unknown manifold kind {kind!r}")

