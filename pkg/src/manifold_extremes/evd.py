"""Gumbel limits for suprema of rescaled fields, their normalizing
constants, and the two confidence-set constructions built on them.

A field Z_h on M_h with covariance exp(-|D (t - s)|_{E,alpha}) evaluated
after dividing block-1 coordinates by h satisfies

    P{ a_h (sup Z_h - b_h) <= z } -> exp(-exp(-z)),   a_h = sqrt(2 r_1 log(1/h)),

with b_h = beta_h given below. ``I_h`` is the integral of ||D P||_r over
M_h in the original (unrescaled) coordinates.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core_math import gumbel_cdf, gumbel_quantile
from .excursion import _nested_index, energy_integral, sphere_area
from .field_sim import MAX_POINTS, CovarianceModel, map_rep_blocks, matrix_sqrt
from .manifold import Manifold
from .pickands import product_pickands

Z_GRID = (-1.0, 0.0, 1.0, 2.0, 3.0)
THETA_Z = (0.0, 1.0, 2.0)
# sd of sqrt(n) * KS under the null (Kolmogorov distribution).
KS_SD = 0.2603


@dataclass(frozen=True)
class GumbelNormalization:
    h: float
    a_h: float
    b_h: float
    loglog_coef: float
    log_const: float
    inputs: dict = field(default_factory=dict)

    def expansion_bound(self) -> dict:
        """|b_h - a_h| a_h <= C log log(1/h) with C = |loglog_coef| + |log_const|.

        Holds whenever log log(1/h) >= 1, i.e. h <= exp(-e).
        """
        ll = math.log(math.log(1.0 / self.h))
        lhs = abs(self.b_h - self.a_h) * self.a_h
        C = abs(self.loglog_coef) + abs(self.log_const)
        return {"lhs": lhs, "rhs": C * ll, "C": C, "applies": ll >= 1.0, "ok": lhs <= C * max(ll, 1.0)}

    def to_dict(self) -> dict:
        return {"h": self.h, "a_h": self.a_h, "b_h": self.b_h, "loglog_coef": self.loglog_coef,
                "log_const": self.log_const, "inputs": dict(self.inputs)}


def _positive(name, value):
    if not (value > 0) or math.isinf(value):
        raise ValueError(f"{name}={value} must be positive and finite (it enters a logarithm)")


def _normalization(h, scale_dim, coef, prefactor, H_value, I_h, inputs) -> GumbelNormalization:
    if not (0.0 < h < 1.0):
        raise ValueError(f"h={h} must lie in (0,1) (log(1/h) and log log(1/h) are needed)")
    _positive("I_h", I_h)
    _positive("H_value", H_value)
    L = math.log(1.0 / h)
    if L <= 1e-300:
        raise ValueError(f"h={h} is too close to 1")
    a = math.sqrt(2.0 * scale_dim * L)
    log_const = math.log(prefactor * H_value * I_h)
    b = a + (coef * math.log(L) + log_const) / a
    return GumbelNormalization(float(h), a, b, coef, log_const, inputs)


def beta_h_gaussian(r1: int, r2: int, alpha1: float, alpha2: float, h: float, I_h: float,
                    H_value: float) -> GumbelNormalization:
    """a_h and b_h for a Gaussian field with block dims (r1, r2); r2 = 0 is allowed."""
    if r1 < 1:
        raise ValueError(f"r1={r1} must be at least 1")
    if r2 < 0:
        raise ValueError(f"r2={r2} must be nonnegative")
    for name, a in (("alpha1", alpha1), ("alpha2", alpha2)):
        if not (0.0 < a <= 2.0):
            raise ValueError(f"{name}={a} violates alpha_i in (0,2]")
    coef = r1 / alpha1 + r2 / alpha2 - 0.5
    pref = (2.0 * r1) ** coef / math.sqrt(2.0 * math.pi)
    inputs = {"r1": r1, "r2": r2, "alpha1": alpha1, "alpha2": alpha2, "I_h": I_h, "H": H_value}
    return _normalization(h, r1, coef, pref, H_value, I_h, inputs)


def beta_h_abs(m: int, alpha: float, h: float, I_h: float, H_value: float) -> GumbelNormalization:
    """p = 1 case (sup |X|): ``I_h`` must already include the factor 2."""
    norm = beta_h_gaussian(m, 0, alpha, 2.0, h, I_h, H_value)
    return dataclasses.replace(norm, inputs={**norm.inputs, "p": 1})


def beta_h_chi(m: int, alpha: float, p: int, h: float, I_h: float, H_value: float) -> GumbelNormalization:
    """a_h and b_h for the chi field ||X_h|| with p components.

    For p >= 2, ``I_h`` is the integral over L_h x S^{p-1}. For p = 1, ``I_h``
    is the integral over L_h and is doubled before use.
    """
    if p < 1:
        raise ValueError(f"p={p} must be at least 1")
    if p == 1:
        return beta_h_abs(m, alpha, h, 2.0 * I_h, H_value)
    if m < 1:
        raise ValueError(f"m={m} must be at least 1")
    if not (0.0 < alpha <= 2.0):
        raise ValueError(f"alpha={alpha} violates alpha_i in (0,2]")
    coef = m / alpha + (p - 2) / 2.0
    pref = (2.0 * m) ** coef / math.sqrt(2.0 * math.pi) ** p
    inputs = {"m": m, "alpha": alpha, "p": p, "I_h": I_h, "H": H_value}
    return _normalization(h, m, coef, pref, H_value, I_h, inputs)


def theta_hz(norm: GumbelNormalization, z: float) -> float:
    """beta_h + z / a_h."""
    return norm.b_h + z / norm.a_h


# -- model plumbing ------------------------------------------------------------

def _unscaled(model: CovarianceModel) -> CovarianceModel:
    return dataclasses.replace(model, rescale_h=None) if model.rescale_h is not None else model


def _rescaled(model: CovarianceModel, h: float) -> CovarianceModel:
    return dataclasses.replace(model, rescale_h=float(h))


def gaussian_normalization(M: Manifold, model: CovarianceModel, h: float, *, pickands=None,
                           resolution: int = 256, I_h: float | None = None) -> GumbelNormalization:
    """Normalization for the rescaled Gaussian field of ``model`` on M at scale h."""
    s = model.structure
    if s.k > 2:
        raise ValueError(f"rescaled limits are implemented for k <= 2 blocks, got k={s.k}")
    I = energy_integral(M, _unscaled(model), resolution) if I_h is None else float(I_h)
    H = product_pickands(s, pickands)
    r2, a2 = (s.manifold_dims[1], s.exponents[1]) if s.k == 2 else (0, 2.0)
    return beta_h_gaussian(s.manifold_dims[0], r2, s.exponents[0], a2, h, I, H)


def chi_normalization(L: Manifold, base: CovarianceModel, p: int, h: float, *, pickands=None,
                      resolution: int = 256) -> GumbelNormalization:
    """Normalization for ||X_h|| with p i.i.d. copies of ``base`` rescaled by h."""
    s = base.structure
    if s.k != 1:
        raise ValueError("chi fields need a single-block base structure")
    I_L = energy_integral(L, _unscaled(base), resolution)
    H = product_pickands(s, pickands)
    m, alpha = s.manifold_dims[0], s.exponents[0]
    if p == 1:
        return beta_h_chi(m, alpha, 1, h, I_L, H)
    return beta_h_chi(m, alpha, p, h, sphere_area(p) * I_L, H)


def _max_scale(model: CovarianceModel) -> float:
    D = model.d_field if not callable(model.d_field) else None
    if D is None:
        raise ValueError("grid spacing needs a constant D; pass an explicit resolution")
    return float(np.linalg.norm(D, 2))


def grid_resolution_for(M: Manifold, model: CovarianceModel, h: float, grid_step: float) -> int:
    """Points per factor so that neighbours sit grid_step correlation lengths apart.

    Correlation length of the rescaled field is h / ||D||; the count is
    pi * diameter / spacing, which is the point count of a circle.
    """
    spacing = grid_step * h / _max_scale(model)
    return max(8, math.ceil(math.pi * max(F.diameter() for F in M.factors()) / spacing))


# -- Gumbel limit experiment -----------------------------------------------------

def _ks_with_se(x: np.ndarray) -> tuple[float, float]:
    res = stats.kstest(x, gumbel_cdf)
    return float(res.statistic), KS_SD / math.sqrt(len(x))


def gumbel_limit_experiment(M: Manifold, model: CovarianceModel, h_list, n_reps: int, seed: int, *,
                            grid_step: float = 0.25, pickands=None, threads: int = 1,
                            z_grid=Z_GRID, integral_resolution: int = 256) -> dict:
    """Empirical law of a_h (max_grid Z_h - b_h) for each h in ``h_list``.

    Z_h uses ``model`` with block-1 coordinates divided by h. The maximum is
    taken over a grid whose spacing is ``grid_step`` rescaled correlation
    lengths; a grid with twice as many points per factor, sharing the draws,
    feeds the "grid-limited" flag (KS shift above one KS standard error).
    """
    h_list = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError(f"h_list must be strictly decreasing, got {h_list}")
    rows = []
    for i, h in enumerate(h_list):
        res = grid_resolution_for(M, model, h, grid_step)
        fine, _ = M.quadrature(2 * res)
        if len(fine) > MAX_POINTS:
            raise ValueError(
                f"h={h} needs {len(fine)} grid points, above the exact-sampling cap {MAX_POINTS}; "
                "raise h or lower the grid resolution (grid_step)"
            )
        coarse, _ = M.quadrature(res)
        nested = _nested_index(coarse, fine)
        norm = gaussian_normalization(M, model, h, pickands=pickands, resolution=integral_resolution)
        zh = _rescaled(model, h)
        F, info = matrix_sqrt(zh.kernel(fine), zh.describe())

        def block(rng, _b, size, F=F, nested=nested):
            vals = rng.standard_normal((size, F.shape[1])) @ F.T
            coarse_max = vals[:, nested].max(axis=1) if nested is not None else np.full(size, np.nan)
            return np.stack([vals.max(axis=1), coarse_max], axis=1)

        maxima = np.concatenate(map_rep_blocks(block, n_reps, seed + i, threads))
        x = norm.a_h * (maxima[:, 0] - norm.b_h)
        ks, ks_se = _ks_with_se(x)
        flags = []
        if nested is None:
            flags.append("non-nested")
        else:
            ks_coarse, _ = _ks_with_se(norm.a_h * (maxima[:, 1] - norm.b_h))
            if abs(ks - ks_coarse) > ks_se:
                flags.append("grid-limited")
        ecdf = [float(np.mean(x <= z)) for z in z_grid]
        theta_rows = []
        for z in THETA_Z:
            th = theta_hz(norm, z)
            p_hat = float(np.mean(maxima[:, 0] > th))
            theta_rows.append({
                "z": z, "theta": th, "empirical": p_hat,
                "std_error": math.sqrt(p_hat * (1 - p_hat) / n_reps),
                "limit": float(1.0 - gumbel_cdf(z)),
            })
        rows.append({
            "h": h, "a_h": norm.a_h, "b_h": norm.b_h, "I_h": norm.inputs["I_h"],
            "grid_points": int(len(fine)), "z": list(z_grid), "ecdf": ecdf,
            "gumbel_cdf": [float(gumbel_cdf(z)) for z in z_grid], "ks": ks, "ks_se": ks_se,
            "theta_excursion": theta_rows, "flags": flags, "factorization": info,
        })
    trend = []
    for prev, cur in zip(rows, rows[1:]):
        tol = 2.0 * math.hypot(prev["ks_se"], cur["ks_se"])
        trend.append({"from_h": prev["h"], "to_h": cur["h"], "delta": cur["ks"] - prev["ks"],
                      "tolerance": tol, "ok": cur["ks"] <= prev["ks"] + tol})
    return {"rows": rows, "trend": trend, "decreasing": all(t["ok"] for t in trend), "n_reps": int(n_reps)}


# -- confidence sets -------------------------------------------------------------

@dataclass
class ConfidenceTube:
    radius: float
    center: np.ndarray = field(repr=False)
    alpha: float = 0.1

    def contains(self, g) -> bool:
        """True when ||f_hat(s) - g(s)|| <= radius at every grid point."""
        g = np.broadcast_to(np.asarray(g, dtype=float), self.center.shape)
        return bool(np.all(np.linalg.norm(self.center - g, axis=-1) <= self.radius))

    def balls(self) -> list[tuple[list[float], float]]:
        return [(c.tolist(), self.radius) for c in self.center]


def confidence_tube(f_hat, norm: GumbelNormalization, alpha: float) -> ConfidenceTube:
    """Tube {g : ||f_hat(s) - g(s)|| <= b_h + z_alpha / a_h for all s}."""
    f_hat = np.asarray(f_hat, dtype=float)
    if f_hat.ndim == 1:
        f_hat = f_hat[:, None]
    return ConfidenceTube(theta_hz(norm, gumbel_quantile(alpha)), f_hat, float(alpha))


@dataclass
class ConfidenceRegion:
    points: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    threshold: float = 0.0

    def selected(self) -> np.ndarray:
        return self.points[self.mask]

    def contains_indices(self, idx) -> bool:
        return bool(np.all(self.mask[np.asarray(idx, dtype=int)]))


def confidence_region(points, f_hat, g0, norm: GumbelNormalization, alpha: float) -> ConfidenceRegion:
    """Grid points s with a_h (||f_hat(s) - g0|| - b_h) <= z_alpha."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    f_hat = np.asarray(f_hat, dtype=float)
    if f_hat.ndim == 1:
        f_hat = f_hat[:, None]
    dev = np.linalg.norm(f_hat - np.asarray(g0, dtype=float).reshape(1, -1), axis=-1)
    z = gumbel_quantile(alpha)
    mask = norm.a_h * (dev - norm.b_h) <= z
    return ConfidenceRegion(pts, mask, theta_hz(norm, z))


def tube_coverage_experiment(L: Manifold, base: CovarianceModel, p: int, h: float, alpha: float,
                             n_trials: int, seed: int, *, grid_step: float = 0.2, f_true=None,
                             threads: int = 1, pickands=None) -> dict:
    """Coverage of the (1 - alpha) tube for f from f_hat = f + X_h on a grid of L.

    X_h has p i.i.d. components with the covariance of ``base`` rescaled by h.
    """
    norm = chi_normalization(L, base, p, h, pickands=pickands)
    res = grid_resolution_for(L, base, h, grid_step)
    pts, _ = L.quadrature(res)
    if len(pts) > MAX_POINTS:
        raise ValueError(f"{len(pts)} grid points exceed {MAX_POINTS}; raise h or grid_step")
    f = np.zeros((len(pts), p)) if f_true is None else np.asarray(f_true(pts), dtype=float).reshape(len(pts), p)
    xh = _rescaled(base, h)
    F, info = matrix_sqrt(xh.kernel(pts), xh.describe())
    rho = theta_hz(norm, gumbel_quantile(alpha))

    def block(rng, _b, size):
        z = rng.standard_normal((size, p, F.shape[1]))
        noise = np.einsum("rpq,nq->rnp", z, F)
        covered = np.empty(size, dtype=bool)
        for r in range(size):
            covered[r] = confidence_tube(f + noise[r], norm, alpha).contains(f)
        return covered

    covered = np.concatenate(map_rep_blocks(block, n_trials, seed, threads))
    cov = float(covered.mean())
    return {"h": h, "alpha": alpha, "p": p, "radius": rho, "normalization": norm.to_dict(),
            "grid_points": int(len(pts)), "n_trials": int(n_trials), "coverage": cov,
            "std_error": math.sqrt(cov * (1 - cov) / n_trials), "target": 1.0 - alpha,
            "factorization": info}


def region_containment_experiment(M: Manifold, model: CovarianceModel, f, g0, h: float, alpha: float,
                                  n_trials: int, seed: int, *, ambient_bounds=((0.0, 1.0), (0.0, 1.0)),
                                  ambient_count: int = 20, grid_step: float = 0.2, threads: int = 1,
                                  pickands=None) -> dict:
    """Frequency of M inside F_h when f_hat = f + X_h on A = (uniform box grid) + (samples of M).

    M should be the level set {f = g0}; the noise X_h is scalar (p = 1) with
    ``model`` rescaled by h, so containment means sup_M |X_h| <= b_h + z_alpha / a_h.
    """
    g0 = np.atleast_1d(np.asarray(g0, dtype=float))
    if len(g0) != 1:
        raise ValueError("the containment experiment uses scalar f (p = 1)")
    norm = chi_normalization(M, model, 1, h, pickands=pickands)
    res = grid_resolution_for(M, model, h, grid_step)
    m_pts, _ = M.quadrature(res)
    axes = [np.linspace(lo, hi, ambient_count) for lo, hi in ambient_bounds]
    box = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    A = np.concatenate([m_pts, box])
    if len(A) > MAX_POINTS:
        raise ValueError(f"{len(A)} ambient grid points exceed {MAX_POINTS}; lower ambient_count or raise h")
    truth = np.asarray(f(A), dtype=float).reshape(len(A))
    on_m = np.arange(len(m_pts))
    if np.max(np.abs(truth[on_m] - g0[0])) > 1e-9:
        raise ValueError("M is not the level set {f = g0}: f differs from g0 on the M samples")
    xh = _rescaled(model, h)
    F, info = matrix_sqrt(xh.kernel(A), xh.describe())

    def block(rng, _b, size):
        noise = rng.standard_normal((size, F.shape[1])) @ F.T
        out = np.empty((size, 2))
        for r in range(size):
            reg = confidence_region(A, truth + noise[r], g0, norm, alpha)
            out[r] = (reg.contains_indices(on_m), reg.mask.mean())
        return out

    res_arr = np.concatenate(map_rep_blocks(block, n_trials, seed, threads))
    freq = float(res_arr[:, 0].mean())
    return {"h": h, "alpha": alpha, "normalization": norm.to_dict(), "grid_points": int(len(A)),
            "manifold_points": int(len(m_pts)), "n_trials": int(n_trials), "containment": freq,
            "std_error": math.sqrt(freq * (1 - freq) / n_trials), "target": 1.0 - alpha,
            "mean_region_fraction": float(res_arr[:, 1].mean()), "factorization": info}
