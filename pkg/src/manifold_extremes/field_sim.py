"""Locally stationary covariance kernels, exact Gaussian sampling on finite
point sets, chi-field lifts and assumption diagnostics.

Random streams: replications are processed in fixed blocks of ``REP_BLOCK``.
Block ``b`` of a run seeded with ``seed`` draws from
``Generator(Philox(SeedSequence([seed, b])))``, so the output depends only on
(seed, points, model) and never on how many threads process the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_math import Structure, structure_module
from .manifold import Manifold

REP_BLOCK = 1024
MAX_POINTS = 4096
JITTER = 1e-10
NEG_EIG_REFUSE = -1e-8
NEG_EIG_JITTER = 1e-10


class InvalidKernelError(ValueError):
    pass


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def map_rep_blocks(fn: Callable, n_reps: int, seed: int, threads: int = 1) -> list:
    """Apply ``fn(rng, block_index, size)`` to every replication block, in block order."""
    if n_reps < 1:
        raise ValueError(f"n_reps must be at least 1, got {n_reps}")
    jobs = [(b, min(REP_BLOCK, n_reps - b * REP_BLOCK)) for b in range(math.ceil(n_reps / REP_BLOCK))]

    def run(job):
        b, size = job
        return fn(block_rng(seed, b), b, size)

    if threads <= 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


@dataclass
class CovarianceModel:
    """Unit-variance kernel r(t, s) = exp(-|D_m (t - s)|_{E,alpha}).

    ``d_field`` is either a constant n x n block-diagonal matrix or a callable
    returning one at an ambient point; D_m is taken at the midpoint of t and s.
    With ``rescale_h`` set, block-1 coordinates are divided by h before the
    kernel is applied (the field lives on the rescaled manifold).

    ``family="chi_lift"`` describes the lift Y(s, v) = sum_i X_i(s) v_i of p
    i.i.d. copies of ``base``: r_Y = r_X(s1, s2) v1.v2, with D = diag(B, I/sqrt 2).

    ``family="custom_crosscov"`` carries a user cross-covariance
    ``cross_cov(i, j, S1, S2)`` for a p-vector field; optional ``cross_matrices``
    (dict (i, j) -> A^{ij}) are screened with the diagonal-dominance rule.
    """

    structure: Structure
    kernel_family: str = "powered_exponential"
    d_field: np.ndarray | Callable | None = None
    rescale_h: float | None = None
    base: "CovarianceModel | None" = None
    p: int = 1
    cross_cov: Callable | None = None
    cross_matrices: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        fam = self.kernel_family
        if fam not in ("powered_exponential", "chi_lift", "custom_crosscov"):
            raise ValueError(f"unknown kernel family {fam!r}")
        if self.rescale_h is not None and not (0.0 < self.rescale_h <= 1.0):
            raise ValueError(f"rescale_h must lie in (0,1], got {self.rescale_h}")
        if fam == "powered_exponential":
            if self.d_field is None:
                self.d_field = np.eye(self.structure.n)
            if not callable(self.d_field):
                self.d_field = np.asarray(self.d_field, dtype=float)
                self._check_d(self.d_field, where="constant D")
        elif fam == "chi_lift":
            if self.base is None or self.base.kernel_family != "powered_exponential":
                raise ValueError("chi_lift needs a powered_exponential base model")
            if self.base.structure.k != 1:
                raise ValueError("chi_lift base model must have a single block")
            if self.p < 1:
                raise ValueError("chi_lift needs p >= 1")
        else:
            if self.cross_cov is None:
                raise ValueError("custom_crosscov needs a cross_cov callable")
            if self.cross_matrices is not None:
                report = crosscov_dominance(self.cross_matrices, self.p)
                if not report["ok"]:
                    raise InvalidKernelError(
                        "cross-covariance matrices fail the dominance rule "
                        f"lambda_min(A^ii) > sum_j |lambda_min(A^ij)|: {report['margins']}"
                    )

    # -- D field -----------------------------------------------------------
    def _check_d(self, D, where):
        n = self.structure.n
        if D.shape != (n, n):
            raise ValueError(f"{where}: D has shape {D.shape}, expected ({n}, {n})")
        for a in self.structure.blocks():
            for b in self.structure.blocks():
                if a != b and np.any(D[a, b] != 0.0):
                    raise ValueError(f"{where}: D is not block diagonal for the structure")
        if abs(np.linalg.det(D)) < 1e-300:
            raise ValueError(f"{where}: D is singular")

    def d_at(self, point) -> np.ndarray:
        if self.kernel_family == "chi_lift":
            n = self.base.structure.n
            B = self.base.d_at(np.asarray(point)[:n])
            out = np.zeros((n + self.p, n + self.p))
            out[:n, :n] = B
            out[n:, n:] = np.eye(self.p) / math.sqrt(2.0)
            return out
        if self.kernel_family != "powered_exponential":
            raise ValueError("custom_crosscov models have no D field")
        if callable(self.d_field):
            D = np.asarray(self.d_field(np.asarray(point, dtype=float)), dtype=float)
            self._check_d(D, where=f"D at {np.asarray(point).tolist()}")
            return D
        return self.d_field

    @property
    def lifted_structure(self) -> Structure:
        """Structure of the kernel's index space (lifted for chi_lift)."""
        if self.kernel_family == "chi_lift":
            b = self.base.structure
            return Structure((b.n, self.p), (b.exponents[0], 2.0), (b.manifold_dims[0], self.p - 1))
        return self.structure

    def describe(self) -> str:
        return f"{self.kernel_family}(structure={self.structure.to_dict()}, rescale_h={self.rescale_h})"

    # -- kernel evaluation -------------------------------------------------
    def rescale(self, points: np.ndarray) -> np.ndarray:
        if self.rescale_h is None:
            return points
        out = np.array(points, dtype=float, copy=True)
        out[..., self.structure.blocks()[0]] /= self.rescale_h
        return out

    def kernel(self, X, Y=None) -> np.ndarray:
        """Covariance matrix between point arrays X (N, n) and Y (M, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
        if self.kernel_family == "chi_lift":
            n = self.base.structure.n
            rx = self.base.kernel(X[:, :n], Y[:, :n])
            return rx * (X[:, n:] @ Y[:, n:].T)
        if self.kernel_family == "custom_crosscov":
            raise ValueError("custom_crosscov kernels are evaluated with vector_covariance_matrix")
        Xs, Ys = self.rescale(X), self.rescale(Y)
        diff = Xs[:, None, :] - Ys[None, :, :]
        if callable(self.d_field):
            mid = 0.5 * (X[:, None, :] + Y[None, :, :])
            D = np.array([[self.d_at(m) for m in row] for row in mid])
            scaled = np.einsum("ijab,ijb->ija", D, diff)
        else:
            scaled = diff @ self.d_field.T
        return np.exp(-structure_module(scaled, self.structure))


def _eig_policy(C: np.ndarray, label: str):
    w, V = np.linalg.eigh(C)
    lam_min = float(w[0])
    if lam_min < NEG_EIG_REFUSE:
        raise InvalidKernelError(
            f"invalid kernel {label}: smallest eigenvalue {lam_min:.3e} < {NEG_EIG_REFUSE:.0e}"
        )
    jitter = JITTER if lam_min < NEG_EIG_JITTER else 0.0
    return w, V, jitter


def covariance_matrix(model: CovarianceModel, points) -> np.ndarray:
    """Symmetric unit-diagonal covariance on ``points``, after the jitter policy.

    Raises InvalidKernelError when the raw smallest eigenvalue is below -1e-8.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = model.kernel(pts)
    C = 0.5 * (C + C.T)
    _, _, jitter = _eig_policy(C, model.describe())
    if jitter:
        C = C + jitter * np.eye(len(C))
    return C


def matrix_sqrt(C: np.ndarray, label: str = "covariance") -> tuple[np.ndarray, dict]:
    """Factor F with F F^T ~ C: Cholesky, else symmetric eigen with clipping."""
    C = 0.5 * (C + C.T)
    w, V, jitter = _eig_policy(C, label)
    Cj = C + jitter * np.eye(len(C)) if jitter else C
    try:
        return np.linalg.cholesky(Cj), {"method": "cholesky", "jitter": jitter, "clip_mass": 0.0}
    except np.linalg.LinAlgError:
        pass
    w = w + jitter
    clip_mass = float(-w[w < 0].sum())
    keep = w > 0
    F = V[:, keep] * np.sqrt(w[keep])
    return F, {"method": "eigen", "jitter": jitter, "clip_mass": clip_mass}


@dataclass
class FieldSample:
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    seed: int = 0
    info: dict = field(default_factory=dict)

    @property
    def n_reps(self) -> int:
        return self.values.shape[0]


def _check_size(n_points: int):
    if n_points > MAX_POINTS:
        raise ValueError(
            f"{n_points} grid points exceed the exact-sampling cap of {MAX_POINTS}; "
            "raise h or lower the grid resolution"
        )


def gaussian_draws(F: np.ndarray, n_reps: int, seed: int, threads: int = 1, reducer=None) -> list:
    """Draws Z F^T per replication block; ``reducer`` maps each block to its summary."""
    q = F.shape[1]

    def block(rng, _b, size):
        vals = rng.standard_normal((size, q)) @ F.T
        return vals if reducer is None else reducer(vals)

    return map_rep_blocks(block, n_reps, seed, threads)


def sample_field(model: CovarianceModel, points, n_reps: int, seed: int, threads: int = 1) -> FieldSample:
    """n_reps exact draws of the centered field on ``points`` (replication-major)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_size(len(pts))
    C = model.kernel(pts)
    F, info = matrix_sqrt(C, model.describe())
    vals = np.concatenate(gaussian_draws(F, n_reps, seed, threads))
    return FieldSample(pts, vals, int(seed), {**info, "n_points": len(pts)})


def vector_covariance_matrix(model: CovarianceModel, s_points) -> np.ndarray:
    """Covariance of (X_1(s)..X_p(s)) stacked component-major, shape (pN, pN)."""
    S = np.atleast_2d(np.asarray(s_points, dtype=float))
    N, p = len(S), model.p
    if model.kernel_family == "chi_lift":
        return np.kron(np.eye(p), model.base.kernel(S))
    if model.kernel_family != "custom_crosscov":
        raise ValueError("vector fields need a chi_lift or custom_crosscov model")
    C = np.zeros((p * N, p * N))
    for i in range(p):
        for j in range(p):
            C[i * N:(i + 1) * N, j * N:(j + 1) * N] = model.cross_cov(i, j, S, S)
    return C


def sample_vector_field(model: CovarianceModel, s_points, n_reps: int, seed: int, threads: int = 1) -> FieldSample:
    """Draws of the p-vector field; values have shape (n_reps, N, p)."""
    S = np.atleast_2d(np.asarray(s_points, dtype=float))
    N, p = len(S), model.p
    if model.kernel_family == "chi_lift":
        _check_size(N)
        F, info = matrix_sqrt(model.base.kernel(S), model.describe())
        q = F.shape[1]

        def block(rng, _b, size):
            z = rng.standard_normal((size, p, q))
            return np.einsum("rpq,nq->rnp", z, F)

        vals = np.concatenate(map_rep_blocks(block, n_reps, seed, threads))
    else:
        _check_size(N * p)
        F, info = matrix_sqrt(vector_covariance_matrix(model, S), model.describe())
        flat = np.concatenate(gaussian_draws(F, n_reps, seed, threads))
        vals = flat.reshape(n_reps, p, N).transpose(0, 2, 1)
    return FieldSample(S, vals, int(seed), {**info, "n_points": N, "p": p})


def chi_lift_supremum(values, sphere_pts) -> tuple[np.ndarray, np.ndarray]:
    """Per replication: (max_s ||X(s)||, max over s and sphere grid of X(s).v)."""
    X = np.asarray(values, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    V = np.atleast_2d(np.asarray(sphere_pts, dtype=float))
    if X.shape[-1] != V.shape[1]:
        raise ValueError(f"field has p={X.shape[-1]} components but sphere points live in R^{V.shape[1]}")
    norm_sup = np.linalg.norm(X, axis=-1).max(axis=1)
    lift_sup = np.einsum("rnp,vp->rnv", X, V).max(axis=(1, 2))
    return norm_sup, lift_sup


def local_stationarity_ratio(model: CovarianceModel, t, u) -> float:
    """(1 - r(t, t+u)) / |D_t u|_{E,alpha} in the model's own coordinates."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    r = float(model.kernel(t[None], (t + u)[None])[0, 0])
    D = model.d_at(t)
    s = model.lifted_structure
    if model.rescale_h is not None:
        u = model.rescale(u)
    return (1.0 - r) / structure_module(D @ u, s)


def eigen_bounds(model: CovarianceModel, points) -> list[tuple[float, float]]:
    """Per block (min lambda_min, max lambda_max) of D_i^T D_i over ``points``."""
    s = model.lifted_structure
    out = [[math.inf, -math.inf] for _ in range(s.k)]
    for pt in np.atleast_2d(points):
        D = model.d_at(pt)
        for i, blk in enumerate(s.blocks()):
            w = np.linalg.eigvalsh(D[blk, blk].T @ D[blk, blk])
            out[i][0] = min(out[i][0], float(w[0]))
            out[i][1] = max(out[i][1], float(w[-1]))
    return [tuple(b) for b in out]


def crosscov_dominance(cross_matrices: dict, p: int) -> dict:
    """lambda_min(A^ii) > sum_{j != i} |lambda_min(A^ij)| for every i."""
    margins = []
    for i in range(p):
        lam_ii = float(np.linalg.eigvalsh(np.asarray(cross_matrices[(i, i)], dtype=float))[0])
        off = sum(
            abs(float(np.linalg.eigvalsh(np.asarray(cross_matrices[(i, j)], dtype=float))[0]))
            for j in range(p) if j != i and (i, j) in cross_matrices
        )
        margins.append(lam_ii - off)
    return {"ok": all(m > 0 for m in margins), "margins": margins}


def dependence_diagnostic(
    model: CovarianceModel,
    M: Manifold,
    x_values,
    sample_resolution: int,
    *,
    beta: float = 1.0,
    eta_margin: float = 1e-6,
) -> dict:
    """Q(x) = max |r| over sampled pairs whose rescaled block-1 separation exceeds x.

    Also evaluates the Berman-type check Q(x) (log x)^{2(r1/a1 + r2/a2)} <= (log x)^-beta
    at every x > 1.
    """
    pts, _ = M.quadrature(sample_resolution)
    s = model.lifted_structure
    blk1 = s.blocks()[0]
    R = np.abs(model.kernel(pts))
    scaled = model.rescale(pts)[:, blk1]
    sep = np.linalg.norm(scaled[:, None, :] - scaled[None, :, :], axis=-1)
    power = 2.0 * sum(r / a for r, a in zip(s.manifold_dims, s.exponents))
    rows = []
    for x in sorted(float(v) for v in x_values):
        if x <= 0:
            raise ValueError(f"separations must be positive, got {x}")
        mask = sep > x
        q = float(R[mask].max()) if mask.any() else 0.0
        row = {"x": x, "Q": q, "eta_ok": q < 1.0 - eta_margin, "n_pairs": int(mask.sum() // 2)}
        if x > 1.0:
            lhs = q * math.log(x) ** power
            rhs = math.log(x) ** (-beta)
            row.update(berman_lhs=lhs, berman_rhs=rhs, berman_ok=lhs <= rhs)
        rows.append(row)
    return {"rows": rows, "power": power, "beta": beta}
