"""Scalar and matrix primitives shared across the package.

Structures (E, alpha) with their structure module, the Mills-type factor
``phi(u)/u``, minor norms of rectangular matrices, and Gumbel quantiles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Test-route cap for enumerating m x m minors.
MAX_MINORS = 200


@dataclass(frozen=True)
class Structure:
    """Partition of R^n into contiguous blocks with exponents.

    ``block_sizes`` are e_1..e_k, ``exponents`` the alpha_i in (0, 2] and
    ``manifold_dims`` the r_i <= e_i (intrinsic dimension of the manifold
    factor living in block i). ``manifold_dims`` defaults to ``block_sizes``.
    """

    block_sizes: tuple[int, ...]
    exponents: tuple[float, ...]
    manifold_dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        sizes = tuple(int(e) for e in self.block_sizes)
        alphas = tuple(float(a) for a in self.exponents)
        dims = tuple(int(r) for r in self.manifold_dims) if self.manifold_dims else sizes
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "exponents", alphas)
        object.__setattr__(self, "manifold_dims", dims)
        problems = structure_problems(sizes, alphas, dims)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def k(self) -> int:
        return len(self.block_sizes)

    @property
    def n(self) -> int:
        return sum(self.block_sizes)

    @property
    def r(self) -> int:
        return sum(self.manifold_dims)

    def offsets(self) -> list[int]:
        """E(0), E(1), ..., E(k)."""
        return [0, *itertools.accumulate(self.block_sizes)]

    def blocks(self) -> list[slice]:
        off = self.offsets()
        return [slice(off[i], off[i + 1]) for i in range(self.k)]

    def to_dict(self) -> dict:
        return {
            "block_sizes": list(self.block_sizes),
            "exponents": list(self.exponents),
            "manifold_dims": list(self.manifold_dims),
        }


def structure_problems(block_sizes, exponents, manifold_dims=None) -> list[str]:
    """Every violated structure invariant, as messages (empty when valid)."""
    problems = []
    sizes = list(block_sizes)
    alphas = list(exponents)
    dims = list(manifold_dims) if manifold_dims else sizes
    if len(sizes) < 1:
        problems.append("structure needs at least one block (k >= 1)")
    if len(alphas) != len(sizes):
        problems.append(f"got {len(alphas)} exponents for {len(sizes)} blocks")
    if len(dims) != len(sizes):
        problems.append(f"got {len(dims)} manifold dims for {len(sizes)} blocks")
    for i, e in enumerate(sizes):
        if e < 1:
            problems.append(f"block size e_{i + 1}={e} must be a positive integer")
    for i, a in enumerate(alphas):
        if not (0.0 < a <= 2.0) or math.isnan(a):
            problems.append(f"alpha_{i + 1}={a} violates alpha_i in (0,2]")
    for i, (r, e) in enumerate(zip(dims, sizes)):
        if not (0 <= r <= e):
            problems.append(f"manifold dim r_{i + 1}={r} violates 0 <= r_i <= e_i={e}")
    return problems


def structure_module(t, s: Structure) -> float | np.ndarray:
    """|t|_{E,alpha} = sum_i ||t_(i)||^alpha_i.

    ``t`` may be a single vector of length n or an array whose last axis has
    length n; the module is taken along the last axis.
    """
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != s.n:
        raise ValueError(f"vector length {t.shape[-1]} does not match structure dimension n={s.n}")
    total = np.zeros(t.shape[:-1])
    for blk, alpha in zip(s.blocks(), s.exponents):
        total = total + np.linalg.norm(t[..., blk], axis=-1) ** alpha
    return float(total) if total.ndim == 0 else total


def mills_psi(u):
    """Psi(u) = phi(u) / u for u > 0."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0)):
        raise ValueError(f"mills_psi requires u > 0, got {u}")
    val = np.exp(-0.5 * u_arr**2) / math.sqrt(2.0 * math.pi) / u_arr
    return float(val) if val.ndim == 0 else val


def _check_tall(G: np.ndarray) -> np.ndarray:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    if m < 1 or m > n:
        raise ValueError(f"minor norm needs an n x m matrix with n >= m >= 1, got {n} x {m}")
    return G


def minor_norm(G) -> float:
    """||G||_m = sqrt(det(G^T G)), evaluated as |prod diag(R)| from G = QR.

    Same value as the Gram determinant without squaring the condition
    number, so rank-deficient G gives ~0 rather than sqrt(roundoff).
    """
    G = _check_tall(G)
    R = np.linalg.qr(G, mode="r")
    return float(abs(np.prod(np.diag(R))))


def gram_minor_norm(G) -> float:
    """sqrt(det(G^T G)) computed literally."""
    G = _check_tall(G)
    return math.sqrt(max(np.linalg.det(G.T @ G), 0.0))


def minor_norm_enumerated(G) -> float:
    """||G||_m as the root of the sum of all squared m x m minors.

    Exponential in m; refused when binomial(n, m) exceeds ``MAX_MINORS``.
    """
    G = _check_tall(G)
    n, m = G.shape
    if math.comb(n, m) > MAX_MINORS:
        raise ValueError(f"binomial({n},{m}) = {math.comb(n, m)} minors exceeds the enumeration cap {MAX_MINORS}")
    total = 0.0
    for rows in itertools.combinations(range(n), m):
        total += np.linalg.det(G[list(rows), :]) ** 2
    return math.sqrt(total)


def gumbel_quantile(alpha: float) -> float:
    """z_alpha with exp(-exp(-z_alpha)) = 1 - alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    return -math.log(-math.log1p(-alpha))


def gumbel_cdf(z):
    return np.exp(-np.exp(-np.asarray(z, dtype=float)))


def unit_ball_volume(r: int) -> float:
    """Volume B_r of the unit r-ball."""
    return math.pi ** (r / 2) / math.gamma(r / 2 + 1)


def as_structure(obj) -> Structure:
    if isinstance(obj, Structure):
        return obj
    if isinstance(obj, dict):
        return Structure(
            tuple(obj["block_sizes"]),
            tuple(obj["exponents"]),
            tuple(obj.get("manifold_dims", ()) or ()),
        )
    raise TypeError(f"cannot build a Structure from {type(obj).__name__}")


def blocks_of(sizes: Sequence[int]) -> list[slice]:
    off = [0, *itertools.accumulate(sizes)]
    return [slice(off[i], off[i + 1]) for i in range(len(sizes))]
