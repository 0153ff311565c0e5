import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from manifold_extremes.core_math import Structure, structure_module
from manifold_extremes import pickands
from manifold_extremes.pickands import (
    estimate_pickands, grid_steps, pickands_closed_form, product_pickands, refinement_profile,
    simulate_pickands_field,
)

H2 = 1.0 / math.sqrt(math.pi)


def discrete_h1(delta, terms=200000):
    """Exact discrete Pickands constant for alpha = 1 (Brownian motion with drift) on delta*Z."""
    k = np.arange(1, terms + 1)
    return math.exp(-2.0 * np.sum(norm.sf(np.sqrt(k * delta / 2.0)) / k)) / delta


def test_discrete_h1_oracle_values():
    assert discrete_h1(0.1) == pytest.approx(0.7709, abs=2e-4)
    assert discrete_h1(0.001, terms=2000000) == pytest.approx(0.9743, abs=2e-3)


def test_w_vanishes_at_origin_and_has_the_right_moments():
    s = Structure((1,), (1.5,))
    pts, W = simulate_pickands_field(s, 2.0, 0.25, 10000, seed=3)
    origin = np.flatnonzero(np.all(pts == 0, axis=1))[0]
    assert np.all(W[:, origin] == 0)
    norm_t = structure_module(pts, s)
    sd = np.sqrt(2.0 * norm_t)
    mask = norm_t > 0
    assert np.all(np.abs(W.mean(axis=0)[mask] + norm_t[mask]) <= 4 * sd[mask] / 100)
    assert np.allclose(W.var(axis=0)[mask], 2.0 * norm_t[mask], rtol=0.06)


def test_pickands_covariance_matches_formula():
    s = Structure((2,), (1.0,))
    pts, W = simulate_pickands_field(s, 1.0, 0.5, 20000, seed=1)
    C = np.cov(W.T)
    n = structure_module(pts, s)
    want = n[:, None] + n[None, :] - structure_module(pts[:, None] - pts[None], s)
    assert np.allclose(C, want, atol=0.12)


def test_lattice_cap_enforced():
    with pytest.raises(ValueError, match="exceeds"):
        estimate_pickands(Structure((2,), (2.0,)), 8.0, 0.05, 10, seed=0)


def test_grid_steps_robust_to_rounding():
    assert grid_steps(8.0, 0.05) == 160
    assert grid_steps(0.3, 0.1) == 3
    with pytest.raises(ValueError):
        grid_steps(0.0, 0.1)


def test_closed_forms():
    assert pickands_closed_form(1, 2.0) == pytest.approx(H2)
    assert pickands_closed_form(3, 2.0) == pytest.approx(math.pi ** -1.5)
    assert pickands_closed_form(1, 1.0) == 1.0
    assert pickands_closed_form(2, 1.5) is None


def test_product_pickands_requires_estimate_off_alpha2():
    s = Structure((1, 1), (2.0, 1.0))
    with pytest.raises(ValueError, match="estimate_pickands"):
        product_pickands(s)
    assert product_pickands(s, 0.4) == 0.4
    assert product_pickands(Structure((1, 2), (2.0, 2.0))) == pytest.approx(math.pi ** -1.5)


def test_alpha2_estimate_brackets_closed_form():
    est = estimate_pickands(Structure((1,), (2.0,)), 8.0, 0.05, 4000, seed=11)
    assert 0.50 <= est.estimate <= 0.63
    assert est.estimate > 0 and est.std_error > 0 and math.isfinite(est.estimate)
    assert est.excluded == 0 and est.grid_steps == 160


def test_alpha1_estimate_matches_exact_discrete_constant():
    # the discrete constant at gamma = 0.05 is 0.8318, below 1 by its own grid bias
    est = estimate_pickands(Structure((1,), (1.0,)), 12.0, 0.05, 4000, seed=2)
    assert abs(est.estimate - discrete_h1(0.05)) <= 4 * est.std_error + 0.01


def test_factorization_alpha2():
    one = estimate_pickands(Structure((1,), (2.0,)), 4.0, 0.1, 3000, seed=4)
    two = estimate_pickands(Structure((1, 1), (2.0, 2.0)), 4.0, 0.1, 3000, seed=5)
    assert abs(two.estimate / one.estimate**2 - 1.0) <= 0.15


def test_stabilization_in_T_alpha2():
    s = Structure((1,), (2.0,))
    a = estimate_pickands(s, 8.0, 0.05, 3000, seed=6)
    b = estimate_pickands(s, 12.0, 0.05, 3000, seed=7)
    assert abs(a.estimate - b.estimate) <= 2 * math.hypot(a.std_error, b.std_error)


def test_shift_estimator_carries_edge_excess():
    est = estimate_pickands(Structure((1,), (2.0,)), 8.0, 0.05, 3000, seed=8, method="shift")
    assert est.estimate == pytest.approx(H2 + 1.0 / 8.0, abs=0.03)


def test_refinement_profile_monotone():
    prof = refinement_profile(Structure((1,), (2.0,)), 4.0, 0.05, [1, 2, 4, 8], 2000, seed=3)
    assert prof["per_rep_monotone"]
    est = prof["estimates"]  # ordered coarse to fine
    assert all(b >= a for a, b in zip(est, est[1:]))


def test_direct_overflow_fails_run(monkeypatch):
    # sup W never reaches the real exp overflow at sane inputs, so lower the threshold
    monkeypatch.setattr(pickands, "EXP_OVERFLOW", 0.5)
    with pytest.raises(FloatingPointError, match="overflowed"):
        estimate_pickands(Structure((1,), (2.0,)), 4.0, 0.1, 2000, seed=0, method="direct")


def test_direct_estimate_counts_exclusions(monkeypatch):
    monkeypatch.setattr(pickands, "EXP_OVERFLOW", 6.5)
    est = estimate_pickands(Structure((1,), (2.0,)), 4.0, 0.1, 20000, seed=0, method="direct")
    assert 0 < est.excluded <= 20 and est.n_reps == 20000


def test_threads_do_not_change_estimate():
    s = Structure((1,), (1.0,))
    a = estimate_pickands(s, 4.0, 0.1, 2500, seed=1, threads=1)
    b = estimate_pickands(s, 4.0, 0.1, 2500, seed=1, threads=3)
    assert a.estimate == b.estimate and a.std_error == b.std_error


@settings(max_examples=10, deadline=None)
@given(alpha=st.floats(0.3, 2.0), gamma=st.sampled_from([0.1, 0.2, 0.25]))
def test_ratio_estimate_bounded_by_inverse_spacing(alpha, gamma):
    # max e^W / sum e^W lies in (0, 1], so the estimate lies in (0, 1/gamma]
    est = estimate_pickands(Structure((1,), (alpha,)), 3.0, gamma, 200, seed=0)
    assert 0 < est.estimate <= 1.0 / gamma + 1e-12
