import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_extremes.core_math import Structure, mills_psi, minor_norm
from manifold_extremes.excursion import (
    abs_excursion_asymptotic, chi_excursion_asymptotic, chi_lift_model, empirical_chi_excursion,
    empirical_excursion, energy_density, energy_integral, gaussian_excursion_asymptotic,
    lifted_manifold, sphere_area,
)
from manifold_extremes.field_sim import CovarianceModel
from manifold_extremes.manifold import Circle, Product, Sphere
from manifold_extremes.pickands import PickandsEstimate

CIRCLE = Structure((2,), (2.0,), (1,))
H2 = 1.0 / math.sqrt(math.pi)


def circle_model(c=1.0, alpha=2.0):
    return CovarianceModel(Structure((2,), (alpha,), (1,)), d_field=c * np.eye(2))


def test_energy_integral_unit_circle():
    assert energy_integral(Circle(), circle_model()) == pytest.approx(2 * math.pi, rel=1e-12)


@pytest.mark.parametrize("c", [0.3, 1.0, 2.5])
def test_energy_integral_homogeneous(c):
    assert energy_integral(Circle(), circle_model(c)) == pytest.approx(c * 2 * math.pi, rel=1e-12)


def test_energy_integral_circle_times_circle():
    s = Structure((2, 2), (2.0, 2.0), (1, 1))
    D = np.zeros((4, 4))
    D[:2, :2] = 2 * np.eye(2)
    D[2:, 2:] = 3 * np.eye(2)
    M = Product(Circle(), Circle())
    got = energy_integral(M, CovarianceModel(s, d_field=D), resolution=64)
    assert got == pytest.approx((2 * 2 * math.pi) * (3 * 2 * math.pi), rel=1e-10)


def test_energy_integral_sphere_area():
    m = CovarianceModel(Structure((3,), (2.0,), (2,)))
    assert energy_integral(Sphere(2, 1.0), m, resolution=96) == pytest.approx(4 * math.pi, rel=1e-3)


def test_energy_integral_rescaled_field():
    m = CovarianceModel(CIRCLE, rescale_h=0.1)
    assert energy_integral(Circle(), m) == pytest.approx(20 * math.pi, rel=1e-12)


def test_singular_d_names_the_point():
    m = CovarianceModel(CIRCLE, d_field=lambda p: np.diag([1.0, 0.0]))
    with pytest.raises(ValueError, match="t="):
        energy_density(Circle(), m, [1.0, 0.0])


def test_dimension_mismatch_refused():
    m = CovarianceModel(Structure((3,), (2.0,), (2,)))
    with pytest.raises(ValueError, match="R\\^2"):
        energy_integral(Circle(), m)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_gaussian_asymptotic_assembles_from_pieces(c):
    u = 3.0
    want = H2 * c * 2 * math.pi * u * mills_psi(u)
    assert gaussian_excursion_asymptotic(Circle(), circle_model(c), u) == pytest.approx(want, rel=1e-12)


def test_gaussian_asymptotic_linear_in_c_and_exact_in_u():
    a = gaussian_excursion_asymptotic(Circle(), circle_model(1.0), 3.0)
    b = gaussian_excursion_asymptotic(Circle(), circle_model(2.0), 3.0)
    c = gaussian_excursion_asymptotic(Circle(), circle_model(1.0), 3.5)
    assert b == pytest.approx(2 * a, rel=1e-12)
    assert a / c == pytest.approx((3 / 3.5) * mills_psi(3.0) / mills_psi(3.5), rel=1e-12)


def test_missing_pickands_instructs_estimator():
    with pytest.raises(ValueError, match="estimate_pickands"):
        gaussian_excursion_asymptotic(Circle(), circle_model(1.0, alpha=1.0), 3.0)
    est = PickandsEstimate(Structure((1,), (1.0,)), 12.0, 0.05, 100, 0.83, 0.01)
    val = gaussian_excursion_asymptotic(Circle(), circle_model(1.0, alpha=1.0), 3.0, pickands=est)
    assert val == pytest.approx(0.83 * 2 * math.pi * 9.0 * mills_psi(3.0), rel=1e-12)


def test_threshold_must_exceed_one():
    with pytest.raises(ValueError, match="exceed 1"):
        gaussian_excursion_asymptotic(Circle(), circle_model(), 0.5)


@pytest.mark.parametrize("p", [2, 3])
def test_sphere_frame_minor_norm(p):
    S = Sphere(p - 1, 1.0)
    rng = np.random.default_rng(p)
    for _ in range(10):
        v = rng.standard_normal(p)
        v /= np.linalg.norm(v)
        P = S.frame_at_params(S.locate(v))
        assert minor_norm(np.eye(p) / math.sqrt(2) @ P) == pytest.approx(2 ** (-(p - 1) / 2), abs=1e-12)


def test_chi_hand_assembled_p2():
    u = 3.0
    want = H2 / math.sqrt(2 * math.pi) * (2 * math.pi * 2 * math.pi) * u**2 * mills_psi(u)
    assert chi_excursion_asymptotic(Circle(), circle_model(), 2, u) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("c", [0.7, 1.0, 2.0])
def test_chi_equals_lifted_gaussian(c):
    base = circle_model(c)
    lifted = gaussian_excursion_asymptotic(lifted_manifold(Circle(), 2), chi_lift_model(base, 2), 3.0,
                                           resolution=128)
    chi = chi_excursion_asymptotic(Circle(), base, 2, 3.0)
    assert abs(chi - lifted) <= 1e-10


def test_chi_p1_is_twice_gaussian():
    base = circle_model(1.3)
    g = gaussian_excursion_asymptotic(Circle(), base, 3.0)
    assert chi_excursion_asymptotic(Circle(), base, 1, 3.0) == pytest.approx(2 * g, rel=1e-14)
    assert abs_excursion_asymptotic(Circle(), base, 3.0) == pytest.approx(2 * g, rel=1e-14)


def test_chi_increasing_in_p_at_u3():
    base = circle_model()
    vals = [chi_excursion_asymptotic(Circle(), base, p, 3.0) for p in (1, 2, 3)]
    assert vals[0] < vals[1] < vals[2]


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_empirical_rare_and_certain_events():
    reps = empirical_excursion(Circle(), circle_model(2.0), [6.0], 10000, 64, seed=1)
    assert reps[0].empirical == 0.0 and reps[0].asymptotic < 1e-6
    # u = 0.1 is outside the asymptotic range, so the closed form is reported as nan
    low = empirical_excursion(Circle(), circle_model(2.0), [0.1], 2000, 64, seed=1)[0]
    assert low.empirical > 0.99 and math.isnan(low.asymptotic)


def test_empirical_report_invariants_and_nesting():
    reps = empirical_excursion(Circle(), circle_model(2.0), [1.5, 2.5, 3.0], 4000, 32, seed=2,
                               voronoi_epsilon=0.4)
    for r in reps:
        assert 0 <= r.empirical <= 1
        assert r.mc_std_error == pytest.approx(math.sqrt(r.empirical * (1 - r.empirical) / r.n_reps))
        assert r.grid_meta["coarse_empirical"] <= r.empirical
        assert r.bonferroni["ok"] and r.bonferroni["cell_sum"] >= r.bonferroni["whole"]
        assert 0 < r.asymptotic < 1
    ps = [r.empirical for r in reps]
    assert ps[0] >= ps[1] >= ps[2]


def test_coarse_grid_flagged_grid_limited():
    rep = empirical_excursion(Circle(), circle_model(4.0), [2.0], 20000, 8, seed=3)[0]
    assert "grid-limited" in rep.flags


def test_empirical_deterministic_across_threads():
    a = empirical_excursion(Circle(), circle_model(2.0), [2.5], 3000, 32, seed=4, threads=1)[0]
    b = empirical_excursion(Circle(), circle_model(2.0), [2.5], 3000, 32, seed=4, threads=4)[0]
    assert a.to_dict() == b.to_dict()


def test_empirical_chi_lift_undershoots_norm():
    reps = empirical_chi_excursion(Circle(), circle_model(1.0), 2, [2.5, 3.0], 3000, 64, seed=5)
    for r in reps:
        assert r.grid_meta["lift_empirical"] <= r.empirical
        assert r.empirical - r.grid_meta["lift_empirical"] <= 0.01


@settings(max_examples=25, deadline=None)
@given(u=st.floats(1.5, 8.0), c=st.floats(0.2, 5.0))
def test_asymptotic_positive_and_decreasing(u, c):
    m = circle_model(c)
    a = gaussian_excursion_asymptotic(Circle(), m, u, integral=c * 2 * math.pi)
    b = gaussian_excursion_asymptotic(Circle(), m, u + 0.5, integral=c * 2 * math.pi)
    assert a > 0 and b < a
