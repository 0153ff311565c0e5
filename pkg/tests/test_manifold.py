import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_extremes.manifold import (
    Circle, FlatTorus, IntervalProduct, OffManifoldError, Product, Sphere, hausdorff_integral,
    manifold_from_config, sphere_grid, tangent_frame,
)


def test_circle_frame_at_east_point():
    fr = tangent_frame(Circle(), [1.0, 0.0])
    assert np.allclose(np.abs(fr.columns[:, 0]), [0.0, 1.0])


def test_sphere_frame_at_pole_is_orthonormal_and_tangent():
    fr = tangent_frame(Sphere(2, 1.0), [0.0, 0.0, 1.0])
    P = fr.columns
    assert P.shape == (3, 2)
    assert np.allclose(P.T @ P, np.eye(2), atol=1e-10)
    assert np.allclose(P.T @ [0.0, 0.0, 1.0], 0.0, atol=1e-10)


def test_product_frame_is_block_diagonal():
    M = Product(Circle(), Circle(2.0))
    P = tangent_frame(M, [0.0, 1.0, 2.0, 0.0]).columns
    assert P.shape == (4, 2)
    assert np.allclose(P[:2, 1], 0.0) and np.allclose(P[2:, 0], 0.0)
    assert np.allclose(np.abs(P[:2, 0]), [1.0, 0.0])
    assert np.allclose(np.abs(P[2:, 1]), [0.0, 1.0])


def test_off_manifold_point_is_refused():
    with pytest.raises(OffManifoldError):
        tangent_frame(Circle(), [1.1, 0.0])
    with pytest.raises(OffManifoldError):
        tangent_frame(Sphere(2, 1.0), [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(th=st.floats(0.0, 2 * math.pi), ph=st.floats(-1.5, 1.5))
def test_sphere_frames_orthonormal_and_tangent(th, ph):
    p = np.array([math.cos(ph) * math.cos(th), math.cos(ph) * math.sin(th), math.sin(ph)])
    P = tangent_frame(Sphere(2, 1.0), p).columns
    assert np.allclose(P.T @ P, np.eye(2), atol=1e-10)
    assert np.allclose(P.T @ p, 0.0, atol=1e-10)


def test_hausdorff_integral_volumes():
    assert hausdorff_integral(Circle(), lambda x: 1.0, 1024) == pytest.approx(2 * math.pi, abs=1e-6)
    assert hausdorff_integral(Sphere(2, 1.0), lambda x: 1.0, 512) == pytest.approx(4 * math.pi, rel=1e-3)
    # cos^2 on a radius-2 circle: 2 * int cos^2 = 2 pi.
    val = hausdorff_integral(Circle(2.0), lambda x: (x[..., 0] / 2.0) ** 2, 256)
    assert val == pytest.approx(2 * math.pi, rel=1e-10)


def test_hausdorff_integral_needs_resolution():
    with pytest.raises(ValueError):
        hausdorff_integral(Circle(), lambda x: 1.0, 4)


@pytest.mark.parametrize("rho", [0.5, 1.0, 3.0])
def test_known_volumes_at_resolution_512(rho):
    assert hausdorff_integral(Circle(rho), lambda x: 1.0, 512) == pytest.approx(2 * math.pi * rho, rel=1e-3)
    assert hausdorff_integral(Sphere(2, rho), lambda x: 1.0, 512) == pytest.approx(4 * math.pi * rho**2, rel=1e-3)


def test_product_volume_fubini():
    M = Product(Circle(1.5), Sphere(2, 1.0))
    val = hausdorff_integral(M, lambda x: 1.0, 64)
    assert val == pytest.approx(Circle(1.5).volume() * 4 * math.pi, rel=5e-3)
    assert M.volume() == pytest.approx(2 * math.pi * 1.5 * 4 * math.pi)


def test_torus_and_box():
    T = FlatTorus((1.0, 2.0))
    assert T.intrinsic_dim == 2 and T.ambient_dim == 4
    assert hausdorff_integral(T, lambda x: 1.0, 64) == pytest.approx(T.volume(), rel=1e-10)
    B = IntervalProduct(((0.0, 2.0), (0.0, 3.0)))
    assert hausdorff_integral(B, lambda x: 1.0, 32) == pytest.approx(6.0, rel=1e-10)
    assert math.isinf(B.reach)


def test_reach_and_dims():
    assert Circle(2.5).reach == 2.5
    assert Sphere(2, 0.7).reach == 0.7
    M = Product(Circle(0.5), Circle(2.0))
    assert M.reach == 0.5 and M.intrinsic_dim == 2 and M.ambient_dim == 4


def test_sphere_grid_examples():
    g = sphere_grid(2, 4)
    assert np.allclose(g, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-12)
    g3 = sphere_grid(3, 100)
    assert g3.shape == (100, 3)
    assert np.allclose(np.linalg.norm(g3, axis=1), 1.0, atol=1e-12)
    d = np.linalg.norm(g3[:, None] - g3[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min(axis=1).max() < 0.5
    with pytest.raises(ValueError):
        sphere_grid(4, 10)


def test_frames_continuous_along_circle_path():
    M = Circle()
    th = np.linspace(0.0, 2 * math.pi, 400, endpoint=False)
    frames = [M.frame_at_params([t])[:, 0] for t in th]
    jumps = [np.linalg.norm(a - b) for a, b in zip(frames, frames[1:])]
    assert max(jumps) < 0.05


def test_manifold_from_config_roundtrip():
    cfg = {"kind": "product", "left": {"kind": "circle", "radius": 2.0}, "right": {"kind": "sphere", "dim": 2}}
    M = manifold_from_config(cfg)
    assert M.intrinsic_dim == 3 and M.ambient_dim == 5
    assert manifold_from_config(M.to_dict()) == M
    with pytest.raises(ValueError):
        manifold_from_config({"kind": "mobius"})
