import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kplanes.grassmann import (
    AffinePlane,
    MetricBall,
    ParameterError,
    Params,
    Subspace,
    compute_p,
    compute_p_exact,
    delta_net_affine,
    delta_net_grassmann,
    format_plane,
    metric_d_affine,
    metric_d_linear,
    metric_rho_affine,
    metric_rho_linear,
    parse_plane,
    parse_scale,
    parse_scale_range,
    projection_matrix,
    read_planes,
    sphere_quadratic_max,
    write_planes,
)


def line2(theta):
    return Subspace(2, np.array([[math.cos(theta), math.sin(theta)]]))


X_AXIS = Subspace.coordinate([0], 2)
Y_AXIS = Subspace.coordinate([1], 2)


def sampled_rho(V1, V2, samples=100_000, seed=0):
    """Sampling oracle for max over B(0,1) ∩ V1 of dist(., V2)."""
    rng = np.random.default_rng(seed)
    k = V1.k
    R = math.sqrt(1 - V1.offset @ V1.offset)
    t = rng.standard_normal((samples, k))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    pts = V1.offset + R * t @ V1.dir.basis
    w = pts - V2.offset
    resid = w - w @ V2.dir.projector
    return float(np.linalg.norm(resid, axis=1).max())


# --- parameters -------------------------------------------------------------

def test_compute_p_values():
    assert compute_p(1, 2, 1) == pytest.approx(1.125, abs=1e-15)
    assert compute_p(1, 1, 1) == pytest.approx(4 / 3, abs=1e-15)
    assert compute_p(2, 2, 0) == pytest.approx(4 / 3, abs=1e-15)
    assert compute_p_exact(1, 2, 1) == Fraction(9, 8)
    assert compute_p_exact(2, 2, 0) == Fraction(4, 3)


def test_compute_p_rejects_large_beta():
    with pytest.raises(ParameterError):
        compute_p(1, 2, 1.5)


@given(st.integers(1, 4), st.integers(0, 3), st.fractions(0, 1))
def test_compute_p_exceeds_one(k, extra, beta):
    d = k + extra
    p = compute_p_exact(k, d, beta)
    assert p > 1
    J = d - k + 2
    assert p <= (d + beta) / (d + beta - Fraction(1, J))


def test_params_defaults_and_validation():
    P = Params(1, 2, 3, 1.0)
    assert P.s == 3
    assert P.p == pytest.approx(1.125)
    assert P.pPrime == pytest.approx(9.0)
    assert P.J == 3
    assert P.m == 4
    with pytest.raises(ParameterError):
        Params(2, 1, 3, 0.5)
    with pytest.raises(ParameterError):
        Params(1, 2, 3, 0.5, delta=0.3)
    with pytest.raises(ParameterError):
        Params(1, 2, 3, 2.5)


def test_parse_scale():
    assert parse_scale("2^-5") == 2.0**-5
    assert parse_scale_range("2^-4..2^-7") == [2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7]
    assert parse_scale_range("2^-3,2^-5") == [2.0**-3, 2.0**-5]
    with pytest.raises(ValueError):
        parse_scale("two")


# --- subspaces and projectors ----------------------------------------------

def test_projection_matrix_examples():
    np.testing.assert_allclose(projection_matrix(X_AXIS), [[1, 0], [0, 0]])
    np.testing.assert_allclose(projection_matrix(Subspace.full(2)), np.eye(2))
    diag = Subspace(2, np.array([[1, 1]]) / math.sqrt(2))
    np.testing.assert_allclose(projection_matrix(diag), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


@given(st.integers(0, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_projector_idempotent(dim, extra, seed):
    n = dim + extra
    W = Subspace.random(dim, n, np.random.default_rng(seed))
    P = W.projector
    assert np.abs(P @ P - P).max() < 1e-10
    assert np.abs(P - P.T).max() < 1e-12
    assert round(np.trace(P)) == dim


def test_subspace_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Subspace(2, np.array([[1.0, 1.0]]))


def test_affine_plane_invariants():
    with pytest.raises(ValueError):
        AffinePlane(X_AXIS, np.array([0.1, 0.0]))  # not perpendicular
    with pytest.raises(ValueError):
        AffinePlane(X_AXIS, np.array([0.0, 0.5]))  # boundary excluded
    V = AffinePlane(X_AXIS, np.array([0.0, 0.5]), bounded=False)
    assert V.offset[1] == 0.5
    with pytest.raises(ValueError):
        MetricBall(V, 0.0)


# --- metrics ----------------------------------------------------------------

def test_metric_d_linear_examples():
    assert metric_d_linear(X_AXIS, Y_AXIS) == pytest.approx(1.0)
    assert metric_d_linear(X_AXIS, X_AXIS) == 0.0
    assert metric_d_linear(X_AXIS, line2(math.pi / 6)) == pytest.approx(0.5, abs=1e-12)


def test_metric_rho_linear_examples():
    assert metric_rho_linear(X_AXIS, Y_AXIS) == pytest.approx(1.0)
    assert metric_rho_linear(X_AXIS, X_AXIS) == pytest.approx(0.0, abs=1e-15)
    # dense sampling of the unit segment of the x-axis
    L = line2(math.pi / 6)
    t = np.linspace(-1, 1, 100_001)
    pts = np.stack([t, 0 * t], axis=1)
    oracle = np.linalg.norm(pts - pts @ L.projector, axis=1).max()
    assert metric_rho_linear(X_AXIS, L) == pytest.approx(oracle, abs=1e-9)
    assert oracle == pytest.approx(0.5, abs=1e-9)


def test_metric_affine_examples():
    V1 = AffinePlane(X_AXIS, np.zeros(2))
    V2 = AffinePlane(X_AXIS, np.array([0, 0.3]))
    V3 = AffinePlane(line2(math.pi / 6), np.zeros(2))
    assert metric_d_affine(V1, V2) == pytest.approx(0.3)
    assert metric_d_affine(V1, V1) == 0.0
    assert metric_d_affine(V1, V3) == pytest.approx(0.5)
    assert metric_rho_affine(V1, V1) == pytest.approx(0.0, abs=1e-12)
    assert metric_rho_affine(V1, V2) == pytest.approx(0.3, abs=1e-12)
    assert metric_rho_affine(V1, V3) == pytest.approx(0.5, abs=1e-9)
    assert metric_rho_affine(V1, V3) == pytest.approx(sampled_rho(V1, V3), abs=1e-6)


@given(st.sampled_from([(1, 2), (1, 3), (2, 3), (2, 4)]), st.integers(0, 2**31))
def test_metric_rho_affine_matches_sampling(kn, seed):
    k, n = kn
    rng = np.random.default_rng(seed)
    V1 = AffinePlane.random(k, n, rng)
    V2 = AffinePlane.random(k, n, rng)
    exact = metric_rho_affine(V1, V2)
    approx = sampled_rho(V1, V2, samples=20_000, seed=seed)
    assert approx <= exact + 1e-9
    assert exact - approx < 0.05


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_metric_d_axioms(k, extra, seed):
    n = k + extra
    rng = np.random.default_rng(seed)
    A, B, C = (Subspace.random(k, n, rng) for _ in range(3))
    dab = metric_d_linear(A, B)
    assert dab == pytest.approx(metric_d_linear(B, A), abs=1e-12)
    assert metric_d_linear(A, A) < 1e-9
    assert dab <= metric_d_linear(A, C) + metric_d_linear(C, B) + 1e-12
    Va, Vb, Vc = (AffinePlane.random(k, n, rng) for _ in range(3))
    assert metric_d_affine(Va, Vb) <= metric_d_affine(Va, Vc) + metric_d_affine(Vc, Vb) + 1e-12


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_equal_dim_gap_identity(k, extra, seed):
    n = k + extra
    rng = np.random.default_rng(seed)
    A, B = Subspace.random(k, n, rng), Subspace.random(k, n, rng)
    d = metric_d_linear(A, B)
    assert metric_rho_linear(A, B) == pytest.approx(d, abs=1e-8)
    assert metric_rho_linear(B, A) == pytest.approx(d, abs=1e-8)


def test_sphere_quadratic_max_hard_case():
    # c orthogonal to the top eigenvector: the maximizer leaves the secular branch
    M = np.diag([2.0, 1.0])
    c = np.array([0.0, 0.5])
    val, t = sphere_quadratic_max(M, c, 1.0)
    th = np.linspace(0, 2 * np.pi, 200_001)
    T = np.stack([np.cos(th), np.sin(th)], axis=1)
    oracle = np.linalg.norm(T @ M.T + c, axis=1).max()
    assert val == pytest.approx(oracle, abs=1e-8)
    assert np.linalg.norm(t) == pytest.approx(1.0)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_sphere_quadratic_max_random(k, m, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, k))
    c = rng.standard_normal(m)
    R = rng.uniform(0.1, 1.0)
    val, t = sphere_quadratic_max(M, c, R)
    assert np.linalg.norm(M @ t + c) == pytest.approx(val, abs=1e-9)
    s = rng.standard_normal((20_000, k))
    s = R * s / np.linalg.norm(s, axis=1, keepdims=True)
    assert np.linalg.norm(s @ M.T + c, axis=1).max() <= val + 1e-9


# --- nets -------------------------------------------------------------------

def _pairwise_min(subs):
    B = np.stack([s.basis for s in subs])
    from kplanes._kernels import subspace_dists
    return min(subspace_dists(B[i + 1:], B[i]).min() for i in range(len(B) - 1))


def test_angular_net_counts():
    net = delta_net_grassmann(1, 2, 0.1)
    assert len(net) == 31
    assert _pairwise_min(net) >= 0.1
    coarse = delta_net_grassmann(1, 2, 1.0)
    assert 1 <= len(coarse) <= 2
    probes = [line2(t) for t in np.linspace(0, np.pi, 50)]
    assert max(min(metric_d_linear(p, q) for q in coarse) for p in probes) <= 1.0


def test_grassmann_net_g13():
    delta = 0.2
    net = delta_net_grassmann(1, 3, delta)
    assert 25 / 4 <= len(net) <= 25 * 8
    assert _pairwise_min(net) >= delta
    rng = np.random.default_rng(7)
    B = np.stack([s.basis for s in net])
    from kplanes._kernels import subspace_dists
    cover = max(subspace_dists(B, Subspace.random(1, 3, rng).basis).min() for _ in range(1000))
    assert cover <= delta


def test_grassmann_net_g24_complement_duality():
    net = delta_net_grassmann(3, 4, 0.5)
    assert all(s.dim == 3 for s in net)
    assert _pairwise_min(net) >= 0.5


def test_affine_net_a12():
    net = delta_net_affine(1, 2, 0.25)
    dirs = {tuple(np.round(V.dir.projector.ravel(), 9)) for V in net}
    assert len(dirs) == 12
    assert len(net) == 48
    for V in net:
        assert abs(V.dir.basis @ V.offset).max() < 1e-10
        assert np.linalg.norm(V.offset) < 0.5
    m = min(metric_d_affine(a, b) for i, a in enumerate(net) for b in net[i + 1:])
    assert m >= 0.25
    rng = np.random.default_rng(3)
    probes = [AffinePlane.random(1, 2, rng) for _ in range(300)]
    worst = max(min(metric_d_affine(P, V) for V in net) for P in probes)
    assert worst <= 2 * 0.25


def test_affine_net_coarse():
    assert 1 <= len(delta_net_affine(1, 2, 1.0)) <= 4


# --- text format ------------------------------------------------------------

def test_plane_format_round_trip(rng):
    planes = [AffinePlane.random(2, 4, rng) for _ in range(5)]
    text = write_planes(planes, header="test family")
    back = read_planes(text.splitlines())
    for a, b in zip(planes, back):
        np.testing.assert_array_equal(a.dir.basis, b.dir.basis)
        np.testing.assert_array_equal(a.offset, b.offset)
    S = Subspace.random(1, 3, rng)
    line = format_plane(S)
    assert len(line.split()) == 2 + 3
    T = parse_plane(line)
    np.testing.assert_array_equal(S.basis, T.basis)
