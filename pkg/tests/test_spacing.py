import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kplanes.grassmann import AffinePlane, ParameterError, Params, Subspace, metric_d_affine
from kplanes.families import gen_low_beta
from kplanes.spacing import (
    ChartError,
    DyadicCubeIndex,
    PreconditionError,
    audit_points,
    cantor_set_1d,
    dyadic_radii,
    frostman_partition,
    interval_counts,
    map_family_to_unit_cube,
    spacing_check,
)


def brute_ball_constant(points, delta, s):
    """max over member-centered dyadic balls of count / (r/delta)^s, by pairwise distances."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    D = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    worst = 0.0
    r = delta
    while r <= 1 + 1e-12:
        worst = max(worst, (D <= r + 1e-12).sum(axis=1).max() / (r / delta) ** s)
        r *= 2
    return worst


def horizontal(c):
    return AffinePlane(Subspace.coordinate([0], 2), np.array([0.0, c]))


# --- spacing_check ----------------------------------------------------------

@pytest.mark.parametrize("s", [0.0, 1.0, 2.5])
def test_single_plane_passes(s):
    rep = spacing_check([horizontal(0.1)], s, 1.0, 2.0**-4)
    assert rep.passed


def test_clustered_family_fails():
    delta = 2.0**-4
    planes = [horizontal(0.01 + i * delta / 32) for i in range(16)]
    rep = spacing_check(planes, 1.0, 1.0, delta)
    assert not rep.passed
    r, _, count, bound = rep.worst
    assert r == delta and count == 16 and bound == 1.0


def test_low_beta_family_passes():
    params = Params(k=1, d=2, n=3, beta=0.5, delta=2.0**-4)
    fam = gen_low_beta(params)
    rep = spacing_check(fam, params.s, 4.0)
    assert rep.exhaustive and rep.passed
    assert rep.min_constant <= 4.0


def test_spacing_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    planes = [AffinePlane.random(1, 2, rng) for _ in range(40)]
    delta = 2.0**-3
    rep = spacing_check(planes, 1.5, 100.0, delta, keep_rows=True)
    D = np.array([[metric_d_affine(a, b) for b in planes] for a in planes])
    for r, c, count, _ in rep.rows:
        assert count == int((D[c] <= r + 1e-12).sum())


def test_report_csv_header():
    planes = [horizontal(c) for c in (0.0, 0.1, 0.2, 0.3)]
    rep = spacing_check(planes, 1.0, 1.0, 0.125, keep_rows=True)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "r,center_index,count,bound,margin"
    assert len(lines) == 1 + len(rep.rows) > 1
    r, c, count, bound, margin = lines[1].split(",")
    assert float(bound) - int(count) == pytest.approx(float(margin))


def test_dyadic_radii():
    np.testing.assert_allclose(dyadic_radii(2.0**-3), [0.125, 0.25, 0.5, 1.0])


# --- frostman_partition -----------------------------------------------------

def test_partition_trivial():
    assert frostman_partition([], 2.0**-4, 1.0, 1.0) == []
    assert frostman_partition([[0.3]], 2.0**-4, 1.0, 1.0) == [[0]]


def test_partition_rejects_non_dyadic():
    with pytest.raises(ParameterError):
        frostman_partition([[0.3]], 0.3, 1.0, 1.0)


def test_partition_rejects_bad_input():
    pts = np.full((10, 1), 0.5)
    with pytest.raises(PreconditionError):
        frostman_partition(pts, 2.0**-4, 1.0, 1.0)


def test_partition_equally_spaced():
    delta = 2.0**-6
    pts = np.arange(64)[:, None] * delta
    assert brute_ball_constant(pts, delta, 1.0) <= 3
    parts, trace = frostman_partition(pts, delta, 1.0, 3.0, return_trace=True)
    flat = sorted(i for p in parts for i in p)
    assert flat == list(range(64))
    assert len(parts) <= 10**5 * 9
    for p in parts:
        assert brute_ball_constant(pts[p], delta, 1.0) <= 1.0
    for _, _, worst, bound in trace.clique_counts:
        assert worst <= bound


def _monotone(trace):
    by_class = {}
    for cid, r, lab in trace.levels:
        by_class.setdefault(cid, []).append((r, lab))
    for seq in by_class.values():
        seq.sort()
        for (r0, fine), (r1, coarse) in zip(seq, seq[1:]):
            assert r1 == 2 * r0
            same_fine = fine[:, None] == fine[None, :]
            same_coarse = coarse[:, None] == coarse[None, :]
            assert not (same_fine & ~same_coarse).any()


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 60), st.sampled_from([1, 2]))
def test_partition_properties(seed, N, m):
    rng = np.random.default_rng(seed)
    delta = 2.0**-5
    s = float(m)
    pts = rng.random((N, m))
    M = float(math.ceil(brute_ball_constant(pts, delta, s)))
    parts, trace = frostman_partition(pts, delta, s, M, return_trace=True)
    flat = [i for p in parts for i in p]
    assert sorted(flat) == list(range(N))
    assert len(parts) <= 10 ** (5 * m) * M * M
    for p in parts:
        ok, const, _ = audit_points(pts[p], delta, s, 1.0)
        assert ok and brute_ball_constant(pts[p], delta, s) <= 1.0
    for _, _, worst, bound in trace.clique_counts:
        assert worst <= bound
    _monotone(trace)


def test_partition_deterministic():
    rng = np.random.default_rng(0)
    pts = rng.random((50, 2))
    a = frostman_partition(pts, 2.0**-4, 2.0, 20.0)
    b = frostman_partition(pts, 2.0**-4, 2.0, 20.0)
    assert a == b


def test_dyadic_cube_index():
    c = DyadicCubeIndex.of([0.3, 0.99], 2)
    assert c.coords == (1, 3) and c.side == 0.25
    assert DyadicCubeIndex.of([1.0], 3).coords == (7,)


# --- chart ------------------------------------------------------------------

def test_chart_horizontal_lines():
    fam = [horizontal(0.1), horizontal(0.2)]
    coords, distortion = map_family_to_unit_cube(fam)
    assert coords.shape == (2, 2)
    np.testing.assert_allclose(coords[:, 0], 0.5)
    gap_chart = np.linalg.norm(coords[0] - coords[1])
    gap_metric = metric_d_affine(fam[0], fam[1])
    assert 0.25 <= gap_chart / gap_metric <= 4
    assert distortion <= 4


def test_chart_single_and_reference():
    V = horizontal(0.3)
    coords, _ = map_family_to_unit_cube([V])
    assert coords.shape == (1, 2)
    np.testing.assert_allclose(coords[0], 0.5)
    rng = np.random.default_rng(1)
    W = AffinePlane.random(2, 4, rng)
    c, _ = map_family_to_unit_cube([W], reference=W)
    np.testing.assert_allclose(c[0], 0.5, atol=1e-12)


def test_chart_distortion_bounded():
    rng = np.random.default_rng(4)
    base = Subspace.coordinate([0], 3)
    planes = []
    while len(planes) < 30:
        V = AffinePlane.random(1, 3, rng)
        if metric_d_affine(AffinePlane(V.dir, np.zeros(3)), AffinePlane(base, np.zeros(3))) < 0.2:
            planes.append(V)
    coords, distortion = map_family_to_unit_cube(planes, reference=AffinePlane(base, np.zeros(3)))
    assert ((coords >= 0) & (coords <= 1)).all()
    assert distortion <= 4


def test_chart_rejects_straddling():
    fam = [horizontal(0.1), AffinePlane(Subspace.coordinate([1], 2), np.zeros(2))]
    with pytest.raises(ChartError):
        map_family_to_unit_cube(fam)


# --- Cantor sets ------------------------------------------------------------

def test_cantor_full_interval():
    pts = cantor_set_1d(1.0, 2.0**-4)
    assert len(pts) == 17
    np.testing.assert_allclose(pts, np.arange(17) / 16)


def test_cantor_half_dimension():
    delta = 2.0**-8
    pts = cantor_set_1d(0.5, delta)
    assert 12 <= len(pts) <= 20
    # every interval of radius r centered on a delta/2-lattice point
    r = delta
    while r <= 1:
        for x in np.arange(0, 1 + delta / 4, delta / 2):
            cnt = int((np.abs(pts - x) <= r + 1e-12).sum())
            assert cnt <= 4 * (r / delta) ** 0.5
        r *= 2
    assert brute_ball_constant(pts, delta, 0.5) <= 4


def test_cantor_small_beta():
    assert len(cantor_set_1d(0.01, 2.0**-8)) <= 4


def test_cantor_rejects():
    with pytest.raises(ParameterError):
        cantor_set_1d(0.5, 0.3)
    with pytest.raises(ParameterError):
        cantor_set_1d(0.0, 0.25)


@pytest.mark.parametrize("beta", [0.25, 0.5, 0.75, 1.0])
def test_cantor_separated_and_dimension(beta):
    delta = 2.0**-10
    pts = cantor_set_1d(beta, delta)
    assert (np.diff(pts) >= delta - 1e-12).all()
    # occupied dyadic intervals across scales
    xs, ys = [], []
    for j in range(4, 11):
        h = 2.0**-j
        cells = np.unique(np.minimum(np.floor(pts / h), 2**j - 1))
        xs.append(j * math.log(2))
        ys.append(math.log(len(cells)))
    slope = np.polyfit(xs, ys, 1)[0]
    assert abs(slope - beta) <= 0.15


@given(st.floats(0.05, 1.0), st.integers(2, 9))
def test_cantor_frostman_property(beta, L):
    delta = 2.0**-L
    pts = cantor_set_1d(beta, delta)
    radii, counts = interval_counts(pts, delta)
    assert (counts <= 4 * (radii / delta) ** beta + 1e-9).all()
