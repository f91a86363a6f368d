import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kplanes.families import (
    BudgetExhausted,
    ExampleSpec,
    box_counting_dimension,
    covered_cells,
    gen_high_beta,
    gen_low_beta,
    gen_random_frostman,
)
from kplanes.grassmann import AffinePlane, ParameterError, Params, Subspace, metric_d_affine
from kplanes.spacing import PlaneFamily, spacing_check


def assert_separated(fam, delta, sample=400, seed=0):
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(fam), size=min(sample, len(fam)), replace=False)
    planes = [fam.plane(int(i)) for i in idx]
    for a in range(len(planes)):
        for b in range(a):
            assert metric_d_affine(planes[a], planes[b]) >= delta * (1 - 1e-9)


# --- high beta --------------------------------------------------------------

@pytest.mark.parametrize("beta", [1.0, 1.5, 2.0])
def test_high_beta_spacing(beta):
    params = Params(k=1, d=2, n=4, beta=beta, delta=2.0**-3)
    fam = gen_high_beta(params)
    assert fam.n == 4 and fam.k == 1
    # everything lives in the first d+1 coordinates
    assert np.abs(fam.dirs[:, :, 3:]).max() == 0 and np.abs(fam.offsets[:, 3:]).max() == 0
    rep = spacing_check(fam, params.s, 4.0)
    assert rep.exhaustive and rep.passed
    assert_separated(fam, params.delta)


def test_high_beta_sizes_grow_with_beta():
    sizes = [len(gen_high_beta(Params(k=1, d=2, n=4, beta=b, delta=2.0**-3)))
             for b in (1.0, 1.5, 2.0)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_high_beta_coarse():
    fam = gen_high_beta(Params(k=1, d=2, n=4, beta=2.0, delta=0.5))
    # a handful of directions times the four offsets of the coarse grid
    assert 1 <= len(fam) <= 64


def test_high_beta_rejects():
    with pytest.raises(ParameterError):
        gen_high_beta(Params(k=1, d=2, n=4, beta=0.5, delta=0.25))


# --- low beta ---------------------------------------------------------------

@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_low_beta_spacing_and_containment(beta):
    params = Params(k=1, d=2, n=3, beta=beta, delta=2.0**-4)
    fam = gen_low_beta(params)
    rep = spacing_check(fam, params.s, 4.0)
    assert rep.exhaustive and rep.passed
    # planes stay horizontal inside R^d x [0, 1/2)
    assert np.abs(fam.dirs[:, :, 2]).max() == 0
    h = fam.offsets[:, 2]
    assert h.min() >= 0 and h.max() < 0.5
    assert (np.linalg.norm(fam.offsets, axis=1) < 0.5).all()
    assert_separated(fam, params.delta)


def test_low_beta_containment_higher_n():
    params = Params(k=1, d=2, n=4, beta=0.5, delta=2.0**-3)
    fam = gen_low_beta(params)
    assert np.abs(fam.dirs[:, :, 2:]).max() == 0
    assert np.abs(fam.offsets[:, 3]).max() == 0


def test_low_beta_single_level():
    params = Params(k=1, d=2, n=3, beta=0.5, delta=2.0**-4)
    fam = gen_low_beta(params, levels=[0.0])
    assert np.abs(fam.offsets[:, 2]).max() == 0
    est = box_counting_dimension(fam, [2.0**-4, 2.0**-5, 2.0**-6])
    assert abs(est.fit - 2.0) < 0.25


def test_low_beta_rejects_zero():
    with pytest.raises(ParameterError):
        gen_low_beta(Params(k=1, d=2, n=3, beta=0.0, delta=0.25))


def test_low_beta_dimension_quick():
    params = Params(k=1, d=2, n=3, beta=1.0, delta=2.0**-5)
    fam = gen_low_beta(params, plane_delta=2.0**-4)
    est = box_counting_dimension(fam, [2.0**-4, 2.0**-5, 2.0**-6])
    assert abs(est.fit - 3.0) < 0.3


# --- random Frostman --------------------------------------------------------

def test_random_frostman_audit():
    params = Params(k=1, d=2, n=3, beta=0.5, delta=2.0**-4)
    fam = gen_random_frostman(params)
    assert len(fam) == int(np.ceil(2.0 ** (4 * params.s)))
    rep = spacing_check(fam, params.s, 1.0)
    assert rep.exhaustive and rep.passed
    assert_separated(fam, params.delta)


def test_random_frostman_single_plane():
    params = Params(k=1, d=2, n=3, beta=0.0, delta=2.0**-4, s=0.0)
    fam = gen_random_frostman(params)
    assert len(fam) == 1


def test_random_frostman_full_dimension():
    params = Params(k=1, d=1, n=2, beta=0.0, delta=2.0**-3, s=2.0)
    fam = gen_random_frostman(params, max_attempts=200_000, allow_partial=True)
    assert spacing_check(fam, 2.0, 1.0).passed
    # a maximal packing at this scale is a sizeable fraction of the target
    assert len(fam) >= 0.2 * 2.0 ** 6


def test_random_frostman_budget():
    params = Params(k=1, d=2, n=3, beta=1.0, delta=2.0**-4)
    with pytest.raises(BudgetExhausted) as err:
        gen_random_frostman(params, max_attempts=50)
    assert 0 < err.value.achieved < err.value.target
    part = gen_random_frostman(params, max_attempts=50, allow_partial=True)
    assert len(part) == err.value.achieved


def test_random_frostman_rejects_large_s():
    with pytest.raises(ParameterError):
        gen_random_frostman(Params(k=1, d=2, n=3, beta=1.0, s=5.0))


def test_determinism():
    params = Params(k=1, d=2, n=3, beta=0.5, delta=2.0**-4)
    a = gen_random_frostman(params, seed=3)
    b = gen_random_frostman(params, seed=3)
    assert np.array_equal(a.dirs, b.dirs) and np.array_equal(a.offsets, b.offsets)
    c = gen_random_frostman(params, seed=4)
    assert not np.array_equal(a.offsets, c.offsets)
    p2 = Params(k=1, d=2, n=4, beta=1.5, delta=2.0**-3)
    x, y = gen_high_beta(p2, seed=1), gen_high_beta(p2, seed=1)
    assert np.array_equal(x.dirs, y.dirs) and np.array_equal(x.offsets, y.offsets)


# --- box counting -----------------------------------------------------------

def test_single_line_dimension():
    fam = PlaneFamily.from_planes([AffinePlane(Subspace.coordinate([0], 3), np.zeros(3))], 0.1)
    est = box_counting_dimension(fam, [2.0**-j for j in range(3, 8)])
    assert abs(est.fit - 1.0) < 0.15
    assert 0 <= min(est.dim_estimates) and max(est.dim_estimates) <= 3.1


def test_single_plane_dimension():
    fam = PlaneFamily.from_planes([AffinePlane(Subspace.coordinate([0, 1], 3), np.zeros(3))], 0.1)
    est = box_counting_dimension(fam, [2.0**-j for j in range(3, 8)])
    assert abs(est.fit - 2.0) < 0.15


def test_box_counting_rejects_two_scales():
    fam = PlaneFamily.from_planes([AffinePlane(Subspace.coordinate([0], 2), np.zeros(2))], 0.1)
    with pytest.raises(ParameterError):
        box_counting_dimension(fam, [0.25, 0.125])


def test_box_counting_csv():
    fam = PlaneFamily.from_planes([AffinePlane(Subspace.coordinate([0], 2), np.zeros(2))], 0.1)
    est = box_counting_dimension(fam, [0.25, 0.125, 0.0625])
    lines = est.to_csv().splitlines()
    assert lines[0] == "delta,cells,estimate" and len(lines) == 4
    assert est.delta == 0.0625


def test_covered_cells_oracle():
    # brute force: centers within sqrt(n) delta / 2 of the line
    V = AffinePlane.random(1, 2, np.random.default_rng(9))
    delta = 2.0**-5
    G = int(2 / delta)
    ax = -1 + (np.arange(G) + 0.5) * delta
    c = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    w = c - V.offset
    r = np.linalg.norm(w - w @ V.dir.projector, axis=1)
    expect = int(((r <= np.sqrt(2) * delta / 2) & ((c**2).sum(1) <= 1)).sum())
    assert covered_cells([V], delta) == expect


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_box_counting_monotone(seed):
    rng = np.random.default_rng(seed)
    planes = [AffinePlane.random(1, 3, rng) for _ in range(12)]
    sub = planes[: int(rng.integers(1, 12))]
    for delta in (2.0**-3, 2.0**-4, 2.0**-5):
        assert covered_cells(sub, delta) <= covered_cells(planes, delta)


# --- example objects -----------------------------------------------------------

def test_example_spec():
    spec = ExampleSpec("low_beta", Params(k=1, d=2, n=3, beta=0.5, delta=2.0**-3))
    fam = spec.generate()
    assert len(fam) > 0
    with pytest.raises(ParameterError):
        ExampleSpec("high_beta", Params(k=1, d=2, n=3, beta=0.5))
    with pytest.raises(ParameterError):
        ExampleSpec("low_beta", Params(k=1, d=2, n=3, beta=1.5))
    with pytest.raises(ParameterError):
        ExampleSpec("other", Params(k=1, d=2, n=3, beta=0.5))
