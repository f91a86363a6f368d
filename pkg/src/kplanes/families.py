"""Sharp example families, random Frostman families and box counting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .grassmann import (
    ParameterError,
    Params,
    affine_net_arrays,
    is_dyadic,
)
from .slabs import Grid
from .spacing import FrostmanCertificate, PlaneFamily, as_family, cantor_set_1d, dyadic_radii


def _embed(dirs: np.ndarray, offsets: np.ndarray, n: int):
    N, k, m = dirs.shape
    D = np.zeros((N, k, n))
    D[:, :, :m] = dirs
    X = np.zeros((N, n))
    X[:, : offsets.shape[1]] = offsets
    return D, X


def _levels(beta: float, delta: float) -> np.ndarray:
    """Heights a in [0, 1/2) forming a delta-separated beta-dimensional set."""
    if beta >= 1:
        t = np.arange(0, 2 ** round(-math.log2(delta)) + 1) * delta
        return t[t < 0.5]
    coarse = 2 * delta
    if coarse >= 1:
        return np.array([0.0])
    t = cantor_set_1d(beta, coarse) / 2
    return t[t < 0.5]


def _stack_levels(k: int, d: int, n: int, levels: np.ndarray, plane_delta: float, seed: int):
    """Union over a in levels of a net of A(k, R^d) lifted to height a e_{d+1},
    keeping total offset norm below 1/2."""
    D0, X0 = affine_net_arrays(k, d, plane_delta, seed)
    D0, X0 = _embed(D0, X0, n)
    sq = (X0**2).sum(axis=1)
    Ds, Xs = [], []
    for a in levels:
        keep = sq + a * a < 0.25 * (1 - 1e-12)
        X = X0[keep].copy()
        X[:, d] = a
        Ds.append(D0[keep])
        Xs.append(X)
    return np.concatenate(Ds), np.concatenate(Xs)


def gen_low_beta(params: Params, delta: float | None = None, seed: int = 0,
                 plane_delta: float | None = None, levels=None) -> PlaneFamily:
    """Union over a in a beta-dimensional set of nets of A(k, R^d + a e_{d+1}).

    Heights are half the points of a beta-dimensional Cantor set at scale
    2 delta, so they are delta-separated in [0, 1/2). ``plane_delta`` sets
    the in-plane net scale (default delta); ``levels`` overrides the heights.
    """
    k, d, n, beta = params.k, params.d, params.n, params.beta
    delta = params.delta if delta is None else delta
    if not 0 < beta <= 1:
        raise ParameterError(f"low-beta examples need beta in (0, 1], got {beta}")
    if n < d + 1:
        raise ParameterError("need n >= d + 1")
    if not is_dyadic(delta):
        raise ParameterError("delta must be dyadic")
    lev = _levels(beta, delta) if levels is None else np.asarray(levels, dtype=np.float64)
    D, X = _stack_levels(k, d, n, lev, plane_delta or delta, seed)
    s = (k + 1) * (d - k) + beta
    return PlaneFamily(D, X, delta, FrostmanCertificate(s, 4.0, list(dyadic_radii(delta))))


def _tilted(D: np.ndarray, X: np.ndarray, w: np.ndarray, a: float, d: int):
    """Tilt R^d-planes by w (in-plane coordinates) toward e_{d+1} and lift to
    height a; returns orthonormal dirs and perpendicular offsets."""
    N, k, n = D.shape
    B = D.copy()
    B[:, :, d] = w[None, :]
    q, _ = np.linalg.qr(np.transpose(B, (0, 2, 1)))
    B = np.ascontiguousarray(np.transpose(q, (0, 2, 1)))
    pt = X.copy()
    pt[:, d] = a
    off = pt - np.einsum("nki,nk->ni", B, np.einsum("nki,ni->nk", B, pt))
    return B, off


def _thin(D: np.ndarray, X: np.ndarray, delta: float) -> np.ndarray:
    """Greedy delta-separated subset (canonical order) in the affine metric."""
    N, k, n = D.shape
    P = np.einsum("nki,nkj->nij", D, D).reshape(N, -1)
    emb = np.concatenate([P, X], axis=1)
    # metric distance < delta forces embedding distance < sqrt(2k) delta
    pairs = cKDTree(emb).query_pairs(math.sqrt(2 * k) * delta, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(N)
    i, j = pairs[:, 0], pairs[:, 1]
    dd = np.array([_kernels.affine_dists(D[b:b + 1], X[b:b + 1], D[a], X[a])[0]
                   for a, b in zip(i, j)])
    close = dd < delta * (1 - 1e-12)
    i, j = i[close], j[close]
    nbrs: dict = {}
    for a, b in zip(np.minimum(i, j), np.maximum(i, j)):
        nbrs.setdefault(int(b), []).append(int(a))
    keep = np.ones(N, dtype=bool)
    for b in range(N):
        if any(keep[a] for a in nbrs.get(b, ())):
            keep[b] = False
    return np.nonzero(keep)[0]


def gen_high_beta(params: Params, delta: float | None = None, seed: int = 0,
                  plane_delta: float | None = None) -> PlaneFamily:
    """Net of a ((k+1)(d-k)+beta)-dimensional subset of A(k, d+1) in R^n.

    beta = k+1 gives a full net of A(k, d+1). Otherwise write
    beta = 1 + q + f with 0 <= f < 1: planes of a net of A(k, R^d) are lifted
    to heights a on a delta grid of [0, 1/2), tilted toward e_{d+1} along q
    in-plane coordinates on a delta grid of [-1/4, 1/4) and along one more
    coordinate on an f-dimensional Cantor set, then thinned to delta-separation.
    """
    k, d, n, beta = params.k, params.d, params.n, params.beta
    delta = params.delta if delta is None else delta
    if not 1 <= beta <= k + 1:
        raise ParameterError(f"high-beta examples need beta in [1, k+1], got {beta}")
    if n < d + 1:
        raise ParameterError("need n >= d + 1")
    if not is_dyadic(delta):
        raise ParameterError("delta must be dyadic")
    pd = plane_delta or delta
    s = (k + 1) * (d - k) + beta
    cert = FrostmanCertificate(s, 4.0, list(dyadic_radii(delta)))
    if abs(beta - (k + 1)) < 1e-12:
        D, X = affine_net_arrays(k, d + 1, pd, seed)
        D, X = _embed(D, X, n)
        return PlaneFamily(D, X, delta, cert)
    lev = _levels(1.0, delta)
    if abs(beta - 1) < 1e-12:
        D, X = _stack_levels(k, d, n, lev, pd, seed)
        return PlaneFamily(D, X, delta, cert)
    extra = beta - 1
    q = int(math.floor(extra + 1e-12))
    f = extra - q
    g = np.arange(-0.25, 0.25, delta)
    axes = [g] * q
    if f > 1e-12 and q < k:
        axes.append(cantor_set_1d(f, 2 * delta) / 2 - 0.25)
    while len(axes) < k:
        axes.append(np.array([0.0]))
    W = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    D0, X0 = affine_net_arrays(k, d, pd, seed)
    D0, X0 = _embed(D0, X0, n)
    sq = (X0**2).sum(axis=1)
    Ds, Xs = [], []
    for a in lev:
        keep = sq + a * a < 0.25 * (1 - 1e-12)
        for w in W:
            B, off = _tilted(D0[keep], X0[keep], w, a, d)
            Ds.append(B)
            Xs.append(off)
    D = np.concatenate(Ds)
    X = np.concatenate(Xs)
    idx = _thin(D, X, delta)
    return PlaneFamily(D[idx], X[idx], delta, cert)


class BudgetExhausted(RuntimeError):
    def __init__(self, achieved: int, target: int, attempts: int):
        super().__init__(f"reached {achieved} of {target} planes after {attempts} attempts")
        self.achieved = achieved
        self.target = target
        self.attempts = attempts


def gen_random_frostman(params: Params, delta: float | None = None, seed: int = 0,
                        M: float = 1.0, max_attempts: int | None = None,
                        allow_partial: bool = False) -> PlaneFamily:
    """Rejection-sampled delta-separated family with member-centered ball
    counts at most ``M (r/delta)^s``; target size ceil(delta^-s).

    Candidates are Haar directions with offsets uniform in the 1/2-ball.
    Raises :class:`BudgetExhausted` after ``max_attempts`` (default
    10^6 x target) unless ``allow_partial``.
    """
    k, n, s = params.k, params.n, params.s
    delta = params.delta if delta is None else delta
    if s > (k + 1) * (n - k) + 1e-12:
        raise ParameterError(f"s = {s} exceeds dim A(k, n) = {(k + 1) * (n - k)}")
    target = int(math.ceil(delta ** (-s) - 1e-9))
    budget = 10**6 * target if max_attempts is None else int(max_attempts)
    radii = dyadic_radii(delta)
    bounds = M * (radii / delta) ** s
    dirs = np.zeros((target, k, n))
    offs = np.zeros((target, n))
    counts = np.zeros((target, len(radii)), dtype=np.int64)
    rng = np.random.default_rng(seed)
    n_acc = 0
    attempts = 0
    batch = 1024
    while n_acc < target and attempts < budget:
        m = min(batch, budget - attempts)
        cand_d = _random_dirs(k, n, m, rng)
        cand_x = _random_offsets(cand_d, rng)
        for i in range(m):
            attempts += 1
            if _kernels.frostman_try(dirs, offs, n_acc, counts, cand_d[i], cand_x[i],
                                     radii, bounds, delta):
                n_acc += 1
                if n_acc == target:
                    break
    if n_acc < target and not allow_partial:
        raise BudgetExhausted(n_acc, target, attempts)
    return PlaneFamily(dirs[:n_acc].copy(), offs[:n_acc].copy(), delta,
                       FrostmanCertificate(s, M, list(radii)))


def _random_dirs(k: int, n: int, m: int, rng) -> np.ndarray:
    g = rng.standard_normal((m, n, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    return np.ascontiguousarray(np.transpose(q, (0, 2, 1)))


def _random_offsets(D: np.ndarray, rng) -> np.ndarray:
    m, k, n = D.shape
    g = rng.standard_normal((m, n))
    g -= np.einsum("mki,mk->mi", D, np.einsum("mki,mi->mk", D, g))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    nrm[nrm == 0] = 1
    rad = 0.5 * rng.random((m, 1)) ** (1.0 / max(n - k, 1)) * (1 - 1e-12)
    return rad * g / nrm


# ---------------------------------------------------------------------------
# box counting
# ---------------------------------------------------------------------------

@dataclass
class DimensionEstimate:
    deltas: list
    covered_cells: list
    dim_estimates: list  # log(cells)/log(1/delta) per scale
    fit: float  # slope of log cells against log(1/delta)
    intercept: float = 0.0
    residual: float = 0.0

    @property
    def delta(self) -> float:
        return self.deltas[-1]

    @property
    def dim_estimate(self) -> float:
        return self.dim_estimates[-1]

    def to_csv(self) -> str:
        lines = ["delta,cells,estimate"]
        for dl, c, e in zip(self.deltas, self.covered_cells, self.dim_estimates):
            lines.append(f"{dl!r},{c},{e!r}")
        return "\n".join(lines) + "\n"


def covered_cells(family, delta: float) -> int:
    """Cells of the delta-grid over B(0,1) whose center lies within
    sqrt(n) delta / 2 of some plane."""
    fam = as_family(family)
    grid = Grid(fam.n, delta)
    if len(fam) == 0:
        return 0
    buf = np.zeros(grid.size, dtype=np.uint8)
    _kernels.rasterize(fam.dirs, fam.offsets, delta, grid.G, grid.start,
                       math.sqrt(fam.n) * delta / 2, buf, mark=True)
    return int(buf.sum(dtype=np.int64))


def box_counting_dimension(family, deltas) -> DimensionEstimate:
    deltas = sorted({float(x) for x in deltas}, reverse=True)
    if len(deltas) < 3:
        raise ParameterError("box counting needs at least 3 scales")
    cells = [covered_cells(family, dl) for dl in deltas]
    if min(cells) <= 0:
        raise ParameterError("family covers no cells")
    x = np.log(1 / np.asarray(deltas))
    y = np.log(np.asarray(cells, dtype=np.float64))
    slope, icpt = np.polyfit(x, y, 1)
    res = float(np.abs(y - (slope * x + icpt)).max())
    est = [float(a / b) for a, b in zip(y, x)]
    return DimensionEstimate(deltas, cells, est, float(slope), float(icpt), res)


# ---------------------------------------------------------------------------

@dataclass
class ExampleSpec:
    kind: str  # high_beta | low_beta | random_frostman
    params: Params
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("high_beta", "low_beta", "random_frostman"):
            raise ParameterError(f"unknown example kind {self.kind!r}")
        b = self.params.beta
        if self.kind == "high_beta" and not 1 <= b <= self.params.k + 1:
            raise ParameterError("high_beta requires beta in [1, k+1]")
        if self.kind == "low_beta" and not 0 <= b <= 1:
            raise ParameterError("low_beta requires beta in [0, 1]")

    def generate(self) -> PlaneFamily:
        fn = {"high_beta": gen_high_beta, "low_beta": gen_low_beta,
              "random_frostman": gen_random_frostman}[self.kind]
        return fn(self.params, seed=self.seed, **self.options)
