"""Subspaces, affine k-planes, the projection metrics and delta-nets.

Affine planes are written ``V = dir(V) + x_V`` with ``x_V`` perpendicular to
``dir(V)``. Members of the (restricted) affine Grassmannian A(k, n) have
``|x_V| < 1/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels

ORTHO_TOL = 1e-10
RANK_TOL = 1e-8
OFFSET_BOUND = 0.5
# Net spacings are padded by this factor so that lattice neighbours sit
# strictly outside the closed delta-ball instead of on its boundary.
NET_PAD = 1.0 + 1e-9


class ParameterError(ValueError):
    """Parameters violate a stated hypothesis."""


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def is_dyadic(x: float) -> bool:
    if not 0 < x < 1:
        return False
    e = math.log2(x)
    return abs(e - round(e)) < 1e-12


def parse_scale(text: str | float) -> float:
    """Parse ``2^-k`` (or a plain number) into a float scale."""
    if isinstance(text, (int, float)):
        return float(text)
    t = text.strip().replace(" ", "")
    if t.startswith("2^"):
        return 2.0 ** int(t[2:])
    if t.startswith("2**"):
        return 2.0 ** int(t[3:])
    return float(Fraction(t))


def parse_scale_range(text: str) -> list[float]:
    """``2^-4..2^-7`` -> [2^-4, 2^-5, 2^-6, 2^-7]; also accepts comma lists."""
    t = text.strip()
    if ".." in t:
        a, b = (parse_scale(s) for s in t.split(".."))
        ea, eb = round(math.log2(a)), round(math.log2(b))
        step = -1 if eb < ea else 1
        return [2.0 ** e for e in range(ea, eb + step, step)]
    return [parse_scale(s) for s in t.split(",") if s.strip()]


def compute_p_exact(k: int, d: int, beta) -> Fraction | None:
    """Exact rational exponent p when beta is rational; None if degenerate."""
    b = Fraction(beta)
    if not 0 <= b <= 1:
        raise ParameterError(f"beta must lie in [0, 1] for the Kakeya exponent, got {beta}")
    if not 0 < k <= d:
        raise ParameterError(f"need 0 < k <= d, got k={k}, d={d}")
    J = d - k + 2
    second = (d + b) / (d + b - Fraction(1, J))
    g = d - k + b
    if g == 0:
        return second
    return min((g + 1) / g, second)


def compute_p(k: int, d: int, beta: float) -> float:
    """Lebesgue exponent of the k-plane Kakeya maximal estimate.

    ``min{(d-k+b+1)/(d-k+b), (d+b)/(d+b-1/(d-k+2))}``; the first ratio is
    taken as +inf when ``d-k+b = 0``.
    """
    if not 0 <= beta <= 1:
        raise ParameterError(f"beta must lie in [0, 1] for the Kakeya exponent, got {beta}")
    if not 0 < k <= d:
        raise ParameterError(f"need 0 < k <= d, got k={k}, d={d}")
    J = d - k + 2
    second = (d + beta) / (d + beta - 1.0 / J)
    g = d - k + beta
    first = math.inf if g == 0 else (g + 1) / g
    return min(first, second)


@dataclass
class Params:
    k: int
    d: int
    n: int
    beta: float
    delta: float = 2.0 ** -5
    K: int = 8
    eps: float = 0.05
    s: float | None = None
    p: float | None = None
    M: float = 4.0
    m: int | None = None

    def __post_init__(self):
        if not (0 < self.k <= self.d < self.n):
            raise ParameterError(f"need 0 < k <= d < n, got k={self.k}, d={self.d}, n={self.n}")
        if not 0 <= self.beta <= self.k + 1:
            raise ParameterError(f"beta must lie in [0, k+1], got {self.beta}")
        if not is_dyadic(self.delta):
            raise ParameterError(f"delta must be a negative power of 2, got {self.delta}")
        if self.K < 2:
            raise ParameterError("K must be >= 2")
        if self.eps < 0:
            raise ParameterError("eps must be >= 0")
        if self.s is None:
            self.s = (self.k + 1) * (self.d - self.k) + self.beta
        if self.p is None and self.beta <= 1:
            self.p = compute_p(self.k, self.d, self.beta)
        if self.p is not None and self.p <= 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")
        if self.m is None:
            self.m = (self.k + 1) * (self.n - self.k)

    @property
    def pPrime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def J(self) -> int:
        return self.d - self.k + 2

    def as_dict(self) -> dict:
        return {"k": self.k, "d": self.d, "n": self.n, "beta": self.beta, "delta": self.delta,
                "K": self.K, "eps": self.eps, "s": self.s, "p": self.p, "M": self.M, "m": self.m}


# ---------------------------------------------------------------------------
# subspaces and planes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Subspace:
    """Linear subspace of R^n stored by an orthonormal row basis (dim, n)."""

    n: int
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=np.float64).reshape(-1, self.n)
        object.__setattr__(self, "basis", b)
        if b.shape[0] > self.n:
            raise ValueError("subspace dimension exceeds ambient dimension")
        if b.shape[0] and np.abs(b @ b.T - np.eye(b.shape[0])).max() > ORTHO_TOL:
            raise ValueError("basis rows are not orthonormal")

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @cached_property
    def projector(self) -> np.ndarray:
        return self.basis.T @ self.basis

    @classmethod
    def span(cls, vectors, n: int | None = None, tol: float = RANK_TOL) -> "Subspace":
        """Orthonormalized span of the rows of ``vectors``."""
        v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if n is None:
            n = v.shape[1]
        v = v.reshape(-1, n)
        if v.shape[0] == 0:
            return cls(n, np.zeros((0, n)))
        _, s, vt = np.linalg.svd(v, full_matrices=False)
        r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
        return cls(n, vt[:r])

    @classmethod
    def coordinate(cls, axes: Iterable[int], n: int) -> "Subspace":
        axes = sorted(set(axes))
        return cls(n, np.eye(n)[axes])

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(n, np.eye(n))

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(n, np.zeros((0, n)))

    @classmethod
    def random(cls, dim: int, n: int, rng: np.random.Generator) -> "Subspace":
        """Haar-distributed subspace."""
        if dim == 0:
            return cls.zero(n)
        q, r = np.linalg.qr(rng.standard_normal((n, dim)))
        q = q * np.sign(np.diag(r))[None, :]
        return cls(n, q.T)

    def complement(self) -> "Subspace":
        if self.dim == 0:
            return Subspace.full(self.n)
        _, _, vt = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(self.n, vt[self.dim:])

    def contains(self, other: "Subspace", tol: float = RANK_TOL) -> bool:
        if other.dim == 0:
            return True
        resid = other.basis - other.basis @ self.projector
        return bool(np.linalg.norm(resid, 2) <= tol)

    def __repr__(self):
        return f"Subspace(n={self.n}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class AffinePlane:
    """``dir + offset`` with ``offset`` perpendicular to ``dir``.

    ``bounded`` planes (the default) must satisfy ``|offset| < 1/2``; planes
    produced by rescaling may leave that region and are built unbounded.
    """

    dir: Subspace
    offset: np.ndarray
    bounded: bool = field(default=True, compare=False)

    def __post_init__(self):
        x = np.asarray(self.offset, dtype=np.float64).reshape(self.dir.n)
        object.__setattr__(self, "offset", x)
        if self.dir.dim and np.abs(self.dir.basis @ x).max() > ORTHO_TOL:
            raise ValueError("offset is not perpendicular to the direction")
        if self.bounded and not np.linalg.norm(x) < OFFSET_BOUND:
            raise ValueError(f"|offset| = {np.linalg.norm(x):.6g} is not < 1/2")

    @property
    def n(self) -> int:
        return self.dir.n

    @property
    def k(self) -> int:
        return self.dir.dim

    @classmethod
    def through(cls, direction: Subspace, point, bounded: bool = True) -> "AffinePlane":
        point = np.asarray(point, dtype=np.float64)
        return cls(direction, point - direction.projector @ point, bounded)

    @classmethod
    def random(cls, k: int, n: int, rng: np.random.Generator) -> "AffinePlane":
        """Haar direction, offset uniform in the open 1/2-ball of dir^perp."""
        D = Subspace.random(k, n, rng)
        C = D.complement()
        m = n - k
        if m == 0:
            return cls(D, np.zeros(n))
        g = rng.standard_normal(m)
        g /= np.linalg.norm(g)
        rad = 0.5 * rng.random() ** (1.0 / m) * (1 - 1e-12)
        return cls(D, (rad * g) @ C.basis)

    def distance_to_point(self, q) -> float:
        w = np.asarray(q, dtype=np.float64) - self.offset
        return float(np.linalg.norm(w - self.dir.projector @ w))

    def __repr__(self):
        return f"AffinePlane(n={self.n}, k={self.k}, |x|={np.linalg.norm(self.offset):.4g})"


@dataclass(frozen=True)
class MetricBall:
    center: Subspace | AffinePlane
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def projection_matrix(W: Subspace) -> np.ndarray:
    return W.basis.T @ W.basis


def metric_d_linear(V1: Subspace, V2: Subspace) -> float:
    if V1.n != V2.n:
        raise ValueError("ambient dimensions differ")
    return float(np.linalg.norm(V1.projector - V2.projector, 2))


def metric_rho_linear(V1: Subspace, V2: Subspace) -> float:
    """Smallest rho with ``B(0,1) ∩ V1 ⊂ N_rho(V2)``, i.e. ``||(I - P2) P1||``."""
    if V1.n != V2.n:
        raise ValueError("ambient dimensions differ")
    if V1.dim == 0:
        return 0.0
    return float(np.linalg.norm(V1.basis - V1.basis @ V2.projector, 2))


def metric_d_affine(V1: AffinePlane, V2: AffinePlane) -> float:
    if V1.n != V2.n or V1.k != V2.k:
        raise ValueError("planes must share (k, n)")
    return metric_d_linear(V1.dir, V2.dir) + float(np.linalg.norm(V1.offset - V2.offset))


def sphere_quadratic_max(M: np.ndarray, c: np.ndarray, R: float, tol: float = 1e-12):
    """Maximize ``|M t + c|`` over ``|t| <= R``.

    The objective is convex so the maximum sits on the sphere ``|t| = R``.
    Stationary points there solve ``(lam I - M^T M) t = M^T c`` with
    ``lam >= lambda_max(M^T M)``; ``lam`` is a root of the secular
    equation ``1/|t(lam)| = 1/R``, found by Brent's method. Returns ``(value, t)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64)
    kdim = M.shape[1]
    if kdim == 0 or R == 0:
        return float(np.linalg.norm(c)), np.zeros(kdim)
    A = M.T @ M
    g = M.T @ c
    lam, Q = np.linalg.eigh(A)
    lmax = lam[-1]
    gq = Q.T @ g
    gnorm = np.linalg.norm(g)
    scale = max(1.0, abs(lmax))
    if gnorm <= 1e-14 * scale:
        t = R * Q[:, -1]
        return float(np.linalg.norm(M @ t + c)), t
    top = lam >= lmax - 1e-12 * scale
    if np.all(np.abs(gq[top]) <= 1e-12 * gnorm):
        # hard case: the secular function stays bounded at lmax
        w = np.where(top, 0.0, gq / np.where(top, 1.0, lmax - lam))
        t0 = Q @ w
        r0 = np.linalg.norm(t0)
        if r0 <= R:
            tau = math.sqrt(max(R * R - r0 * r0, 0.0))
            best = None
            for sgn in (1.0, -1.0):
                t = t0 + sgn * tau * Q[:, -1]
                v = np.linalg.norm(M @ t + c)
                if best is None or v > best[0]:
                    best = (float(v), t)
            return best
    hi = lmax + gnorm / R

    def phi(mu):
        # 1/|t(mu)| - 1/R: increasing, -1/R at lmax, >= 0 at hi
        with np.errstate(divide="ignore"):
            tn2 = float(((gq / (mu - lam)) ** 2).sum())
        return 1.0 / math.sqrt(tn2) - 1.0 / R if tn2 > 0 else -1.0 / R

    mu = hi if phi(hi) <= 0 else brentq(phi, lmax, hi, xtol=tol * max(1.0, abs(hi)), rtol=1e-15)
    if mu <= lmax:
        mu = np.nextafter(lmax, np.inf)
    t = Q @ (gq / (mu - lam))
    t *= R / np.linalg.norm(t)
    return float(np.linalg.norm(M @ t + c)), t


def max_distance_on_ball(V1: AffinePlane, V2: AffinePlane, radius: float = 1.0) -> float:
    """``max_{p in B(0, radius) ∩ V1} dist(p, V2)``."""
    x1 = V1.offset
    r2 = radius * radius - float(x1 @ x1)
    if r2 < 0:
        raise ValueError("the plane misses the ball")
    R = math.sqrt(r2)
    Q2 = np.eye(V1.n) - V2.dir.projector
    M = Q2 @ V1.dir.basis.T
    c = Q2 @ (x1 - V2.offset)
    return sphere_quadratic_max(M, c, R)[0]


def metric_rho_affine(V1: AffinePlane, V2: AffinePlane) -> float:
    """Smallest rho with ``B(0,1) ∩ V1 ⊂ N_rho(V2)``."""
    if V1.n != V2.n or V1.k != V2.k:
        raise ValueError("planes must share (k, n)")
    return max_distance_on_ball(V1, V2, 1.0)


# ---------------------------------------------------------------------------
# nets
# ---------------------------------------------------------------------------

def _haar_pool(k: int, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    if k == 1:
        v = rng.standard_normal((size, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v[:, None, :]
    g = rng.standard_normal((size, n, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    return np.ascontiguousarray(np.transpose(q, (0, 2, 1)))


def farthest_point_net(pool: np.ndarray, delta: float) -> np.ndarray:
    """Indices of a delta-separated subset of ``pool`` covering it within delta.

    Farthest-point insertion: repeatedly add the pool element farthest from
    the current net while that distance is at least delta.
    """
    chosen = [0]
    mind = _kernels.subspace_dists(pool, pool[0])
    while True:
        j = int(np.argmax(mind))
        if mind[j] < delta:
            break
        chosen.append(j)
        np.minimum(mind, _kernels.subspace_dists(pool, pool[j]), out=mind)
    return np.array(chosen, dtype=np.int64)


def _angular_net(delta: float) -> np.ndarray:
    # lines in R^2 at angle spacing pi/N have distance sin(pi/N) >= delta
    N = max(1, int(math.floor(math.pi / math.asin(min(1.0, delta * NET_PAD)))))
    if N > 1 and math.sin(math.pi / N) < delta:
        N -= 1
    th = np.arange(N) * math.pi / N
    return np.stack([np.cos(th), np.sin(th)], axis=1)[:, None, :]


def grassmann_net_bases(k: int, n: int, delta: float, seed: int = 0,
                        pool_size: int | None = None, max_pool: int = 400_000,
                        repair_rounds: int = 4) -> np.ndarray:
    """Array form (N, k, n) of :func:`delta_net_grassmann`."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if k == 0:
        return np.zeros((1, 0, n))
    if k == n:
        return np.eye(n)[None]
    if 2 * k > n:
        # G(k, n) and G(n-k, n) are isometric through orthogonal complements
        comp = grassmann_net_bases(n - k, n, delta, seed, pool_size, max_pool, repair_rounds)
        return np.stack([Subspace(n, b).complement().basis for b in comp])
    if (k, n) == (1, 2):
        return _angular_net(delta)
    dim = k * (n - k)
    if pool_size is None:
        pool_size = int(min(max_pool, math.ceil(200 * delta ** (-dim))))
    rng = np.random.default_rng(seed)
    pool = _haar_pool(k, n, pool_size, rng)
    net = pool[farthest_point_net(pool, delta * NET_PAD)]
    return _repair_cover(net, delta, rng, pool_size, repair_rounds)


def _repair_cover(net: np.ndarray, delta: float, rng, probes: int, rounds: int) -> np.ndarray:
    """Add fresh random probes lying farther than delta from the net until a
    whole round of probes is covered (separation is preserved)."""
    N, k, n = net.shape
    for _ in range(rounds):
        pool = _haar_pool(k, n, probes, rng)
        mind = np.full(probes, np.inf)
        for b in net:
            np.minimum(mind, _kernels.subspace_dists(pool, b), out=mind)
        if mind.max() <= delta:
            break
        added = []
        while True:
            j = int(np.argmax(mind))
            if mind[j] <= delta:
                break
            added.append(pool[j])
            np.minimum(mind, _kernels.subspace_dists(pool, pool[j]), out=mind)
        net = np.concatenate([net, np.asarray(added)])
    return net


def delta_net_grassmann(k: int, n: int, delta: float, seed: int = 0,
                        pool_size: int | None = None) -> list[Subspace]:
    """Maximal delta-separated subset of G(k, n) in the projection metric."""
    return [Subspace(n, b) for b in grassmann_net_bases(k, n, delta, seed, pool_size)]


def offset_grid(m: int, delta: float) -> np.ndarray:
    """Centered cubic grid of spacing delta inside the open 1/2-ball of R^m."""
    if m == 0:
        return np.zeros((1, 0))
    h = delta * NET_PAD
    j = np.arange(-math.ceil(0.5 / h) - 1, math.ceil(0.5 / h) + 1)
    pts1 = (j + 0.5) * h
    pts1 = pts1[np.abs(pts1) < 0.5]
    grid = np.stack(np.meshgrid(*([pts1] * m), indexing="ij"), axis=-1).reshape(-1, m)
    grid = grid[np.linalg.norm(grid, axis=1) < OFFSET_BOUND]
    # coarse scales: the half-offset lattice misses the ball, keep the origin
    return grid if len(grid) else np.zeros((1, m))


def complement_bases(dirs: np.ndarray) -> np.ndarray:
    """Orthonormal bases (N, n-k, n) of the orthogonal complements."""
    N, k, n = dirs.shape
    if k == 0:
        return np.broadcast_to(np.eye(n), (N, n, n)).copy()
    _, _, vt = np.linalg.svd(dirs, full_matrices=True)
    return np.ascontiguousarray(vt[:, k:, :])


def affine_net_arrays(k: int, n: int, delta: float, seed: int = 0, dir_delta: float | None = None):
    """Product net (dirs, offsets) of A(k, n): direction net x offset grid."""
    dirs = grassmann_net_bases(k, n, dir_delta or delta, seed)
    comps = complement_bases(dirs)
    grid = offset_grid(n - k, delta)
    D = np.repeat(dirs, len(grid), axis=0)
    X = np.einsum("gm,dmn->dgn", grid, comps).reshape(-1, n)
    return np.ascontiguousarray(D), np.ascontiguousarray(X)


def delta_net_affine(k: int, n: int, delta: float, seed: int = 0) -> list[AffinePlane]:
    """delta-separated net of A(k, n): every direction of a Grassmannian net
    paired with a centered offset grid of its orthogonal complement."""
    D, X = affine_net_arrays(k, n, delta, seed)
    return [AffinePlane(Subspace(n, b), x) for b, x in zip(D, X)]


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def format_plane(V: AffinePlane | Subspace) -> str:
    if isinstance(V, Subspace):
        vals = list(V.basis.ravel())
        return " ".join([str(V.n), str(V.dim)] + [repr(float(v)) for v in vals])
    vals = list(V.dir.basis.ravel()) + list(V.offset)
    return " ".join([str(V.n), str(V.k)] + [repr(float(v)) for v in vals])


def parse_plane(line: str, bounded: bool = True) -> AffinePlane | Subspace:
    tok = line.split()
    n, k = int(tok[0]), int(tok[1])
    vals = np.array([float(t) for t in tok[2:]])
    if vals.size == k * n:
        return Subspace(n, vals.reshape(k, n))
    if vals.size != k * n + n:
        raise ValueError(f"expected {k * n} or {k * n + n} numbers, got {vals.size}")
    return AffinePlane(Subspace(n, vals[: k * n].reshape(k, n)), vals[k * n:], bounded)


def read_planes(lines: Iterable[str], bounded: bool = True) -> list:
    out = []
    for line in lines:
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        out.append(parse_plane(s, bounded))
    return out


def write_planes(planes: Sequence, header: str | None = None) -> str:
    rows = [f"# {h}" for h in (header or "").splitlines() if header]
    rows += [format_plane(V) for V in planes]
    return "\n".join(rows) + "\n"
