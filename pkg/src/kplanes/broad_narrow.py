"""Direction caps, the narrow/broad dichotomy and the slab rescaling map."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .brascamp_lieb import BLInstance
from .grassmann import AffinePlane, MetricBall, ParameterError, Subspace, sphere_quadratic_max
from .spacing import PlaneFamily, PreconditionError, as_family

NARROW_C = 100.0
AUDIT_C = 1e4


@dataclass
class CapCover:
    scale: float
    centers: np.ndarray  # (C, k, n)
    assignments: np.ndarray  # plane index -> cap index

    @property
    def caps(self) -> list:
        n = self.centers.shape[2]
        return [MetricBall(Subspace(n, c), self.scale) for c in self.centers]

    def __len__(self) -> int:
        return self.centers.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=len(self)).astype(np.int64)


def _as_bases(centers) -> np.ndarray:
    if isinstance(centers, np.ndarray):
        return np.ascontiguousarray(centers, dtype=np.float64)
    return np.stack([c.basis if isinstance(c, Subspace) else np.asarray(c) for c in centers])


def cover_directions(family, scale: float) -> CapCover:
    """Greedy cover of the occurring directions by caps of radius ``scale``.

    Planes are visited in order; a direction outside every existing cap opens
    a new cap centered at it. Each plane goes to the lowest-index cap holding
    its direction.
    """
    if not 0 < scale < 1:
        raise ParameterError(f"scale must lie in (0, 1), got {scale}")
    fam = as_family(family)
    N, k, n = fam.dirs.shape
    if N == 0:
        return CapCover(scale, np.zeros((0, k, n)), np.zeros(0, dtype=np.int64))
    keys = np.round(np.einsum("nki,nkj->nij", fam.dirs, fam.dirs).reshape(N, -1), 9)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first)
    rank_of = np.empty_like(order)
    rank_of[order] = np.arange(len(order))
    udirs = fam.dirs[first[order]]
    centers: list = []
    cap_of = np.empty(len(udirs), dtype=np.int64)
    for i, b in enumerate(udirs):
        if centers:
            dd = _kernels.subspace_dists(np.asarray(centers), b)
            hit = np.nonzero(dd <= scale + 1e-12)[0]
            if hit.size:
                cap_of[i] = hit[0]
                continue
        centers.append(b)
        cap_of[i] = len(centers) - 1
    assign = cap_of[rank_of[inverse]]
    return CapCover(scale, np.asarray(centers), assign)


@dataclass
class CapSelection:
    significant: list  # caps over the count threshold
    selected: list  # separated, comparable-count subfamily
    count_class: int  # dyadic class: counts in [2^c, 2^(c+1))
    threshold: float
    separation: float


def significant_caps(cover: CapCover, family=None, K: float = 8, n: int | None = None,
                     exponent: float | None = None, separation: float | None = None) -> CapSelection:
    """Caps holding at least ``#family / K^exponent`` planes (exponent n^4 by
    default), then pigeonholed to one dyadic count class and one colour class
    of caps ``separation``-apart (100 x cover scale by default).

    The dyadic class maximizing (#caps in class) x 2^class is used; inside it,
    caps are greedily coloured so each colour is separated and the colour with
    the largest total count is returned.
    """
    counts = cover.counts()
    N = int(counts.sum()) if family is None else len(as_family(family))
    if n is None:
        n = cover.centers.shape[2] if len(cover) else 1
    e = float(n) ** 4 if exponent is None else float(exponent)
    logt = e * math.log(K)
    threshold = N * math.exp(-logt) if logt < 700 else 0.0
    sep = 100 * cover.scale if separation is None else separation
    sig = [int(i) for i in np.nonzero((counts >= threshold) & (counts > 0))[0]]
    if not sig:
        return CapSelection([], [], -1, threshold, sep)
    cls = {i: int(math.floor(math.log2(counts[i]))) for i in sig}
    score: dict = {}
    for i in sig:
        score[cls[i]] = score.get(cls[i], 0) + 1
    best = max(score, key=lambda c: (score[c] * 2.0**c, c))
    members = [i for i in sig if cls[i] == best]
    colour: dict = {}
    for i in members:
        used = {colour[j] for j in colour
                if _kernels.subspace_dists(cover.centers[j:j + 1], cover.centers[i])[0] <= sep}
        c = 0
        while c in used:
            c += 1
        colour[i] = c
    totals: dict = {}
    for i, c in colour.items():
        totals[c] = totals.get(c, 0) + int(counts[i])
    pick = max(totals, key=lambda c: (totals[c], -c))
    selected = [i for i in members if colour[i] == pick]
    return CapSelection(sig, selected, best, threshold, sep)


def dist_to_grassmannian_of(U: np.ndarray, Pi: np.ndarray) -> float:
    """d(U, pi_Pi U) with U, Pi given by orthonormal row bases."""
    k = U.shape[0]
    M = (U @ Pi.T) @ Pi  # rows of U projected into Pi
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    if k == 0:
        return 0.0
    if s[-1] < 1e-12:
        return 1.0
    return float(_kernels.subspace_dists(U[None], vt[:k])[0])


def _top_eigvecs(A: np.ndarray, m: int) -> np.ndarray:
    w, v = np.linalg.eigh((A + A.T) / 2)
    return v[:, ::-1][:, :m].T


def _complete(base: np.ndarray, centers: np.ndarray, d: int) -> np.ndarray:
    """Extend an orthonormal row basis to dimension d along the dominant
    directions of the centers' projector average, restricted to base^perp."""
    n = centers.shape[2]
    P = base.T @ base if base.size else np.zeros((n, n))
    Q = np.eye(n) - P
    avg = np.einsum("cki,ckj->ij", centers, centers) / max(len(centers), 1)
    extra = d - base.shape[0]
    if extra <= 0:
        return base[:d]
    # tiny identity term fills the space when the average is degenerate
    add = _top_eigvecs(Q @ (avg + 1e-9 * np.eye(n)) @ Q, extra)
    out = np.concatenate([base, add]) if base.size else add
    q, _ = np.linalg.qr(out.T)
    return q.T[:d]


def narrow_test(centers, d: int, threshold: float, fraction: float = 0.5,
                refine: int = 5, max_seeds: int = 64) -> Subspace | None:
    """A d-plane Pi with at least ``fraction`` of the cap centers U satisfying
    d(U, pi_Pi U) <= threshold, or None when the search finds none.

    Candidates: the dominant d-space of all centers, each seed center completed
    along dominant directions, and coordinate d-planes; each candidate is
    refined by re-fitting to the centers it already captures.
    """
    C = _as_bases(centers)
    if len(C) == 0:
        return None
    Nc, k, n = C.shape
    if not k <= d < n + 1:
        raise ParameterError("need k <= d <= n")
    need = math.ceil(fraction * Nc - 1e-12)
    cands = [_complete(np.zeros((0, n)), C, d)]
    step = max(1, Nc // max_seeds)
    for i in range(0, Nc, step):
        cands.append(_complete(C[i], C, d))
    for axes in itertools.combinations(range(n), d):
        cands.append(np.eye(n)[list(axes)])

    def score(Pi):
        dd = np.array([dist_to_grassmannian_of(U, Pi) for U in C])
        return dd <= threshold + 1e-12

    best, best_hits = None, -1
    for Pi in cands:
        for _ in range(refine + 1):
            ok = score(Pi)
            hits = int(ok.sum())
            if hits > best_hits:
                best, best_hits = Pi, hits
            if hits >= need or hits == 0:
                break
            Pi_new = _complete(np.zeros((0, n)), C[ok], d)
            if np.allclose(Pi_new.T @ Pi_new, Pi.T @ Pi, atol=1e-12):
                break
            Pi = Pi_new
        if best_hits >= need:
            break
    if best_hits >= need and best_hits > 0:
        return Subspace(n, best)
    return None


@dataclass
class TransverseTuple:
    caps: list  # J cap indices, first is the seed
    witnesses: np.ndarray  # (J, n): v_k .. v_{d+1}
    volumes: list  # Vol_j for j = k .. d+1
    basis_vectors: np.ndarray  # v_1 .. v_{d+1}
    K: float = 8

    def audit(self) -> bool:
        k = self.basis_vectors.shape[0] - len(self.caps) + 1
        ok = True
        for off, vol in enumerate(self.volumes):
            j = k + off
            V = self.basis_vectors[:j]
            real = math.sqrt(max(np.linalg.det(V @ V.T), 0.0))
            ok &= real > self.K ** (-j) and abs(real - vol) <= 1e-8
        return bool(ok)


@dataclass
class NarrowWitness:
    Pi: Subspace
    stuck_step: int
    distances: np.ndarray
    K: float = 8

    def audit(self, tol_const: float = AUDIT_C) -> bool:
        return bool((self.distances <= tol_const / self.K).all())


def greedy_transverse_tuple(centers, K: float, k: int, d: int, seed_index: int = 0):
    """Grow v_1..v_{d+1} with each new v_j drawn from some cap center and
    farther than 1/K from span(v_1..v_{j-1}).

    Success yields a :class:`TransverseTuple`; getting stuck at step j yields
    a :class:`NarrowWitness` whose plane contains span(v_1..v_{j-1}).
    """
    if K < 2:
        raise ParameterError("K must be >= 2")
    C = _as_bases(centers)
    Nc, kk, n = C.shape
    if kk != k or not k <= d < n:
        raise ParameterError("need centers in G(k, n) and k <= d < n")
    V = [row for row in C[seed_index]]
    caps = [seed_index]
    vols = [1.0]
    vol = 1.0
    for j in range(k + 1, d + 2):
        B = np.linalg.qr(np.asarray(V).T)[0].T  # orthonormal basis of span(v_1..v_{j-1})
        Q = np.eye(n) - B.T @ B
        best, best_s, best_v = -1, -1.0, None
        for i in range(Nc):
            M = Q @ C[i].T  # (n, k)
            _, s, vt = np.linalg.svd(M, full_matrices=False)
            if s[0] > best_s + 1e-15:
                best, best_s, best_v = i, s[0], C[i].T @ vt[0]
        if best_s <= 1.0 / K:
            Pi = _complete(B, C, d)
            dist = np.array([dist_to_grassmannian_of(U, Pi) for U in C])
            return NarrowWitness(Subspace(n, Pi), j, dist, K)
        v = best_v / np.linalg.norm(best_v)
        vol *= float(np.linalg.norm(Q @ v))
        V.append(v)
        caps.append(best)
        vols.append(vol)
    basis = np.asarray(V)
    return TransverseTuple(caps, basis[k - 1:], vols, basis, K)


def tuple_to_bl_instance(tt: TransverseTuple, centers, p: float) -> BLInstance:
    """W_j = U_j^perp for the caps of a transverse tuple."""
    C = _as_bases(centers)
    n = C.shape[2]
    W = [Subspace(n, C[i]).complement() for i in tt.caps]
    return BLInstance(n, W, p)


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------

@dataclass
class RescalingMap:
    """x -> (I + (K-1) P_S)(x - c) with S the short directions of the slab."""

    tau_center: np.ndarray
    short_directions: Subspace
    factor: float

    def __post_init__(self):
        self.tau_center = np.asarray(self.tau_center, dtype=np.float64)
        if self.factor <= 1:
            raise ParameterError("rescaling factor K must exceed 1")

    @property
    def matrix(self) -> np.ndarray:
        n = self.short_directions.n
        return np.eye(n) + (self.factor - 1) * self.short_directions.projector

    @property
    def inverse_matrix(self) -> np.ndarray:
        n = self.short_directions.n
        return np.eye(n) + (1.0 / self.factor - 1) * self.short_directions.projector

    def apply(self, x):
        return (np.asarray(x) - self.tau_center) @ self.matrix.T

    def invert(self, y):
        return np.asarray(y) @ self.inverse_matrix.T + self.tau_center

    def excursion(self, plane: AffinePlane) -> float:
        """max over points x of plane ∩ B(0,1) of |P_S (x - c)|."""
        B = plane.dir.basis
        Ps = self.short_directions.projector
        R2 = 1.0 - float(plane.offset @ plane.offset)
        if R2 < 0:
            return 0.0
        M = Ps @ B.T
        c = Ps @ (plane.offset - self.tau_center)
        if B.shape[0] == 0:
            return float(np.linalg.norm(c))
        return float(sphere_quadratic_max(M, c, math.sqrt(R2))[0])

    def contains_slab(self, plane: AffinePlane, delta: float) -> bool:
        return self.excursion(plane) + delta <= 1.0 / self.factor + 1e-12


def _image_plane(A: np.ndarray, dirb: np.ndarray, point: np.ndarray) -> AffinePlane:
    n = A.shape[0]
    if dirb.shape[0]:
        D = Subspace.span(dirb @ A.T, n)
    else:
        D = Subspace.zero(n)
    return AffinePlane.through(D, point, bounded=False)


def rescale_tau(phi: RescalingMap, plane: AffinePlane, delta: float) -> AffinePlane:
    """Image of a plane whose delta-slab lies in tau; its slab thickness
    becomes delta K."""
    if not phi.contains_slab(plane, delta):
        raise PreconditionError(
            f"slab leaves tau: excursion {phi.excursion(plane) + delta:.4g} > 1/K = {1 / phi.factor:.4g}")
    return _image_plane(phi.matrix, plane.dir.basis, phi.apply(plane.offset))


def unrescale_tau(phi: RescalingMap, plane: AffinePlane) -> AffinePlane:
    pt = phi.invert(plane.offset)
    V = _image_plane(phi.inverse_matrix, plane.dir.basis, pt)
    return AffinePlane(V.dir, V.offset, bounded=bool(np.linalg.norm(V.offset) < 0.5))


def rescale_family(phi: RescalingMap, family, delta: float) -> PlaneFamily:
    fam = as_family(family, delta)
    out = [rescale_tau(phi, fam.plane(i), delta) for i in range(len(fam))]
    res = PlaneFamily.from_planes(out, delta * phi.factor, fam.k, fam.n)
    res.bounded = False
    return res


# ---------------------------------------------------------------------------
# one decomposition level
# ---------------------------------------------------------------------------

@dataclass
class DecompositionReport:
    caps: int
    significant: list
    selected: list
    classification: str
    witness: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"caps": self.caps, "significant": self.significant,
                           "selected": self.selected, "classification": self.classification,
                           "witness": self.witness}, sort_keys=True)


def decompose(family, K: float, d: int, scale: float | None = None,
              exponent: float | None = None, separation: float | None = None,
              threshold: float | None = None) -> DecompositionReport:
    """Cover, select significant caps, then classify narrow or broad."""
    fam = as_family(family)
    n, k = fam.n, fam.k
    scale = K ** (-n) if scale is None else scale
    cover = cover_directions(fam, scale)
    sel = significant_caps(cover, fam, K, n, exponent, separation)
    cent = cover.centers[sel.selected]
    thr = NARROW_C / K if threshold is None else threshold
    if len(cent) == 0:
        return DecompositionReport(len(cover), sel.significant, sel.selected, "empty", {})
    Pi = narrow_test(cent, d, thr)
    if Pi is not None:
        return DecompositionReport(len(cover), sel.significant, sel.selected, "narrow",
                                   {"Pi": Pi.basis.tolist(), "threshold": thr})
    res = greedy_transverse_tuple(cent, K, k, d)
    if isinstance(res, TransverseTuple):
        return DecompositionReport(len(cover), sel.significant, sel.selected, "broad",
                                   {"caps": [sel.selected[i] for i in res.caps],
                                    "volumes": res.volumes,
                                    "vectors": res.witnesses.tolist()})
    return DecompositionReport(len(cover), sel.significant, sel.selected, "narrow",
                               {"Pi": res.Pi.basis.tolist(), "stuck_step": res.stuck_step,
                                "threshold": AUDIT_C / K})
