"""Plane families, Frostman-type ball-count audits and the partition lemma.

A family obeys the spacing condition with exponent ``s`` and slack ``M`` when
every metric ball of radius ``r`` in [delta, 1] holds at most
``M (r/delta)^s`` members.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .grassmann import (
    AffinePlane,
    ParameterError,
    Subspace,
    complement_bases,
    is_dyadic,
)


class PreconditionError(ValueError):
    """Input violates an operation's stated precondition."""


class ChartError(ValueError):
    """Family does not fit in a single coordinate chart of A(k, n)."""


@dataclass
class FrostmanCertificate:
    s: float
    slack: float
    audited_scales: list[float]


@dataclass
class PlaneFamily:
    """Finite family of affine k-planes kept as arrays.

    ``dirs`` has shape (N, k, n) with orthonormal rows per plane and
    ``offsets`` shape (N, n) with each offset perpendicular to its plane.
    """

    dirs: np.ndarray
    offsets: np.ndarray
    delta: float
    certificate: FrostmanCertificate | None = None
    bounded: bool = True

    def __post_init__(self):
        self.dirs = np.ascontiguousarray(self.dirs, dtype=np.float64)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.float64)
        if self.dirs.ndim != 3 or self.offsets.shape != (self.dirs.shape[0], self.dirs.shape[2]):
            raise ValueError("dirs must be (N, k, n) and offsets (N, n)")

    @classmethod
    def from_planes(cls, planes: Sequence[AffinePlane], delta: float, k: int | None = None,
                    n: int | None = None) -> "PlaneFamily":
        planes = list(planes)
        if not planes:
            if k is None or n is None:
                raise ValueError("empty family needs explicit k and n")
            return cls(np.zeros((0, k, n)), np.zeros((0, n)), delta)
        ks = {V.k for V in planes}
        ns = {V.n for V in planes}
        if len(ks) != 1 or len(ns) != 1:
            raise ValueError("all planes must share (k, n)")
        return cls(np.stack([V.dir.basis for V in planes]),
                   np.stack([V.offset for V in planes]), delta,
                   bounded=all(V.bounded for V in planes))

    def __len__(self) -> int:
        return self.dirs.shape[0]

    @property
    def k(self) -> int:
        return self.dirs.shape[1]

    @property
    def n(self) -> int:
        return self.dirs.shape[2]

    def plane(self, i: int) -> AffinePlane:
        return AffinePlane(Subspace(self.n, self.dirs[i]), self.offsets[i], self.bounded)

    @property
    def planes(self) -> list[AffinePlane]:
        return [self.plane(i) for i in range(len(self))]

    def subset(self, idx) -> "PlaneFamily":
        idx = np.asarray(idx, dtype=np.int64)
        return PlaneFamily(self.dirs[idx], self.offsets[idx], self.delta, None, self.bounded)

    def concat(self, other: "PlaneFamily") -> "PlaneFamily":
        return PlaneFamily(np.concatenate([self.dirs, other.dirs]),
                           np.concatenate([self.offsets, other.offsets]),
                           min(self.delta, other.delta), None, self.bounded and other.bounded)


def as_family(obj, delta: float | None = None, k: int | None = None,
              n: int | None = None) -> PlaneFamily:
    if isinstance(obj, PlaneFamily):
        return obj
    return PlaneFamily.from_planes(obj, delta if delta is not None else 1.0, k, n)


def dyadic_radii(delta: float) -> np.ndarray:
    """Dyadic radii ``delta * 2^j`` in [delta, 1]."""
    out = []
    r = delta
    while r <= 1.0 + 1e-12:
        out.append(r)
        r *= 2
    return np.array(out)


# ---------------------------------------------------------------------------
# spacing audit
# ---------------------------------------------------------------------------

@dataclass
class SpacingReport:
    passed: bool
    worst: tuple  # (r, center_index, count, bound)
    min_constant: float
    exhaustive: bool
    centers_audited: int
    rows: list = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        lines = ["r,center_index,count,bound,margin"]
        for r, c, cnt, b in self.rows:
            lines.append(f"{r!r},{c},{cnt},{b!r},{b - cnt!r}")
        return "\n".join(lines) + "\n"


def spacing_check(family, s: float, M: float, delta: float | None = None,
                  max_exhaustive: int = 20_000, sample_centers: int = 256,
                  seed: int = 0, keep_rows: bool = False) -> SpacingReport:
    """Audit ``#(family ∩ Q_r(V)) <= M (r/delta)^s`` for member centers V.

    All dyadic radii in [delta, 1] are checked. Families up to
    ``max_exhaustive`` members are audited at every member; larger ones at
    ``sample_centers`` members drawn with ``seed`` (``exhaustive`` is then
    False in the report).
    """
    fam = as_family(family, delta)
    delta = fam.delta if delta is None else delta
    N = len(fam)
    radii = dyadic_radii(delta)
    bounds = M * (radii / delta) ** s
    if N == 0:
        return SpacingReport(True, (delta, -1, 0, float(bounds[0])), 0.0, True, 0)
    exhaustive = N <= max_exhaustive
    if exhaustive:
        centers = np.arange(N)
    else:
        rng = np.random.default_rng(seed)
        centers = np.sort(rng.choice(N, size=min(sample_centers, N), replace=False))
    # balls whose bound already exceeds the family size cannot fail
    live = bounds < N
    worst = None
    min_const = 0.0
    rows = []
    norm = (radii / delta) ** s
    for c in centers:
        if live.any():
            counts = _kernels.ball_counts(fam.dirs, fam.offsets, int(c), radii[live])
            full = np.full(len(radii), N, dtype=np.int64)
            full[live] = counts
        else:
            full = np.full(len(radii), N, dtype=np.int64)
            full[0] = 1  # self only is a lower bound; the scale is trivially fine
        for j in np.nonzero(live)[0]:
            cnt = int(full[j])
            const = cnt / norm[j]
            if const > min_const:
                min_const = const
            margin = bounds[j] - cnt
            if worst is None or margin < worst[0]:
                worst = (margin, float(radii[j]), int(c), cnt, float(bounds[j]))
            if keep_rows:
                rows.append((float(radii[j]), int(c), cnt, float(bounds[j])))
    if worst is None:
        worst = (bounds[-1] - N, float(radii[-1]), int(centers[0]), N, float(bounds[-1]))
        min_const = N / norm[-1]
    passed = worst[0] >= 0
    return SpacingReport(bool(passed), worst[1:], float(min_const), exhaustive, len(centers), rows)


# ---------------------------------------------------------------------------
# point sets in [0,1]^m
# ---------------------------------------------------------------------------

def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    return pts


def point_ball_counts(points: np.ndarray, radii) -> np.ndarray:
    """(len(radii), N) counts of points in closed balls around each point."""
    pts = _as_points(points)
    if len(pts) == 0:
        return np.zeros((len(radii), 0), dtype=np.int64)
    tree = cKDTree(pts)
    return np.stack([tree.query_ball_point(pts, r * (1 + 1e-12) + 1e-15, return_length=True)
                     for r in radii]).astype(np.int64)


def audit_points(points, delta: float, s: float, M: float = 1.0):
    """Exhaustive member-centered dyadic-ball audit of a point set.

    Returns ``(passed, min_constant, rows)`` with rows
    ``(r, center_index, count, bound)`` for every ball that was checked.
    """
    pts = _as_points(points)
    radii = dyadic_radii(delta)
    counts = point_ball_counts(pts, radii)
    norm = (radii / delta) ** s
    if counts.size == 0:
        return True, 0.0, []
    const = (counts / norm[:, None]).max()
    rows = [(float(radii[j]), int(i), int(counts[j, i]), float(M * norm[j]))
            for j in range(len(radii)) for i in range(counts.shape[1])]
    return bool((counts <= M * norm[:, None] + 1e-9).all()), float(const), rows


@dataclass(frozen=True)
class DyadicCubeIndex:
    level: int
    coords: tuple

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @classmethod
    def of(cls, point, level: int) -> "DyadicCubeIndex":
        side = 2 ** level
        c = np.minimum(np.floor(np.asarray(point) * side), side - 1).astype(np.int64)
        return cls(level, tuple(int(v) for v in c))


def _cube_keys(points: np.ndarray, level: int) -> np.ndarray:
    side = 2 ** level
    c = np.minimum(np.floor(points * side), side - 1).astype(np.int64)
    c = np.maximum(c, 0)
    # mixed-radix key; side <= 2^30 in practice
    key = np.zeros(len(points), dtype=np.int64)
    for a in range(points.shape[1]):
        key = key * side + c[:, a]
    return key


@dataclass
class PartitionTrace:
    """Construction record: per stage-1 class, per dyadic level, clique labels."""

    stage1_classes: list
    levels: list  # [(class_id, r, labels array over class members)]
    clique_counts: list  # [(class_id, r, max cliques in a cube, bound)]


def frostman_partition(points, delta: float, s: float, M: float, debug: bool = True,
                       return_trace: bool = False):
    """Split a point set with ball counts ``<= M (r/delta)^s`` into parts whose
    counts are ``<= (r/delta)^s``.

    Stage one greedily colours the graph joining points closer than
    ``2 * 10^(m/s) delta`` so each class has at most one point in every ball
    of radius up to ``10^(m/s) delta``. Stage two runs over dyadic scales r:
    inside each dyadic cube of side r, cliques of order at most
    ``10^(3m) M / 2`` are merged pairwise (canonical order) until at most one
    such small clique remains. Each final clique is spread one point per part.

    Returns a list of index lists (and a :class:`PartitionTrace` when asked).
    """
    pts = _as_points(points)
    if not is_dyadic(delta):
        raise ParameterError(f"delta must be a negative power of 2, got {delta}")
    N, m = pts.shape
    if N == 0:
        return ([], PartitionTrace([], [], [])) if return_trace else []
    if pts.min() < 0 or pts.max() > 1:
        raise PreconditionError("points must lie in [0, 1]^m")
    if debug:
        ok, const, _ = audit_points(pts, delta, s, M)
        if not ok:
            raise PreconditionError(
                f"input violates #(A ∩ Q_r) <= M (r/delta)^s: needs M >= {const:.4g}, got {M}")

    r_s = 10 ** (m / s) * delta
    cap = 10 ** (3 * m) * M
    half = cap / 2

    # stage one: separation colouring
    tree = cKDTree(pts)
    pairs = tree.query_pairs(2 * r_s * (1 + 1e-12), output_type="ndarray")
    nbrs = [[] for _ in range(N)]
    for a, b in pairs:
        nbrs[a].append(b)
        nbrs[b].append(a)
    color = np.full(N, -1, dtype=np.int64)
    for i in range(N):
        used = {color[j] for j in nbrs[i] if color[j] >= 0}
        c = 0
        while c in used:
            c += 1
        color[i] = c
    classes = [np.nonzero(color == c)[0] for c in range(color.max() + 1)]

    levels = int(round(-math.log2(delta)))
    trace = PartitionTrace([c.tolist() for c in classes], [], [])
    parts: list[list[int]] = []
    for cid, members in enumerate(classes):
        cliques = [[int(i)] for i in members]  # E_r empty at the finest scales
        for lev in range(levels, -1, -1):
            r = 2.0 ** -lev
            if r > r_s * (1 + 1e-12):
                keys = _cube_keys(pts[[c[0] for c in cliques]], lev)
                groups: dict[int, list] = {}
                for key, cl in zip(keys, cliques):
                    groups.setdefault(int(key), []).append(cl)
                merged = []
                worst_in_cube = 0
                for key in sorted(groups):
                    cls_ = sorted(groups[key], key=lambda c: min(c))
                    acc = None
                    out = []
                    for cl in cls_:
                        if len(cl) > half:
                            out.append(cl)
                            continue
                        acc = cl if acc is None else acc + cl
                        if len(acc) > half:
                            out.append(acc)
                            acc = None
                    if acc is not None:
                        out.append(acc)
                    worst_in_cube = max(worst_in_cube, len(out))
                    merged.extend(out)
                cliques = merged
                bound = 10 ** (-m) * (r / delta) ** s
                trace.clique_counts.append((cid, r, worst_in_cube, bound))
                if debug and worst_in_cube > bound + 1e-9:
                    raise AssertionError(
                        f"clique count {worst_in_cube} exceeds 10^-m (r/delta)^s = {bound:.4g} at r={r}")
            if return_trace:
                lab = {}
                for ci, cl in enumerate(cliques):
                    for i in cl:
                        lab[i] = ci
                trace.levels.append((cid, r, np.array([lab[int(i)] for i in members])))
        width = max(len(c) for c in cliques)
        local = [[] for _ in range(width)]
        for cl in cliques:
            for pos, i in enumerate(sorted(cl)):
                local[pos].append(i)
        parts.extend(sorted(p) for p in local if p)

    limit = 10 ** (5 * m) * M * M
    if len(parts) > limit:
        raise AssertionError(f"{len(parts)} parts exceed 10^(5m) M^2 = {limit}")
    parts.sort(key=lambda p: p[0])
    return (parts, trace) if return_trace else parts


# ---------------------------------------------------------------------------
# chart of A(k, n) and 1-D Cantor sets
# ---------------------------------------------------------------------------

def map_family_to_unit_cube(family, reference: AffinePlane | None = None,
                            max_pairs: int = 100_000, seed: int = 0):
    """Chart coordinates of a family in [0,1]^m, m = (k+1)(n-k).

    The direction of each plane is written as a graph over the reference
    direction (slope block A, k x (n-k)) and the offset by its coordinates in
    the reference complement. Coordinates are ``0.5 + A/2`` and
    ``0.5 + (y - y_ref)/2``, so the reference plane maps to the center.

    Returns ``(coords, distortion)`` where distortion is the largest factor by
    which ``2 * chart distance`` and the A(k, n) metric disagree over the
    audited pairs.
    """
    fam = as_family(family)
    N, k, n = fam.dirs.shape
    if N == 0:
        return np.zeros((0, (k + 1) * (n - k))), 1.0
    if reference is None:
        B0, x0 = fam.dirs[0], fam.offsets[0]
    else:
        B0, x0 = reference.dir.basis, reference.offset
    C0 = complement_bases(B0[None])[0]
    far = _kernels.subspace_dists(fam.dirs, B0)
    if far.max() > 0.25 + 1e-12:
        raise ChartError(f"directions reach distance {far.max():.4g} > 1/4 from the reference; "
                         "split the family into direction caps first")
    Gm = fam.dirs @ B0.T  # (N, k, k)
    Bp = np.linalg.solve(Gm, fam.dirs)
    A = Bp @ C0.T  # (N, k, n-k)
    y = fam.offsets @ C0.T
    yref = C0 @ x0
    coords = np.concatenate([0.5 + A.reshape(N, -1) / 2, 0.5 + (y - yref) / 2], axis=1)
    distortion = 1.0
    if N > 1:
        rng = np.random.default_rng(seed)
        if N * (N - 1) // 2 <= max_pairs:
            ii, jj = np.triu_indices(N, 1)
        else:
            ii = rng.integers(0, N, max_pairs)
            jj = rng.integers(0, N, max_pairs)
            keep = ii != jj
            ii, jj = ii[keep], jj[keep]
        dch = 2 * np.linalg.norm(coords[ii] - coords[jj], axis=1)
        dd = np.array([
            _kernels.subspace_dists(fam.dirs[j:j + 1], fam.dirs[i])[0] for i, j in zip(ii, jj)
        ]) + np.linalg.norm(fam.offsets[ii] - fam.offsets[jj], axis=1)
        ok = dd > 1e-14
        if ok.any():
            ratio = dch[ok] / dd[ok]
            distortion = float(max(ratio.max(), 1.0 / ratio.min()))
    return coords, distortion


def cantor_set_1d(beta: float, delta: float) -> np.ndarray:
    """delta-separated subset of [0, 1] with about delta^-beta points.

    Level by level, the kept dyadic intervals are refined so that level j
    keeps ``ceil(2^(j beta))`` intervals; the parents that keep both children
    are spread evenly, and a parent keeping one child keeps the left one.
    Points are the left endpoints of the kept delta-intervals (plus 1 when
    the last delta-interval is kept).
    """
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    if not is_dyadic(delta):
        raise ParameterError(f"delta must be a negative power of 2, got {delta}")
    L = int(round(-math.log2(delta)))
    kept = np.array([0], dtype=np.int64)
    for j in range(L):
        Nj = len(kept)
        target = math.ceil(2 ** ((j + 1) * beta) - 1e-9)
        target = min(2 * Nj, max(Nj, target))
        e = target - Nj
        p = np.arange(Nj)
        both = ((p + 1) * e) // Nj - (p * e) // Nj == 1
        left = 2 * kept
        right = left[both] + 1
        kept = np.sort(np.concatenate([left, right]))
    pts = kept.astype(np.float64) * delta
    if kept[-1] == 2 ** L - 1:
        pts = np.append(pts, 1.0)
    return pts


def interval_counts(points, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Max over members x of #(I ∩ [x-r, x+r]) for each dyadic r."""
    pts = np.sort(np.asarray(points, dtype=np.float64))
    radii = dyadic_radii(delta)
    out = np.empty(len(radii), dtype=np.int64)
    for j, r in enumerate(radii):
        lo = np.searchsorted(pts, pts - r - 1e-12, side="left")
        hi = np.searchsorted(pts, pts + r + 1e-12, side="right")
        out[j] = (hi - lo).max() if len(pts) else 0
    return radii, out
