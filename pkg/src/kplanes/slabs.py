"""Slabs, incidence fields on a delta-grid over the unit ball, and Lp norms."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .grassmann import AffinePlane, ParameterError, Params
from .spacing import PlaneFamily, PreconditionError, as_family, spacing_check

MAX_CELLS = 10**9


class ResourceError(RuntimeError):
    """Requested grid exceeds the memory guard."""


class SpacingViolation(PreconditionError):
    """Family fails the ball-count hypothesis required by the inequality."""


@dataclass(frozen=True)
class Slab:
    """``N_r(plane) ∩ B(0,1)``."""

    plane: AffinePlane
    r: float

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ParameterError(f"slab thickness must lie in (0, 1], got {self.r}")


def slab_contains(s: Slab, point) -> bool:
    x = np.asarray(point, dtype=np.float64)
    return bool(x @ x <= 1.0 and s.plane.distance_to_point(x) <= s.r)


@dataclass(frozen=True)
class Grid:
    """Axis-aligned cells of side ``delta`` tiling [-G delta/2, G delta/2]^n.

    Only cells whose centers lie in the closed unit ball carry mass.
    """

    n: int
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ParameterError("grid spacing must be positive")
        if (2 / self.delta + 1) ** self.n > MAX_CELLS:
            raise ResourceError(
                f"grid with n={self.n}, delta={self.delta} exceeds {MAX_CELLS:.0e} cells")

    @property
    def G(self) -> int:
        return int(math.ceil(2 / self.delta - 1e-9))

    @property
    def start(self) -> float:
        return -self.G * self.delta / 2

    @property
    def size(self) -> int:
        return self.G**self.n

    def axis_centers(self) -> np.ndarray:
        return self.start + (np.arange(self.G) + 0.5) * self.delta

    def centers(self, flat_index=None) -> np.ndarray:
        idx = np.arange(self.size) if flat_index is None else np.asarray(flat_index)
        multi = np.unravel_index(idx, (self.G,) * self.n)
        return np.stack([self.start + (m + 0.5) * self.delta for m in multi], axis=-1)

    def ball_mask(self) -> np.ndarray:
        c = self.axis_centers() ** 2
        sq = np.zeros((self.G,) * self.n)
        for a in range(self.n):
            shape = [1] * self.n
            shape[a] = self.G
            sq = sq + c.reshape(shape)
        return (sq <= 1.0 + _kernels.SQ_TOL).ravel()

    @property
    def cell_count(self) -> int:
        return int(self.ball_mask().sum())


@dataclass
class IncidenceField:
    grid: Grid
    counts: np.ndarray  # flat, length grid.size, zero outside the ball
    per_plane: np.ndarray | None = None  # hit cells per plane

    @classmethod
    def constant(cls, grid: Grid, value: int = 1) -> "IncidenceField":
        return cls(grid, grid.ball_mask().astype(np.int64) * value)

    def __add__(self, other: "IncidenceField") -> "IncidenceField":
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")
        pp = None
        if self.per_plane is not None and other.per_plane is not None:
            pp = np.concatenate([self.per_plane, other.per_plane])
        return IncidenceField(self.grid, self.counts + other.counts, pp)

    def to_csv(self, nonzero_only: bool = True) -> str:
        idx = np.nonzero(self.counts)[0] if nonzero_only else np.nonzero(self.grid.ball_mask())[0]
        cen = self.grid.centers(idx)
        head = ",".join(["cell_index"] + [f"x{a}" for a in range(self.grid.n)] + ["count"])
        lines = [head]
        for i, c in zip(idx, cen):
            lines.append(",".join([str(int(i))] + [repr(float(v)) for v in c]
                                  + [str(int(self.counts[i]))]))
        return "\n".join(lines) + "\n"


def rasterize_family(family, delta: float, n: int | None = None,
                     thickness: float | None = None) -> IncidenceField:
    """Count, per grid cell, the planes whose delta-slab contains the cell center."""
    if isinstance(family, PlaneFamily):
        fam = family
    else:
        planes = list(family)
        if not planes:
            if n is None:
                raise ValueError("empty plane list needs n")
            fam = None
        else:
            fam = as_family(planes, delta)
    n = fam.n if fam is not None else n
    grid = Grid(n, delta)
    counts = np.zeros(grid.size, dtype=np.int64)
    if fam is None or len(fam) == 0:
        return IncidenceField(grid, counts, np.zeros(0, dtype=np.int64))
    t = delta if thickness is None else thickness
    per = _kernels.rasterize(fam.dirs, fam.offsets, delta, grid.G, grid.start, t, counts)
    return IncidenceField(grid, counts, per)


def lp_norm(field: IncidenceField, p: float) -> float:
    """(sum_cells counts^p delta^n)^(1/p)."""
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    c = field.counts[field.counts > 0].astype(np.float64)
    if c.size == 0:
        return 0.0
    # fixed-order pairwise summation keeps the result reproducible
    s = float(np.sum(np.sort(c**p)))
    return (s * field.grid.delta**field.grid.n) ** (1.0 / p)


def _volume_step(r: float, n: int, delta: float | None) -> float:
    target = r / 8 if delta is None else min(delta / 8, r / 8)
    h = 2.0 ** -math.ceil(math.log2(1 / target) - 1e-12)
    # at least this fine for accuracy, at most this fine for memory
    fine = {1: 2.0**-14, 2: 2.0**-10, 3: 2.0**-7}.get(n, 2.0**-5)
    finest = {1: 2.0**-20, 2: 2.0**-12, 3: 2.0**-8}.get(n, 2.0**-6)
    return max(min(h, fine), finest)


def slab_volume(s: Slab, delta: float | None = None) -> float:
    """Lebesgue measure of a slab by cell counting.

    The cell side is the dyadic value at or below min(r, delta)/8, refined
    further for accuracy and coarsened when the grid would not fit in memory.
    """
    n = s.plane.n
    h = _volume_step(s.r, n, delta)
    grid = Grid(n, h)
    buf = np.zeros(grid.size, dtype=np.uint8)
    per = _kernels.rasterize(s.plane.dir.basis[None], s.plane.offset[None], h, grid.G,
                             grid.start, s.r, buf, mark=True)
    return float(per[0]) * h**n


@dataclass
class KakeyaRecord:
    delta: float
    lhs: float
    rhs: float
    ratio: float
    p: float
    eps: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def kakeya_ratio(family, params: Params, volume: str = "grid", check: bool = True,
                 spacing_kwargs: dict | None = None) -> KakeyaRecord:
    """Both sides of the Kakeya maximal inequality with unit constant.

    ``lhs = ||sum 1_{V_delta}||_p`` and
    ``rhs = delta^(-k(d-k)/p' - eps) (sum |V_delta|)^(1/p)``. Slab volumes are
    the per-plane grid counts times delta^n (``volume="grid"``, consistent
    with the left side) or finer quadrature (``volume="quadrature"``).
    """
    fam = as_family(family, params.delta)
    delta = params.delta
    p = params.p
    if p is None:
        raise ParameterError("params.p must be set")
    if len(fam) == 0:
        return KakeyaRecord(delta, 0.0, 0.0, 0.0, p, params.eps)
    if check:
        rep = spacing_check(fam, params.s, params.M, delta, **(spacing_kwargs or {}))
        if not rep.passed:
            r, c, cnt, b = rep.worst
            raise SpacingViolation(
                f"spacing condition fails at r={r}, center {c}: count {cnt} > bound {b:.4g}")
    field = rasterize_family(fam, delta)
    lhs = lp_norm(field, p)
    if volume == "grid":
        vol = float(field.per_plane.sum()) * delta**fam.n
    elif volume == "quadrature":
        vol = sum(slab_volume(Slab(fam.plane(i), delta)) for i in range(len(fam)))
    else:
        raise ParameterError(f"unknown volume mode {volume!r}")
    k, d = params.k, params.d
    pp = params.pPrime
    expo = k * (d - k) / pp + params.eps
    rhs = delta ** (-expo) * vol ** (1.0 / p)
    return KakeyaRecord(delta, lhs, rhs, lhs / rhs if rhs > 0 else 0.0, p, params.eps)


def kakeya_sweep(family_for: Callable[[float], object] | PlaneFamily, params: Params,
                 deltas: Iterable[float], **kwargs) -> list[KakeyaRecord]:
    """kakeya_ratio over several scales.

    ``family_for`` is either a fixed family or a callable returning the family
    to use at a given delta.
    """
    out = []
    for dl in deltas:
        fam = family_for(dl) if callable(family_for) else family_for
        out.append(kakeya_ratio(fam, dataclasses.replace(params, delta=dl), **kwargs))
    return out


def sweep_to_csv(records: Sequence[KakeyaRecord]) -> str:
    lines = ["delta,lhs,rhs,ratio,p,eps"]
    for r in records:
        lines.append(",".join(repr(float(v)) for v in (r.delta, r.lhs, r.rhs, r.ratio, r.p, r.eps)))
    return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float


def exponent_fit(pairs: Sequence[tuple[float, float]]) -> FitResult:
    """Least squares of log(value) against log(1/delta)."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 3 or len(np.unique(arr[:, 0])) < 3:
        raise ParameterError("exponent_fit needs at least 3 distinct deltas")
    if (arr <= 0).any():
        raise ParameterError("deltas and values must be positive")
    x = np.log(1 / arr[:, 0])
    y = np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.abs(y - (slope * x + intercept)).max())
    return FitResult(float(slope), float(intercept), res)
