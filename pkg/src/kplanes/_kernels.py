"""Hot loops: slab rasterization and plane-to-family distances.

Every kernel has a numba ``@njit`` body and a pure-numpy twin with the same
signature. The numba path is used unless ``KPLANES_DISABLE_NUMBA=1`` is set
in the environment (or numba fails to import). Both paths must return
identical results; ``tests/test_kernels.py`` pins that.
"""
from __future__ import annotations

import itertools
import os

import numpy as np

# Boundary slack shared with the scalar membership tests so that cell-center
# rasterization agrees exactly with ``slab_contains``.
SQ_TOL = 1e-12

_DISABLED = os.environ.get("KPLANES_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by KPLANES_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

@njit(cache=True)
def _subspace_dists_nb(bases, b):
    N, k, n = bases.shape
    out = np.empty(N)
    bT = np.ascontiguousarray(b.T)
    for i in range(N):
        if k == 1:
            dot = 0.0
            for a in range(n):
                dot += bases[i, 0, a] * b[0, a]
            v = 1.0 - dot * dot
        else:
            M = np.ascontiguousarray(bases[i]) @ bT
            s = np.linalg.svd(M)[1]
            v = 1.0 - s[k - 1] * s[k - 1]
        out[i] = np.sqrt(v) if v > 0.0 else 0.0
    return out


def _subspace_dists_np(bases, b):
    N, k, n = bases.shape
    if k == 1:
        dot = bases[:, 0, :] @ b[0]
        v = 1.0 - dot * dot
    else:
        M = bases @ b.T
        s = np.linalg.svd(M, compute_uv=False)
        v = 1.0 - s[:, -1] ** 2
    return np.sqrt(np.clip(v, 0.0, None))


def subspace_dists(bases: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Projection-norm distance from ``b`` (k, n) to each of ``bases`` (N, k, n).

    Valid for equal-dimensional subspaces, where ``||P1 - P2||`` equals the
    sine of the largest principal angle.
    """
    bases = np.ascontiguousarray(bases, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if bases.shape[0] == 0:
        return np.zeros(0)
    if bases.shape[1] == 0:
        return np.zeros(bases.shape[0])
    if HAS_NUMBA:
        return _subspace_dists_nb(bases, b)
    return _subspace_dists_np(bases, b)


def affine_dists(dirs, offsets, dir0, off0) -> np.ndarray:
    """``d(dir) + |x - x0|`` from one plane to every plane of a family."""
    dd = subspace_dists(dirs, dir0)
    return dd + np.linalg.norm(np.asarray(offsets) - np.asarray(off0)[None, :], axis=1)


@njit(cache=True)
def _ball_counts_nb(dirs, offsets, c, radii, tol):
    N, k, n = dirs.shape
    b = np.ascontiguousarray(dirs[c])
    dd = _subspace_dists_nb(dirs, b)
    counts = np.zeros(radii.shape[0], dtype=np.int64)
    for j in range(N):
        s = 0.0
        for a in range(n):
            t = offsets[j, a] - offsets[c, a]
            s += t * t
        d = dd[j] + np.sqrt(s)
        for r in range(radii.shape[0]):
            if d <= radii[r] + tol:
                counts[r] += 1
    return counts


def ball_counts(dirs, offsets, center: int, radii, tol: float = 1e-12) -> np.ndarray:
    """Number of family members within each radius of member ``center``."""
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    if dirs.shape[0] == 0:
        return np.zeros(len(radii), dtype=np.int64)
    if HAS_NUMBA and dirs.shape[1] > 0:
        return _ball_counts_nb(dirs, offsets, int(center), radii, tol)
    d = affine_dists(dirs, offsets, dirs[center], offsets[center])
    return (d[None, :] <= radii[:, None] + tol).sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _plane_charts(dirs):
    """Per plane: the k coordinate axes the plane is best parametrized over.

    Returns (long_axes, short_axes, minv, inv_sigma) where ``minv`` solves
    for in-plane coordinates from the long-axis coordinates and
    ``inv_sigma`` bounds the short-axis spread of the thickness-t
    neighbourhood: ``|w| <= t * inv_sigma``.
    """
    N, k, n = dirs.shape
    combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
    dets = np.empty((N, len(combos)))
    for ci, cmb in enumerate(combos):
        dets[:, ci] = np.abs(np.linalg.det(dirs[:, :, cmb])) if k else 1.0
    best = np.argmax(dets, axis=1)
    long_axes = combos[best]
    rest = np.array([[a for a in range(n) if a not in cmb] for cmb in combos], dtype=np.int64)
    short_axes = rest.reshape(len(combos), n - k)[best]
    BL = np.take_along_axis(dirs, long_axes[:, None, :], axis=2)  # (N, k, k)
    sig = np.linalg.svd(BL, compute_uv=False)[:, -1] if k else np.ones(N)
    minv = np.linalg.inv(np.transpose(BL, (0, 2, 1))) if k else np.zeros((N, 0, 0))
    return long_axes, short_axes, np.ascontiguousarray(minv), 1.0 / sig


@njit(cache=True)
def _rasterize_nb(dirs, offsets, long_axes, short_axes, minv, inv_sig,
                  start, h, G, t2, out, mark):
    N, k, n = dirs.shape
    m = n - k
    per_plane = np.zeros(N, dtype=np.int64)
    strides = np.empty(n, dtype=np.int64)
    acc = 1
    for a in range(n - 1, -1, -1):
        strides[a] = acc
        acc *= G
    nl = 1
    for a in range(k):
        nl *= G
    cl = np.empty(k)
    idx = np.empty(n, dtype=np.int64)
    q = np.empty(n)
    p = np.empty(n)
    lo = np.empty(m, dtype=np.int64)
    hi = np.empty(m, dtype=np.int64)
    cur = np.empty(m, dtype=np.int64)
    tt = np.sqrt(t2)
    for i in range(N):
        rho = tt * inv_sig[i]
        total = 0
        for flat in range(nl):
            rem = flat
            ss = 0.0
            for a in range(k):
                ii = rem % G
                rem //= G
                idx[long_axes[i, a]] = ii
                cl[a] = start + (ii + 0.5) * h
                ss += cl[a] * cl[a]
            if ss > 1.0 + SQ_TOL:
                continue
            for c in range(n):
                p[c] = offsets[i, c]
            for a in range(k):
                sa = 0.0
                for b2 in range(k):
                    sa += minv[i, a, b2] * (cl[b2] - offsets[i, long_axes[i, b2]])
                for c in range(n):
                    p[c] += sa * dirs[i, a, c]
            empty = False
            for b2 in range(m):
                ax = short_axes[i, b2]
                l0 = int(np.ceil((p[ax] - rho - start) / h - 0.5))
                h0 = int(np.floor((p[ax] + rho - start) / h - 0.5))
                if l0 < 0:
                    l0 = 0
                if h0 > G - 1:
                    h0 = G - 1
                if h0 < l0:
                    empty = True
                lo[b2] = l0
                hi[b2] = h0
                cur[b2] = l0
            if empty:
                continue
            while True:
                for b2 in range(m):
                    idx[short_axes[i, b2]] = cur[b2]
                nq = 0.0
                for c in range(n):
                    q[c] = start + (idx[c] + 0.5) * h
                    nq += q[c] * q[c]
                if nq <= 1.0 + SQ_TOL:
                    d2 = 0.0
                    for c in range(n):
                        d2 += (q[c] - offsets[i, c]) ** 2
                    for a in range(k):
                        pr = 0.0
                        for c in range(n):
                            pr += dirs[i, a, c] * (q[c] - offsets[i, c])
                        d2 -= pr * pr
                    if d2 <= t2 + SQ_TOL:
                        f = 0
                        for c in range(n):
                            f += idx[c] * strides[c]
                        if mark:
                            out[f] = 1
                        else:
                            out[f] += 1
                        total += 1
                # odometer over the short box
                b2 = m - 1
                while b2 >= 0:
                    cur[b2] += 1
                    if cur[b2] <= hi[b2]:
                        break
                    cur[b2] = lo[b2]
                    b2 -= 1
                if b2 < 0:
                    break
        per_plane[i] = total
    return per_plane


def _rasterize_np(dirs, offsets, long_axes, short_axes, minv, inv_sig,
                  start, h, G, t2, out, mark):
    N, k, n = dirs.shape
    m = n - k
    strides = G ** np.arange(n - 1, -1, -1, dtype=np.int64)
    per_plane = np.zeros(N, dtype=np.int64)
    tt = np.sqrt(t2)
    lgrid = np.indices((G,) * k).reshape(k, -1).T if k else np.zeros((1, 0), dtype=np.int64)
    lgrid = lgrid[:, ::-1]  # first long axis varies fastest, matching the numba odometer
    lcent = start + (lgrid + 0.5) * h
    inball = (lcent ** 2).sum(axis=1) <= 1.0 + SQ_TOL
    lgrid, lcent = lgrid[inball], lcent[inball]
    for i in range(N):
        B, x = dirs[i], offsets[i]
        la, sa_ = long_axes[i], short_axes[i]
        rho = tt * inv_sig[i]
        s = (lcent - x[la]) @ minv[i].T
        p = x[None, :] + s @ B  # (L, n)
        lo = np.ceil((p[:, sa_] - rho - start) / h - 0.5).astype(np.int64)
        hi = np.floor((p[:, sa_] + rho - start) / h - 0.5).astype(np.int64)
        lo = np.clip(lo, 0, None)
        hi = np.clip(hi, None, G - 1)
        width = int(np.max(hi - lo, initial=-1)) + 1
        if width <= 0:
            continue
        box = np.indices((width,) * m).reshape(m, -1).T  # (W^m, m)
        sidx = lo[:, None, :] + box[None, :, :]  # (L, W^m, m)
        valid = np.all((sidx <= hi[:, None, :]), axis=2)
        full = np.empty(sidx.shape[:2] + (n,), dtype=np.int64)
        full[:, :, la] = lgrid[:, None, :]
        full[:, :, sa_] = sidx
        full = full[valid]
        q = start + (full + 0.5) * h
        nq = (q ** 2).sum(axis=1)
        w = q - x
        d2 = (w ** 2).sum(axis=1) - ((w @ B.T) ** 2).sum(axis=1)
        hit = (nq <= 1.0 + SQ_TOL) & (d2 <= t2 + SQ_TOL)
        flat = full[hit] @ strides
        per_plane[i] = flat.size
        if mark:
            out[flat] = 1
        else:
            np.add.at(out, flat, 1)
    return per_plane


def rasterize(dirs, offsets, h: float, G: int, start: float, thickness: float,
              out: np.ndarray, mark: bool = False) -> np.ndarray:
    """Accumulate thickness-``thickness`` plane neighbourhoods into a grid.

    The grid has ``G`` cells of side ``h`` per axis starting at ``start``;
    ``out`` is its flat C-order buffer. A cell is hit by a plane when its
    center lies in the closed unit ball and within ``thickness`` of the
    plane. With ``mark`` the cell is set to 1, otherwise incremented.
    Returns the per-plane number of hit cells.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    N = dirs.shape[0]
    if N == 0:
        return np.zeros(0, dtype=np.int64)
    long_axes, short_axes, minv, inv_sig = _plane_charts(dirs)
    args = (dirs, offsets, long_axes, short_axes, minv, inv_sig,
            float(start), float(h), int(G), float(thickness) ** 2, out, bool(mark))
    if HAS_NUMBA:
        return _rasterize_nb(*args)
    return _rasterize_np(*args)


# ---------------------------------------------------------------------------
# Frostman rejection step
# ---------------------------------------------------------------------------

@njit(cache=True)
def _frostman_try_nb(dirs, offsets, n_acc, counts, cdir, coff, radii, bounds, delta):
    N, k, n = dirs.shape
    R = radii.shape[0]
    dd = _subspace_dists_nb(dirs[:n_acc], cdir)
    d = np.empty(n_acc)
    for j in range(n_acc):
        s = 0.0
        for a in range(n):
            t = offsets[j, a] - coff[a]
            s += t * t
        d[j] = dd[j] + np.sqrt(s)
        if d[j] < delta * (1 - 1e-12):
            return False
    own = np.ones(R, dtype=np.int64)
    for j in range(n_acc):
        for r in range(R):
            if d[j] <= radii[r] + 1e-12:
                own[r] += 1
                if counts[j, r] + 1 > bounds[r]:
                    return False
    for r in range(R):
        if own[r] > bounds[r]:
            return False
    for j in range(n_acc):
        for r in range(R):
            if d[j] <= radii[r] + 1e-12:
                counts[j, r] += 1
    for r in range(R):
        counts[n_acc, r] = own[r]
    dirs[n_acc] = cdir
    offsets[n_acc] = coff
    return True


def _frostman_try_np(dirs, offsets, n_acc, counts, cdir, coff, radii, bounds, delta):
    d = affine_dists(dirs[:n_acc], offsets[:n_acc], cdir, coff)
    if (d < delta * (1 - 1e-12)).any():
        return False
    inside = d[:, None] <= radii[None, :] + 1e-12
    own = 1 + inside.sum(axis=0)
    if (own > bounds).any() or ((counts[:n_acc] + 1 > bounds[None, :]) & inside).any():
        return False
    counts[:n_acc] += inside
    counts[n_acc] = own
    dirs[n_acc] = cdir
    offsets[n_acc] = coff
    return True


def frostman_try(dirs, offsets, n_acc: int, counts, cdir, coff, radii, bounds, delta: float) -> bool:
    """Append a candidate plane if the family stays delta-separated and every
    member-centered ball count stays within ``bounds``; updates buffers in place."""
    if HAS_NUMBA and dirs.shape[1] > 0:
        return bool(_frostman_try_nb(dirs, offsets, n_acc, counts, cdir, coff, radii, bounds, delta))
    return _frostman_try_np(dirs, offsets, n_acc, counts, cdir, coff, radii, bounds, delta)
