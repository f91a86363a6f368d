"""Brascamp-Lieb functional, candidate search and the exponent bound check."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grassmann import RANK_TOL, ParameterError, Params, Subspace, compute_p_exact
from .spacing import PreconditionError


class NotTransverseError(PreconditionError):
    """Some d-plane contains every W_j^perp."""


@dataclass
class BLInstance:
    n: int
    W: list  # list[Subspace]
    p: float

    def __post_init__(self):
        if not self.W:
            raise ParameterError("BL instance needs at least one subspace")
        dims = {w.dim for w in self.W}
        if len(dims) != 1:
            raise ParameterError(f"all W_j must share one dimension, got {sorted(dims)}")
        if any(w.n != self.n for w in self.W):
            raise ParameterError("all W_j must live in R^n")

    @property
    def J(self) -> int:
        return len(self.W)

    @property
    def k(self) -> int:
        return self.n - self.W[0].dim

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "p": float(self.p),
                           "W": [w.basis.tolist() for w in self.W]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BLInstance":
        obj = json.loads(text)
        n = int(obj["n"])
        W = [Subspace.span(np.array(b, dtype=np.float64).reshape(-1, n), n) for b in obj["W"]]
        return cls(n, W, float(obj["p"]))


@dataclass
class BLResult:
    value: float | Fraction  # exact when the exponent is a Fraction
    maximizer: Subspace
    search_log: dict = field(default_factory=dict)
    certified: str = "lower-bound-only"

    def to_json(self) -> str:
        return json.dumps({"value": float(self.value), "maximizer": self.maximizer.basis.tolist(),
                           "maximizer_dim": self.maximizer.dim, "certified": self.certified,
                           "search_log": {str(k): v for k, v in self.search_log.items()}},
                          sort_keys=True)


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > RANK_TOL))


def proj_dim(W: Subspace, L: Subspace) -> int:
    """dim pi_W(L): rank of P_W B_L^T with singular values below 1e-8 dropped."""
    if W.n != L.n:
        raise ParameterError("subspaces live in different dimensions")
    if L.dim == 0 or W.dim == 0:
        return 0
    return _rank(W.projector @ L.basis.T)


def bl_functional(inst: BLInstance, L: Subspace):
    """dim L - (p/J) sum_j dim pi_{W_j}(L).

    Exact (a Fraction) when ``inst.p`` is a Fraction.
    """
    tot = sum(proj_dim(w, L) for w in inst.W)
    p = inst.p
    if isinstance(p, Fraction):
        return L.dim - p * tot / inst.J
    return L.dim - p * tot / inst.J


def intersect(U: Subspace, V: Subspace) -> Subspace:
    if U.dim == 0 or V.dim == 0:
        return Subspace.zero(U.n)
    comp = np.concatenate([U.complement().basis, V.complement().basis])
    return Subspace.span(comp, U.n).complement() if comp.size else Subspace.full(U.n)


def subspace_sum(items, n: int) -> Subspace:
    rows = [s.basis for s in items if s.dim]
    if not rows:
        return Subspace.zero(n)
    return Subspace.span(np.concatenate(rows), n)


def _key(S: Subspace) -> tuple:
    return (S.dim,) + tuple(np.round(S.projector, 6).ravel())


def lattice_candidates(inst: BLInstance) -> list:
    """{0}, R^n, coordinate subspaces, sums of subsets of {W_j^perp} and
    pairwise intersections of those sums."""
    n = inst.n
    perps = [w.complement() for w in inst.W]
    seen: dict = {}

    def add(S):
        seen.setdefault(_key(S), S)

    add(Subspace.zero(n))
    add(Subspace.full(n))
    for l in range(1, n):
        for axes in itertools.combinations(range(n), l):
            add(Subspace.coordinate(axes, n))
    sums = []
    for r in range(1, len(perps) + 1):
        for sub in itertools.combinations(perps, r):
            S = subspace_sum(sub, n)
            sums.append(S)
            add(S)
    uniq = list({_key(S): S for S in sums}.values())
    for a, b in itertools.combinations(uniq, 2):
        add(intersect(a, b))
    for w in inst.W:
        add(w)
    return list(seen.values())


def bl_constant_search(inst: BLInstance, n_random: int = 1000, seed: int = 0) -> BLResult:
    """Best functional value over the structured lattice plus random subspaces.

    The value is a lower bound for the supremum over all subspaces.
    """
    n = inst.n
    best_val = None
    best_L = None
    log: dict = {}
    for L in lattice_candidates(inst):
        v = bl_functional(inst, L)
        entry = log.setdefault(L.dim, {"lattice": 0, "random": 0, "best": None})
        entry["lattice"] += 1
        entry["best"] = float(v) if entry["best"] is None else max(entry["best"], float(v))
        if best_val is None or v > best_val + 1e-12:
            best_val, best_L = v, L
    rng = np.random.default_rng(seed)
    projs = [w.projector for w in inst.W]
    for l in range(1, n):
        if n_random <= 0:
            break
        q, _ = np.linalg.qr(rng.standard_normal((n_random, n, l)))
        tot = np.zeros(n_random, dtype=np.int64)
        for P in projs:
            s = np.linalg.svd(P[None] @ q, compute_uv=False)
            tot += (s > RANK_TOL).sum(axis=1)
        vals = l - inst.p * tot / inst.J
        i = int(np.argmax(vals))
        entry = log.setdefault(l, {"lattice": 0, "random": 0, "best": None})
        entry["random"] += n_random
        entry["best"] = float(vals[i]) if entry["best"] is None else max(entry["best"], float(vals[i]))
        if vals[i] > float(best_val) + 1e-12:
            L = Subspace(n, q[i].T)
            best_val, best_L = bl_functional(inst, L), L
    value = bl_functional(inst, best_L)
    if not isinstance(value, Fraction):
        value = float(value)
    return BLResult(value, best_L, dict(sorted(log.items())))


@dataclass
class EasyLemAudit:
    lhs: int
    rhs: int
    strict_case: bool
    passed: bool


def easylem_audit(W: Subspace, L: Subspace) -> EasyLemAudit:
    """dim pi_W(L) >= dim W + dim L - n, with equality exactly when L ⊇ W^perp."""
    n = W.n
    if W.dim + L.dim < n:
        raise PreconditionError("need dim L + dim W >= n")
    lhs = proj_dim(W, L)
    rhs = W.dim + L.dim - n
    Wp = W.complement()
    contains = _rank(np.concatenate([L.basis, Wp.basis])) == L.dim if Wp.dim else True
    if contains:
        ok = lhs == rhs
    else:
        ok = lhs >= rhs + 1
    return EasyLemAudit(lhs, rhs, not contains, bool(ok))


def is_transverse(W: list, d: int) -> bool:
    """No d-plane contains all W_j^perp, i.e. their sum has dimension > d."""
    n = W[0].n
    return subspace_sum([w.complement() for w in W], n).dim > d


@dataclass
class CaseRow:
    dim: int
    bucket: str
    value: Fraction
    intermediate: Fraction
    bound: Fraction
    passed: bool


@dataclass
class BLBoundCheck:
    bl_lower: float
    bound: float
    passed: bool
    case_rows: list = field(default_factory=list)
    search: BLResult | None = None


def case_split_row(l: int, value: Fraction, k: int, d: int, beta: Fraction, p: Fraction,
                   J: int) -> CaseRow:
    """Verify the per-dimension chain value <= intermediate <= bound exactly."""
    bound = d + beta - (d - k + beta) * p
    if l >= d + 1:
        bucket, inter = "l>=d+1", l - p * (l - k)
    elif l >= k:
        bucket, inter = "k<=l<=d", l - p * (l - k) - p / J
    else:
        bucket, inter = "l<=k-1", Fraction(k - 1)
        # value <= dim L <= k-1
    ok = value <= inter and inter <= bound
    return CaseRow(l, bucket, value, inter, bound, bool(ok))


def bl_bound_check(inst: BLInstance, params: Params, n_random: int = 1000,
                   seed: int = 0) -> BLBoundCheck:
    """Search value <= d + beta - (d-k+beta) p, plus the exact case split
    evaluated on every lattice candidate."""
    k, d = params.k, params.d
    if inst.k != k or inst.n != params.n:
        raise ParameterError("instance dimensions disagree with params")
    if params.beta > 1:
        raise ParameterError("the bound check needs beta <= 1")
    if not is_transverse(inst.W, d):
        raise NotTransverseError("some d-plane contains every W_j^perp")
    beta = Fraction(params.beta)
    p_exact = compute_p_exact(k, d, beta)
    p = Fraction(params.p) if params.p is not None else p_exact
    if abs(float(p) - float(p_exact)) < 1e-12:
        p = p_exact
    exact = BLInstance(inst.n, inst.W, p)
    rows = []
    for L in lattice_candidates(exact):
        v = bl_functional(exact, L)
        rows.append(case_split_row(L.dim, v, k, d, beta, p, exact.J))
    res = bl_constant_search(BLInstance(inst.n, inst.W, float(p)), n_random, seed)
    bound = float(d + beta - (d - k + beta) * p)
    ok = res.value <= bound + 1e-9 and all(r.passed for r in rows)
    return BLBoundCheck(res.value, bound, bool(ok), rows, res)
