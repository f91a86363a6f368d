"""Command-line driver.

Each subcommand writes its artifact (plane list, CSV or JSON) to ``--out``
and prints a JSON run record with the full parameters to stdout.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .grassmann import (
    ParameterError,
    Params,
    affine_net_arrays,
    grassmann_net_bases,
    parse_scale,
    parse_scale_range,
    read_planes,
)
from .slabs import MAX_CELLS, ResourceError

SCHEMA_VERSION = "1"
OUTPUT_DIR_ENV = "KPLANES_OUTPUT_DIR"
COMMANDS = ("net", "example", "spacing", "partition", "rasterize", "kakeya-sweep", "bl",
            "decompose", "boxdim")

EXIT_OK, EXIT_PARSE, EXIT_PRECONDITION, EXIT_AUDIT, EXIT_RESOURCE = 0, 2, 3, 4, 5

# keys accepted in config files and --set overrides
OVERRIDE_KEYS = {"exponent", "separation", "threshold", "K", "fraction", "rank_tol",
                 "max_exhaustive", "sample_centers", "plane_delta", "n_random"}


class InputError(ValueError):
    """Malformed input file or argument."""


class AuditFailure(RuntimeError):
    """An audit ran to completion and reported a violation."""


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    io: dict = field(default_factory=dict)
    seed: int = 0
    overrides: dict = field(default_factory=dict)


@dataclass
class OutputRecord:
    schema_version: str
    command: str
    params: dict
    results: dict
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OutputRecord":
        obj = json.loads(text)
        return cls(**{k: obj[k] for k in ("schema_version", "command", "params", "results",
                                         "wall_time")})


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve_out(cfg: RunConfig, default_name: str) -> Path | None:
    out = cfg.io.get("out")
    if out:
        return Path(out)
    base = cfg.io.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV)
    if base:
        return Path(base) / default_name
    return None


def _params(cfg: RunConfig, **extra) -> Params:
    p = dict(cfg.params)
    keys = {"k", "d", "n", "beta", "delta", "K", "eps", "s", "p", "M"}
    kw = {k: v for k, v in p.items() if k in keys and v is not None}
    kw.update(extra)
    return Params(**kw)


def _read_family(path: str, delta: float):
    from .spacing import PlaneFamily
    with open(path) as fh:
        try:
            planes = read_planes(fh, bounded=False)
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}: {exc}") from exc
    if not planes:
        raise InputError(f"{path}: no planes")
    if not hasattr(planes[0], "offset"):
        raise InputError(f"{path}: expected affine planes")
    fam = PlaneFamily.from_planes(planes, delta)
    return fam


def _family_text(fam, header: str) -> str:
    lines = [f"# {header}"]
    for D, X in zip(fam.dirs, fam.offsets):
        lines.append(" ".join([str(fam.n), str(fam.k)] + [repr(float(v)) for v in D.ravel()]
                              + [repr(float(v)) for v in X]))
    return "\n".join(lines) + "\n"


def _read_points(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(t) for t in line.replace(",", " ").split()])
            except ValueError as exc:
                raise InputError(f"{path}:{ln}: {exc}") from exc
    if rows and len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: rows have different lengths")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def _deltas(cfg: RunConfig) -> list[float]:
    raw = cfg.params.get("deltas")
    if raw is None:
        return [float(cfg.params.get("delta", 2.0**-5))]
    return parse_scale_range(raw) if isinstance(raw, str) else [float(x) for x in raw]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_net(cfg: RunConfig) -> tuple[dict, str, str]:
    p = cfg.params
    k, n, delta = int(p["k"]), int(p["n"]), float(p["delta"])
    if p.get("linear"):
        B = grassmann_net_bases(k, n, delta, cfg.seed)
        text = "\n".join(" ".join([str(n), str(k)] + [repr(float(v)) for v in b.ravel()])
                         for b in B) + "\n"
        return {"size": int(len(B))}, text, "net.txt"
    from .spacing import PlaneFamily
    D, X = affine_net_arrays(k, n, delta, cfg.seed)
    fam = PlaneFamily(D, X, delta)
    return {"size": len(fam)}, _family_text(fam, f"affine net k={k} n={n} delta={delta}"), "net.txt"


def _make_example(cfg: RunConfig, delta: float | None = None):
    from .families import ExampleSpec
    kind = cfg.params.get("kind", "low_beta")
    par = _params(cfg) if delta is None else _params(cfg, delta=delta)
    opts = {}
    pd = cfg.overrides.get("plane_delta")
    if pd is not None and kind != "random_frostman":
        opts["plane_delta"] = parse_scale(pd)
    if kind == "random_frostman":
        opts["allow_partial"] = bool(cfg.params.get("allow_partial", False))
        if cfg.params.get("max_attempts") is not None:
            opts["max_attempts"] = int(cfg.params["max_attempts"])
    return ExampleSpec(kind, par, cfg.seed, opts).generate()


def cmd_example(cfg: RunConfig):
    fam = _make_example(cfg)
    kind = cfg.params.get("kind", "low_beta")
    return {"size": len(fam), "kind": kind}, _family_text(fam, f"example {kind}"), "example.txt"


def cmd_spacing(cfg: RunConfig):
    from .spacing import spacing_check
    delta = float(cfg.params["delta"])
    fam = _read_family(cfg.io["input"], delta)
    s = float(cfg.params["s"])
    M = float(cfg.params.get("M", 1.0))
    kw = {}
    for key in ("max_exhaustive", "sample_centers"):
        if key in cfg.overrides:
            kw[key] = int(cfg.overrides[key])
    rep = spacing_check(fam, s, M, delta, seed=cfg.seed, keep_rows=True, **kw)
    res = {"pass": rep.passed, "worst": list(rep.worst), "min_constant": rep.min_constant,
           "exhaustive": rep.exhaustive, "centers_audited": rep.centers_audited,
           "size": len(fam)}
    return res, rep.to_csv(), "spacing.csv"


def cmd_partition(cfg: RunConfig):
    from .spacing import audit_points, frostman_partition
    pts = _read_points(cfg.io["input"])
    delta, s, M = float(cfg.params["delta"]), float(cfg.params["s"]), float(cfg.params["M"])
    parts = frostman_partition(pts, delta, s, M)
    audits = []
    for i, part in enumerate(parts):
        ok, const, _ = audit_points(pts[part], delta, s, 1.0)
        audits.append({"part": i, "size": len(part), "pass": ok, "max_constant": const})
    res = {"parts": len(parts), "points": int(len(pts)),
           "all_pass": all(a["pass"] for a in audits), "audit": audits}
    return res, json.dumps(parts) + "\n", "partition.json"


def cmd_rasterize(cfg: RunConfig):
    from .slabs import lp_norm, rasterize_family
    delta = float(cfg.params["delta"])
    fam = _read_family(cfg.io["input"], delta)
    field_ = rasterize_family(fam, delta)
    res = {"nonzero_cells": int(np.count_nonzero(field_.counts)),
           "max_count": int(field_.counts.max()), "l1": lp_norm(field_, 1.0)}
    return res, field_.to_csv(), "field.csv"


def cmd_kakeya_sweep(cfg: RunConfig):
    from .slabs import kakeya_ratio, sweep_to_csv
    from .spacing import as_family
    deltas = _deltas(cfg)
    recs = []
    fixed = None
    if cfg.io.get("input"):
        fixed = _read_family(cfg.io["input"], min(deltas))
    for dl in deltas:
        par = _params(cfg, delta=dl)
        fam = fixed if fixed is not None else _make_example(cfg, dl)
        fam = as_family(fam, dl)
        recs.append(kakeya_ratio(fam, par))
    res = {"rows": [r.as_dict() for r in recs]}
    return res, sweep_to_csv(recs), "kakeya_sweep.csv"


def cmd_bl(cfg: RunConfig):
    from .brascamp_lieb import BLInstance, bl_bound_check, bl_constant_search
    with open(cfg.io["instance"]) as fh:
        try:
            inst = BLInstance.from_json(fh.read())
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{cfg.io['instance']}: {exc}") from exc
    n_random = int(cfg.overrides.get("n_random", 1000))
    res_obj = bl_constant_search(inst, n_random=n_random, seed=cfg.seed)
    res = json.loads(res_obj.to_json())
    if cfg.params.get("d") is not None and cfg.params.get("beta") is not None:
        par = _params(cfg, k=inst.k, n=inst.n, p=inst.p)
        chk = bl_bound_check(inst, par, n_random=n_random, seed=cfg.seed)
        res["bound"] = chk.bound
        res["bound_pass"] = chk.passed
        if not chk.passed:
            raise AuditFailure(f"BL value {chk.bl_lower} exceeds bound {chk.bound}")
    return res, json.dumps(res, sort_keys=True) + "\n", "bl.json"


def cmd_decompose(cfg: RunConfig):
    from .broad_narrow import decompose
    delta = float(cfg.params.get("delta", 2.0**-5))
    fam = _read_family(cfg.io["input"], delta)
    ov = cfg.overrides
    K = float(ov.get("K", cfg.params.get("K", 8)))
    rep = decompose(fam, K, int(cfg.params["d"]),
                    scale=float(ov["scale"]) if "scale" in ov else None,
                    exponent=float(ov["exponent"]) if "exponent" in ov else None,
                    separation=float(ov["separation"]) if "separation" in ov else None,
                    threshold=float(ov["threshold"]) if "threshold" in ov else None)
    out = rep.to_json()
    return json.loads(out), out + "\n", "decompose.json"


def cmd_boxdim(cfg: RunConfig):
    from .families import box_counting_dimension
    deltas = _deltas(cfg)
    if cfg.io.get("input"):
        fam = _read_family(cfg.io["input"], min(deltas))
    else:
        fam = _make_example(cfg, min(deltas))
    est = box_counting_dimension(fam, deltas)
    res = {"slope": est.fit, "cells": est.covered_cells, "deltas": est.deltas}
    return res, est.to_csv(), "boxdim.csv"


DISPATCH = {"net": cmd_net, "example": cmd_example, "spacing": cmd_spacing,
            "partition": cmd_partition, "rasterize": cmd_rasterize,
            "kakeya-sweep": cmd_kakeya_sweep, "bl": cmd_bl, "decompose": cmd_decompose,
            "boxdim": cmd_boxdim}

NEEDS_INPUT = {"spacing", "partition", "rasterize", "decompose"}
GRID_COMMANDS = {"rasterize", "kakeya-sweep", "boxdim"}


# ---------------------------------------------------------------------------
# validation and dispatch
# ---------------------------------------------------------------------------

def validate(cfg: RunConfig) -> list[str]:
    """All configuration problems found without running anything."""
    out = []
    if cfg.command not in COMMANDS:
        return [f"unknown command {cfg.command!r}"]
    p = cfg.params
    for key in NEEDS_INPUT:
        if cfg.command == key and not cfg.io.get("input"):
            out.append(f"{key} needs --input")
    for key in ("input", "instance"):
        path = cfg.io.get(key)
        if path and not os.path.isfile(path):
            out.append(f"{key} file not found: {path}")
    if cfg.command == "bl" and not cfg.io.get("instance"):
        out.append("bl needs --instance")
    bad = set(cfg.overrides) - OVERRIDE_KEYS - {"scale"}
    if bad:
        out.append(f"unknown override keys: {sorted(bad)}")
    k, d, n = p.get("k"), p.get("d"), p.get("n")
    if k is not None and d is not None and n is not None and not 0 < k <= d < n:
        out.append(f"need 0 < k <= d < n, got k={k}, d={d}, n={n}")
    beta = p.get("beta")
    if cfg.command == "kakeya-sweep" and beta is not None and not 0 <= beta <= 1:
        out.append(f"beta = {beta}: the Kakeya maximal inequality is stated for beta in [0, 1]")
    try:
        deltas = _deltas(cfg) if ("deltas" in p or "delta" in p) else []
    except (ValueError, ParameterError) as exc:
        out.append(f"bad scale: {exc}")
        deltas = []
    dim = n
    if cfg.command in GRID_COMMANDS and dim is None and cfg.io.get("input") and os.path.isfile(cfg.io["input"]):
        try:
            with open(cfg.io["input"]) as fh:
                for line in fh:
                    if line.strip() and not line.lstrip().startswith("#"):
                        dim = int(line.split()[0])
                        break
        except (ValueError, OSError):
            pass
    if cfg.command in GRID_COMMANDS and dim is not None:
        for dl in deltas:
            cells = (2 / dl + 1) ** dim
            if cells > MAX_CELLS:
                out.append(f"grid at delta={dl} in R^{dim} has (2/delta+1)^n = {cells:.4g} cells "
                           f"> {MAX_CELLS:.0e}")
    for key in ("delta",):
        if key in p and p[key] is not None:
            v = float(p[key])
            if not (v > 0 and abs(math.log2(v) - round(math.log2(v))) < 1e-12 and v <= 1):
                out.append(f"delta must be a negative power of 2, got {v}")
    return out


def run(cfg: RunConfig) -> OutputRecord:
    """Execute a validated config; raises on failure (see :func:`main`)."""
    t0 = time.perf_counter()
    results, artifact, default_name = DISPATCH[cfg.command](cfg)
    path = _resolve_out(cfg, default_name)
    if path is not None:
        atomic_write(path, artifact)
        results = dict(results, output=str(path))
    rec = OutputRecord(SCHEMA_VERSION, cfg.command,
                       {"params": _jsonable(cfg.params), "io": cfg.io, "seed": cfg.seed,
                        "overrides": _jsonable(cfg.overrides), "backend": _kernels.backend()},
                       _jsonable(results), time.perf_counter() - t0)
    if results.get("pass") is False or results.get("all_pass") is False:
        raise AuditFailure(rec.to_json())
    return rec


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{ln}: expected key = value")
            k, v = (t.strip() for t in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _scale_arg(text: str) -> float:
    try:
        return parse_scale(text)
    except (ValueError, ParameterError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kplanes", description=__doc__)
    ap.add_argument("--config", help="flat key = value file; flags override it")
    ap.add_argument("--threads", type=int, default=None, help="numba worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, dims=True):
        if dims:
            sp.add_argument("--k", type=int)
            sp.add_argument("--d", type=int)
            sp.add_argument("--n", type=int)
            sp.add_argument("--beta", type=float)
        sp.add_argument("--delta", type=_scale_arg)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="artifact path (default: $%s/<name>)" % OUTPUT_DIR_ENV)
        sp.add_argument("--output-dir")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override: " + ", ".join(sorted(OVERRIDE_KEYS)))

    sp = sub.add_parser("net", help="delta-net of G(k,n) or A(k,n)")
    common(sp)
    sp.add_argument("--linear", action="store_true", help="net of G(k,n) instead of A(k,n)")

    sp = sub.add_parser("example", help="sharp example or random Frostman family")
    common(sp)
    sp.add_argument("--kind", choices=["high_beta", "low_beta", "random_frostman"])
    sp.add_argument("--s", type=float)
    sp.add_argument("--M", type=float)
    sp.add_argument("--max-attempts", type=int)
    sp.add_argument("--allow-partial", action="store_true")

    sp = sub.add_parser("spacing", help="ball-count audit of a plane family")
    common(sp, dims=False)
    sp.add_argument("--input")
    sp.add_argument("--s", type=float)
    sp.add_argument("--M", type=float)

    sp = sub.add_parser("partition", help="split a point set into unit-constant parts")
    common(sp, dims=False)
    sp.add_argument("--input")
    sp.add_argument("--s", type=float)
    sp.add_argument("--M", type=float)

    sp = sub.add_parser("rasterize", help="incidence field of a plane family")
    common(sp, dims=False)
    sp.add_argument("--input")

    sp = sub.add_parser("kakeya-sweep", help="both sides of the Kakeya inequality over scales")
    common(sp)
    sp.add_argument("--deltas")
    sp.add_argument("--kind", choices=["high_beta", "low_beta", "random_frostman"])
    sp.add_argument("--input")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--p", type=float)
    sp.add_argument("--M", type=float)

    sp = sub.add_parser("bl", help="Brascamp-Lieb functional search")
    common(sp)
    sp.add_argument("--instance")

    sp = sub.add_parser("decompose", help="narrow/broad classification of a family")
    common(sp)
    sp.add_argument("--input")
    sp.add_argument("--K", type=float)

    sp = sub.add_parser("boxdim", help="box-counting dimension of a union of planes")
    common(sp)
    sp.add_argument("--deltas")
    sp.add_argument("--kind", choices=["high_beta", "low_beta", "random_frostman"])
    sp.add_argument("--input")
    return ap


_INT_KEYS = {"k", "d", "n", "seed", "max_attempts"}
_FLOAT_KEYS = {"beta", "s", "M", "eps", "p", "K"}
_SCALE_KEYS = {"delta"}
_IO_KEYS = {"input", "out", "output_dir", "instance"}


def _coerce(key: str, val):
    if val is None:
        return None
    if key in _INT_KEYS:
        return int(val)
    if key in _FLOAT_KEYS:
        return float(val)
    if key in _SCALE_KEYS:
        return parse_scale(val)
    if key in ("linear", "allow_partial") and isinstance(val, str):
        return val.lower() in ("1", "true", "yes")
    return val


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    merged: dict = {}
    if ns.config:
        merged.update(read_config_file(ns.config))
    for k, v in vars(ns).items():
        if k in ("config", "threads", "command", "set"):
            continue
        if v is None or v is False:
            continue
        merged[k] = v
    overrides = {}
    for item in getattr(ns, "set", []) or []:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = (t.strip() for t in item.split("=", 1))
        overrides[key] = val
    for key in list(merged):
        if key in OVERRIDE_KEYS and key not in ("K",):
            overrides.setdefault(key, merged.pop(key))
    io = {k: merged.pop(k) for k in list(merged) if k in _IO_KEYS}
    seed = int(merged.pop("seed", 0) or 0)
    params = {k: _coerce(k, v) for k, v in merged.items()}
    return RunConfig(ns.command, params, io, seed, overrides)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.threads:
        try:
            import numba
            numba.set_num_threads(min(ns.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    try:
        cfg = config_from_args(ns)
    except (InputError, ValueError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    problems = validate(cfg)
    if problems:
        for msg in problems:
            print(f"error: {msg}", file=sys.stderr)
        missing = any("not found" in m or "needs --" in m for m in problems)
        grid = any("cells" in m for m in problems)
        return EXIT_PARSE if missing else EXIT_RESOURCE if grid else EXIT_PRECONDITION
    from .spacing import PreconditionError
    try:
        rec = run(cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AuditFailure as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (ResourceError, MemoryError) as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (PreconditionError, ParameterError, KeyError) as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    print(rec.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
