"""Batch experiment runner.

    manifold-extremes SUBCOMMAND --config run.yaml [--seed N] [--threads N] [--out DIR]

The config is YAML or JSON with ``version: 1``. Every output file carries a
header (config hash, seed, version, wall-clock, module metadata) and a data
section that depends only on the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core_math import as_structure, structure_problems
from .evd import gumbel_limit_experiment, region_containment_experiment, tube_coverage_experiment
from .excursion import empirical_chi_excursion, empirical_excursion
from .field_sim import CovarianceModel
from .geometry import (
    ReachConstraintError, build_discretization_grid, build_epsilon_net, packing_bound, restricted_voronoi,
)
from .manifold import manifold_from_config
from .pickands import estimate_pickands

CONFIG_VERSION = 1
SUBCOMMANDS = ("net", "voronoi", "grid", "pickands", "excursion", "chi-excursion", "evd", "tube", "region")
EXIT_INVALID = 2
EXIT_FAILED = 1

REQUIRED = {
    "net": ["manifold", "epsilon"],
    "voronoi": ["manifold", "epsilon"],
    "grid": ["manifold", "structure", "h", "gamma", "theta"],
    "pickands": ["structure", "T", "gamma", "n_reps"],
    "excursion": ["manifold", "structure", "u", "n_reps", "grid_resolution"],
    "chi-excursion": ["manifold", "structure", "p", "u", "n_reps", "grid_resolution"],
    "evd": ["manifold", "structure", "h", "n_reps"],
    "tube": ["manifold", "structure", "p", "h", "alpha", "n_trials"],
    "region": ["manifold", "structure", "h", "alpha", "n_trials", "g0", "f"],
}


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# -- config ----------------------------------------------------------------------

def load_config(path) -> dict:
    text = Path(path).read_text()
    cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError([f"config {path} must be a mapping at the top level"])
    return cfg


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _num(cfg, key, errors, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    if key not in cfg:
        return
    v = cfg[key]
    vals = _as_list(v)
    for x in vals:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or (integer and int(x) != x):
            errors.append(f"{key}={x!r} must be {'an integer' if integer else 'a number'}")
            continue
        if lo is not None and (x <= lo if lo_open else x < lo):
            errors.append(f"{key}={x} must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (x >= hi if hi_open else x > hi):
            errors.append(f"{key}={x} must be {'<' if hi_open else '<='} {hi}")


def validate(sub: str, cfg: dict) -> list[str]:
    """Every violated precondition of the run, as messages."""
    errors = []
    if sub not in SUBCOMMANDS:
        return [f"unknown subcommand {sub!r}; expected one of {', '.join(SUBCOMMANDS)}"]
    if cfg.get("version") != CONFIG_VERSION:
        errors.append(f"config version must be {CONFIG_VERSION}, got {cfg.get('version')!r}")
    for key in REQUIRED[sub]:
        if key not in cfg:
            errors.append(f"missing required key {key!r} for {sub}")
    if "structure" in cfg:
        st = cfg["structure"]
        if not isinstance(st, dict) or "block_sizes" not in st or "exponents" not in st:
            errors.append("structure needs block_sizes and exponents")
        else:
            errors += structure_problems(st["block_sizes"], st["exponents"], st.get("manifold_dims"))
    if "manifold" in cfg:
        try:
            manifold_from_config(cfg["manifold"])
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"manifold: {exc}")
    _num(cfg, "seed", errors, lo=0, integer=True)
    _num(cfg, "epsilon", errors, lo=0, lo_open=True)
    _num(cfg, "n_reps", errors, lo=1, integer=True)
    _num(cfg, "n_trials", errors, lo=1, integer=True)
    _num(cfg, "grid_resolution", errors, lo=8, integer=True)
    _num(cfg, "candidate_resolution", errors, lo=8, integer=True)
    _num(cfg, "T", errors, lo=0, lo_open=True)
    _num(cfg, "gamma", errors, lo=0, lo_open=True)
    _num(cfg, "theta", errors, lo=0, lo_open=True)
    _num(cfg, "p", errors, lo=1, integer=True)
    _num(cfg, "alpha", errors, lo=0, hi=1, lo_open=True, hi_open=True)
    _num(cfg, "grid_step", errors, lo=0, lo_open=True)
    if sub == "grid":
        _num(cfg, "h", errors, lo=0, hi=1, lo_open=True)
    else:
        _num(cfg, "h", errors, lo=0, hi=1, lo_open=True, hi_open=True)
    if sub in ("excursion", "chi-excursion"):
        _num(cfg, "u", errors, lo=0, lo_open=True)
    if sub == "pickands" and cfg.get("method", "ratio") not in ("ratio", "shift", "direct"):
        errors.append(f"method={cfg.get('method')!r} must be one of ratio, shift, direct")
    if sub == "evd" and "h" in cfg:
        hs = _as_list(cfg["h"])
        if any(b >= a for a, b in zip(hs, hs[1:])):
            errors.append(f"h list {hs} must be strictly decreasing")
    kern = cfg.get("kernel", {})
    if not isinstance(kern, dict):
        errors.append("kernel must be a mapping")
    elif "D" in kern and "structure" in cfg and not errors:
        try:
            _model(cfg)
        except (ValueError, TypeError) as exc:
            errors.append(f"kernel: {exc}")
    if sub == "region" and isinstance(cfg.get("f"), dict) and "center" not in cfg["f"]:
        errors.append("f needs a center (f(s) = g0 + scale * (||s - center|| - level))")
    return errors


def _model(cfg: dict) -> CovarianceModel:
    s = as_structure(cfg["structure"])
    D = cfg.get("kernel", {}).get("D", 1.0)
    if isinstance(D, (int, float)):
        D = float(D) * np.eye(s.n)
    else:
        D = np.asarray(D, dtype=float)
        if D.ndim == 1:
            D = np.diag(D)
    return CovarianceModel(s, "powered_exponential", D)


# -- subcommands -------------------------------------------------------------------

def _run_net(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    eps = float(cfg["epsilon"])
    enforce = bool(cfg.get("enforce_reach", True))
    net = build_epsilon_net(M, eps, int(cfg.get("candidate_resolution", 10000)), enforce_reach=enforce)
    cert = net.certify()
    data = {"epsilon": eps, "certification": cert, "points": net.points.tolist()}
    try:
        data["packing_bound"] = packing_bound(M, eps)
    except ReachConstraintError:
        data["packing_bound"] = None
    return data, {"candidates": int(len(net.candidates))}


def _run_voronoi(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    eps = float(cfg["epsilon"])
    net = build_epsilon_net(M, eps, int(cfg.get("candidate_resolution", 10000)),
                            enforce_reach=bool(cfg.get("enforce_reach", True)))
    sample, _ = M.quadrature(int(cfg.get("sample_resolution", cfg.get("candidate_resolution", 10000))))
    vor = restricted_voronoi(net, sample)
    meta = {
        "epsilon": eps, "sample_points": int(len(sample)), "seeds": net.points.tolist(),
        "cell_sizes": vor.cell_sizes().tolist(), "cell_components": vor.cell_components().tolist(),
        "sandwich": vor.sandwich_check(),
    }
    return (["point_index", "seed_index", "distance"], vor.rows()), meta


def _run_grid(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    g = build_discretization_grid(M, as_structure(cfg["structure"]), float(cfg["h"]),
                                  float(cfg["gamma"]), float(cfg["theta"]))
    return {**g.summary(), "points": g.points.tolist()}, {"n_points": int(len(g.points))}


def _run_pickands(cfg, seed, threads):
    est = estimate_pickands(as_structure(cfg["structure"]), float(cfg["T"]), float(cfg["gamma"]),
                            int(cfg["n_reps"]), seed, method=cfg.get("method", "ratio"), threads=threads)
    return est.to_dict(), {"excluded": est.excluded, "factorization": est.meta["factorization"]}


EXCURSION_FIELDS = ["u", "asymptotic", "empirical", "stderr", "n_reps", "grid_points"]


def _run_excursion(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    reports = empirical_excursion(M, _model(cfg), _as_list(cfg["u"]), int(cfg["n_reps"]),
                                  int(cfg["grid_resolution"]), seed, threads=threads,
                                  pickands=cfg.get("pickands"), voronoi_epsilon=cfg.get("voronoi_epsilon"))
    rows = [[r.u, r.asymptotic, r.empirical, r.mc_std_error, r.n_reps, r.grid_meta["grid_points"]]
            for r in reports]
    meta = {"flags": {str(r.u): r.flags for r in reports},
            "coarse_empirical": {str(r.u): r.grid_meta["coarse_empirical"] for r in reports}}
    if reports and reports[0].bonferroni is not None:
        meta["bonferroni"] = {str(r.u): r.bonferroni for r in reports}
    return (EXCURSION_FIELDS, rows), meta


def _run_chi_excursion(cfg, seed, threads):
    L = manifold_from_config(cfg["manifold"])
    reports = empirical_chi_excursion(L, _model(cfg), int(cfg["p"]), _as_list(cfg["u"]), int(cfg["n_reps"]),
                                      int(cfg["grid_resolution"]), seed, threads=threads,
                                      pickands=cfg.get("pickands"),
                                      sphere_resolution=int(cfg.get("sphere_resolution", 64)))
    fields = EXCURSION_FIELDS + ["lift_empirical"]
    rows = [[r.u, r.asymptotic, r.empirical, r.mc_std_error, r.n_reps, r.grid_meta["grid_points"],
             r.grid_meta.get("lift_empirical", "")] for r in reports]
    return (fields, rows), {"p": int(cfg["p"])}


def _run_evd(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    out = gumbel_limit_experiment(M, _model(cfg), _as_list(cfg["h"]), int(cfg["n_reps"]), seed,
                                  grid_step=float(cfg.get("grid_step", 0.25)), pickands=cfg.get("pickands"),
                                  threads=threads)
    meta = {"grid_points": [r["grid_points"] for r in out["rows"]],
            "factorization": [r.pop("factorization") for r in out["rows"]]}
    return out, meta


def _run_tube(cfg, seed, threads):
    L = manifold_from_config(cfg["manifold"])
    out = tube_coverage_experiment(L, _model(cfg), int(cfg["p"]), float(cfg["h"]), float(cfg["alpha"]),
                                   int(cfg["n_trials"]), seed, grid_step=float(cfg.get("grid_step", 0.2)),
                                   threads=threads, pickands=cfg.get("pickands"))
    return out, {"grid_points": out["grid_points"], "factorization": out.pop("factorization")}


def _run_region(cfg, seed, threads):
    M = manifold_from_config(cfg["manifold"])
    fc = cfg["f"]
    center = np.asarray(fc["center"], dtype=float)
    scale = float(fc.get("scale", 1.0))
    level = float(fc.get("level", 0.0))
    g0 = float(cfg["g0"])

    def f(A):
        return g0 + scale * (np.linalg.norm(A - center, axis=1) - level)

    bounds = tuple(tuple(b) for b in cfg.get("ambient_bounds", [[0.0, 1.0], [0.0, 1.0]]))
    out = region_containment_experiment(M, _model(cfg), f, g0, float(cfg["h"]), float(cfg["alpha"]),
                                        int(cfg["n_trials"]), seed, ambient_bounds=bounds,
                                        ambient_count=int(cfg.get("ambient_count", 20)),
                                        grid_step=float(cfg.get("grid_step", 0.2)), threads=threads,
                                        pickands=cfg.get("pickands"))
    return out, {"grid_points": out["grid_points"], "factorization": out.pop("factorization")}


RUNNERS = {
    "net": _run_net, "voronoi": _run_voronoi, "grid": _run_grid, "pickands": _run_pickands,
    "excursion": _run_excursion, "chi-excursion": _run_chi_excursion, "evd": _run_evd,
    "tube": _run_tube, "region": _run_region,
}
CSV_SUBCOMMANDS = ("voronoi", "excursion", "chi-excursion")


# -- output ------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(_clean(cfg), sort_keys=True).encode()).hexdigest()


def data_section(sub: str, data) -> str:
    """Deterministic serialization of a run's data."""
    if sub in CSV_SUBCOMMANDS:
        fields, rows = data
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()
    return json.dumps(_clean(data), sort_keys=True, indent=2) + "\n"


def write_output(sub: str, out_dir: Path, header: dict, data) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    name = sub.replace("-", "_")
    body = data_section(sub, data)
    if sub in CSV_SUBCOMMANDS:
        path = out_dir / f"{name}.csv"
        lines = [f"# {k}: {json.dumps(_clean(v), sort_keys=True)}" for k, v in header.items()]
        path.write_text("\n".join(lines) + "\n" + body)
    else:
        path = out_dir / f"{name}.json"
        head = json.dumps(_clean(header), sort_keys=True)
        path.write_text('{"header": ' + head + ',\n"data": ' + body + "}\n")
    return path


def read_data_section(path) -> str:
    """The data part of an output file, for determinism checks."""
    text = Path(path).read_text()
    if str(path).endswith(".csv"):
        return "".join(line + "\n" for line in text.splitlines() if not line.startswith("#"))
    return json.dumps(json.loads(text)["data"], sort_keys=True)


def run(sub: str, cfg: dict, *, seed: int | None = None, threads: int = 1, out: str | None = None) -> Path:
    """Validate, execute and write one run; returns the output path."""
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    errors = validate(sub, cfg)
    if threads < 1:
        errors.append(f"threads={threads} must be at least 1")
    if errors:
        raise ConfigError(errors)
    out_dir = Path(out if out is not None else cfg.get("out", "results"))
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    data, meta = RUNNERS[sub](cfg, int(cfg["seed"]), int(threads))
    header = {
        "subcommand": sub, "version": __version__, "config_version": CONFIG_VERSION,
        "config_hash": config_hash(cfg), "seed": int(cfg["seed"]), "threads": int(threads),
        "started_utc": started.isoformat(), "wall_clock_s": round(time.perf_counter() - t0, 3),
        "config": cfg, "meta": meta,
    }
    return write_output(sub, out_dir, header, data)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="manifold-extremes", description=__doc__.split("\n\n")[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="YAML or JSON run config (version: 1)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    ap.add_argument("--out", default=None, help="output directory (overrides config 'out')")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        path = run(args.subcommand, cfg, seed=args.seed, threads=args.threads, out=args.out)
    except ConfigError as exc:
        json.dump({"status": "invalid", "errors": exc.errors}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return EXIT_INVALID
    except (ValueError, FloatingPointError, OSError) as exc:
        json.dump({"status": "failed", "error": type(exc).__name__, "message": str(exc)}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return EXIT_FAILED
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
