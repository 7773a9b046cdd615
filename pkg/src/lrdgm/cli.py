"""Command line interface: generate, fit, eval, benchmark.

Conventions shared by all commands:

* numeric CSV files are comma separated with full-precision ``repr`` floats,
  so reading them back reproduces the arrays bit for bit;
* every output directory gets a ``manifest.json`` recording the command, the
  package version, the seed, the resolved parameters and a hash of them;
* ``--config FILE`` supplies parameters from a JSON object, explicit flags
  win over the file, and unknown keys in the file are rejected;
* relative ``--out`` paths are placed under ``$LRDGM_OUTPUT_ROOT`` when that
  variable is set.

Exit codes: 0 success, 2 validation or configuration error, 3 I/O error,
4 optimizer line-search failure (outputs are still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, graphgen, solver
from .graph import DEFAULT_EDGE_THRESHOLD
from .manifold import FactorPoint
from .metrics import evaluate_sequence
from .model import EllipticalFamily, ModelConfig, PrecisionSequence, WindowedDataset

OUTPUT_ROOT_ENV = "LRDGM_OUTPUT_ROOT"

GENERATE_DEFAULTS = {
    "kind": "er", "p": 30, "T": 3, "n": 100, "seed": 0,
    "family": "gaussian", "nu": None, "frac": 0.10,
    "edge_prob": 0.10, "m": 2, "k": 4, "beta": 0.30,
    "sigma": 0.5, "prune": 0.5, "kappa": 0.10,
    "rank": 3, "density": 0.2,
    "load_min": 1.0, "load_max": 3.0, "diag_min": 0.5, "diag_max": 1.5,
}

PRESETS = {
    "er-small": {"kind": "er", "p": 50, "T": 5, "n": 200, "edge_prob": 0.10,
                 "family": "gaussian"},
    "lrad-heavy": {"kind": "lrad", "p": 50, "rank": 10, "T": 5, "n": 200,
                   "family": "student_t", "nu": 2.0},
}

FIT_DEFAULTS = {
    "family": "gaussian", "nu": None, "lam": 0.0, "mu": 0.0, "epsilon": 1e-3,
    "rank": None, "eps_tol": 1e-6, "max_iter": 500, "wolfe_c1": 1e-4,
    "wolfe_c2": 0.9, "restart_c0": 1e-4, "ls_max_evals": 40, "seed": 0,
    "deterministic": True, "structured": True,
}

EVAL_DEFAULTS = {"tau": DEFAULT_EDGE_THRESHOLD}

BENCHMARK_DEFAULTS = dict(GENERATE_DEFAULTS)
BENCHMARK_DEFAULTS.update({k: v for k, v in FIT_DEFAULTS.items()
                           if k not in ("seed", "rank")})
BENCHMARK_DEFAULTS.update({"p_grid": "100,200", "seeds": "0,1,2", "n": "match-p"})

_KIND_KEYS = {
    "er": ("edge_prob", "kappa"),
    "ba": ("m", "kappa"),
    "ws": ("k", "beta", "kappa"),
    "rgg": ("sigma", "prune", "kappa"),
    "lrad": ("rank", "density", "load_min", "load_max", "diag_min", "diag_max"),
}
_COMMON_GEN_KEYS = ("kind", "p", "T", "n", "seed", "family", "nu", "frac")


# ---------------------------------------------------------------- file I/O

def _resolve_out(path_str: str) -> Path:
    p = Path(path_str)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _write_float_csv(path: Path, arr) -> None:
    A = np.atleast_2d(np.asarray(arr, dtype=float))
    lines = [",".join(repr(float(v)) for v in row) for row in A]
    path.write_text("\n".join(lines) + "\n")


def _write_int_csv(path: Path, arr) -> None:
    A = np.atleast_2d(np.asarray(arr))
    lines = [",".join(str(int(v)) for v in row) for row in A]
    path.write_text("\n".join(lines) + "\n")


def _read_matrix(path: Path) -> np.ndarray:
    return np.loadtxt(str(path), delimiter=",", ndmin=2)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_trace_csv(path: Path, trace: solver.SolverTrace) -> None:
    lines = ["iter,objective,max_grad_norm,step,restarted"]
    for row in trace.rows():
        lines.append("%d,%s,%s,%s,%d" % (
            row["iter"], repr(row["objective"]), repr(row["max_grad_norm"]),
            repr(row["step"]), int(row["restarted"])))
    path.write_text("\n".join(lines) + "\n")


def _load_windows(data_dir: Path) -> WindowedDataset:
    files = sorted(data_dir.glob("window_*.csv"))
    if not files:
        raise FileNotFoundError(f"no window_*.csv files in {data_dir}")
    return WindowedDataset(tuple(_read_matrix(f) for f in files))


def _load_truth(data_dir: Path):
    pfiles = sorted(data_dir.glob("truth_precision_*.csv"))
    efiles = sorted(data_dir.glob("truth_edges_*.csv"))
    if not pfiles or len(pfiles) != len(efiles):
        raise FileNotFoundError(f"incomplete ground truth files in {data_dir}")
    precisions = [_read_matrix(f) for f in pfiles]
    edges = [_read_matrix(f).astype(int) for f in efiles]
    return precisions, edges


def _load_fit_sequence(fit_dir: Path) -> PrecisionSequence:
    yfiles = sorted(fit_dir.glob("factor_Y_*.csv"))
    dfiles = sorted(fit_dir.glob("factor_D_*.csv"))
    if not yfiles or len(yfiles) != len(dfiles):
        raise FileNotFoundError(f"incomplete factor files in {fit_dir}")
    pts = [FactorPoint(_read_matrix(y), _read_matrix(d).ravel())
           for y, d in zip(yfiles, dfiles)]
    return PrecisionSequence(tuple(pts))


def _read_manifest(data_dir: Path) -> dict | None:
    f = data_dir / "manifest.json"
    if not f.exists():
        return None
    try:
        return json.loads(f.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed manifest {f}: {e}")


# ------------------------------------------------------------ param merging

def _load_config_file(path: str | None, known: dict) -> dict:
    if path is None:
        return {}
    f = Path(path)
    try:
        raw = json.loads(f.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed config file {f}: {e}")
    if not isinstance(raw, dict):
        raise ValueError(f"config file {f} must hold a JSON object")
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def _merge_params(defaults: dict, ns: argparse.Namespace,
                  preset: dict | None = None) -> dict:
    params = dict(defaults)
    if preset:
        params.update(preset)
    params.update(_load_config_file(getattr(ns, "config", None), defaults))
    for key in defaults:
        v = getattr(ns, key, None)
        if v is not None:
            params[key] = v
    return params


def _parse_counts(n, T: int) -> list:
    if isinstance(n, int):
        counts = [n] * T
    else:
        parts = [s for s in str(n).split(",") if s]
        counts = [int(s) for s in parts]
        if len(counts) == 1:
            counts = counts * T
    if len(counts) != T:
        raise ValueError(f"{len(counts)} sample counts for {T} windows")
    if any(c < 1 for c in counts):
        raise ValueError("every window needs at least one sample")
    return counts


def _parse_int_list(s: str) -> list:
    vals = [int(x) for x in str(s).split(",") if x != ""]
    if not vals:
        raise ValueError(f"empty integer list {s!r}")
    return vals


# ----------------------------------------------------------------- generate

def _build_truth(params: dict, rng: np.random.Generator) -> graphgen.GroundTruth:
    kind = params["kind"]
    p, T, frac = params["p"], params["T"], params["frac"]
    if kind == "er":
        gm = graphgen.ErdosRenyi(edge_prob=params["edge_prob"])
    elif kind == "ba":
        gm = graphgen.BarabasiAlbert(m=params["m"])
    elif kind == "ws":
        gm = graphgen.WattsStrogatz(k=params["k"], beta=params["beta"])
    elif kind == "rgg":
        gm = graphgen.GaussianRGG(sigma=params["sigma"], prune=params["prune"])
    elif kind == "lrad":
        return graphgen.lrad_truth_sequence(
            p, params["rank"], T, rng, frac=frac, density=params["density"],
            load_range=(params["load_min"], params["load_max"]),
            diag_range=(params["diag_min"], params["diag_max"]))
    else:
        raise ValueError(f"unknown truth kind {kind!r}")
    return graphgen.graph_truth_sequence(gm, p, T, rng, frac=frac, kappa=params["kappa"])


def _manifest_params(params: dict) -> dict:
    kind = params["kind"]
    if kind not in _KIND_KEYS:
        raise ValueError(f"unknown truth kind {kind!r}")
    keys = _COMMON_GEN_KEYS + _KIND_KEYS[kind]
    return {k: params[k] for k in keys}


def _cmd_generate(ns: argparse.Namespace) -> int:
    preset = None
    if ns.preset is not None:
        if ns.preset not in PRESETS:
            raise ValueError(f"unknown preset {ns.preset!r}; choose from "
                             f"{', '.join(sorted(PRESETS))}")
        preset = PRESETS[ns.preset]
    params = _merge_params(GENERATE_DEFAULTS, ns, preset)
    if params["T"] < 1:
        raise ValueError("need at least one window")
    counts = _parse_counts(params["n"], params["T"])
    if params["family"] == "student_t" and (params["nu"] is None or params["nu"] <= 0):
        raise ValueError("student_t sampling requires --nu > 0")

    out = _resolve_out(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(int(params["seed"]))
    truth_ss, data_ss = ss.spawn(2)
    rng = np.random.Generator(np.random.PCG64(truth_ss))
    truth = _build_truth(params, rng)
    data = graphgen.sample_dataset(truth, counts, data_ss,
                                   family=params["family"], nu=params["nu"])

    files = []
    for t, X in enumerate(data.windows):
        name = f"window_{t:03d}.csv"
        _write_float_csv(out / name, X)
        files.append(name)
    for t in range(truth.T):
        pn, en = f"truth_precision_{t:03d}.csv", f"truth_edges_{t:03d}.csv"
        _write_float_csv(out / pn, truth.precisions[t])
        _write_int_csv(out / en, truth.edges[t])
        files += [pn, en]
    if truth.factors is not None:
        for t, fp in enumerate(truth.factors):
            yn, dn = f"truth_Y_{t:03d}.csv", f"truth_D_{t:03d}.csv"
            _write_float_csv(out / yn, fp.Y)
            _write_float_csv(out / dn, fp.D[None, :])
            files += [yn, dn]

    mparams = _manifest_params(params)
    mparams["n"] = counts
    _write_json(out / "manifest.json", {
        "command": "generate",
        "version": __version__,
        "preset": ns.preset,
        "seed": int(params["seed"]),
        "params": mparams,
        "config_hash": _config_hash(mparams),
        "files": files,
    })
    return 0


# ---------------------------------------------------------------------- fit

def _solver_config(params: dict) -> solver.SolverConfig:
    if params["family"] == "student_t":
        family = EllipticalFamily.student_t(params["nu"])
    else:
        family = EllipticalFamily.gaussian()
    if params["rank"] is None:
        raise ValueError("rank is required (flag --rank, config key, or data manifest)")
    mcfg = ModelConfig(family=family, lam=float(params["lam"]), mu=float(params["mu"]),
                       rank=int(params["rank"]), epsilon=float(params["epsilon"]))
    return solver.SolverConfig(
        model=mcfg, eps_tol=float(params["eps_tol"]), max_iter=int(params["max_iter"]),
        wolfe_c1=float(params["wolfe_c1"]), wolfe_c2=float(params["wolfe_c2"]),
        restart_c0=float(params["restart_c0"]), ls_max_evals=int(params["ls_max_evals"]),
        seed=int(params["seed"]), deterministic=bool(params["deterministic"]),
        structured=bool(params["structured"]))


def _jsonable_fit_params(params: dict) -> dict:
    return {k: params[k] for k in FIT_DEFAULTS}


def _cmd_fit(ns: argparse.Namespace) -> int:
    params = _merge_params(FIT_DEFAULTS, ns)
    data_dir = Path(ns.data)
    data = _load_windows(data_dir)
    dm = _read_manifest(data_dir)
    if params["rank"] is None and dm is not None:
        params["rank"] = dm.get("params", {}).get("rank")
    cfg = _solver_config(params)

    seq, trace = solver.fit(data, cfg)

    out = _resolve_out(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for t, th in enumerate(seq.points):
        yn, dn = f"factor_Y_{t:03d}.csv", f"factor_D_{t:03d}.csv"
        _write_float_csv(out / yn, th.Y)
        _write_float_csv(out / dn, th.D[None, :])
        files += [yn, dn]
    _write_trace_csv(out / "trace.csv", trace)
    files.append("trace.csv")

    fparams = _jsonable_fit_params(params)
    _write_json(out / "manifest.json", {
        "command": "fit",
        "version": __version__,
        "seed": int(params["seed"]),
        "params": fparams,
        "config_hash": _config_hash(fparams),
        "data_dir": str(data_dir),
        "data_config_hash": (dm or {}).get("config_hash"),
        "termination": trace.termination,
        "detail": trace.detail,
        "iterations": trace.num_iterations,
        "final_objective": float(trace.objective[-1]),
        "final_max_grad_norm": float(trace.max_grad_norm[-1]),
        "files": files,
    })
    return 4 if trace.termination == "line_search_failure" else 0


# --------------------------------------------------------------------- eval

def _cmd_eval(ns: argparse.Namespace) -> int:
    params = _merge_params(EVAL_DEFAULTS, ns)
    if len(ns.data) != len(ns.fit):
        raise ValueError(f"{len(ns.data)} data dirs but {len(ns.fit)} fit dirs")
    tau = float(params["tau"])
    reports = []
    for ddir, fdir in zip(ns.data, ns.fit):
        precisions, edges = _load_truth(Path(ddir))
        seq = _load_fit_sequence(Path(fdir))
        rep = evaluate_sequence(seq, precisions, edges, tau)
        entry = rep.as_dict()
        entry["data_dir"] = str(ddir)
        entry["fit_dir"] = str(fdir)
        reports.append(entry)

    out = _resolve_out(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": "eval", "version": __version__, "tau": tau}
    if len(reports) == 1:
        doc.update(reports[0])
    else:
        doc["pairs"] = reports
        agg = {}
        for key in ("auc", "f1", "mean_geodesic_error", "temporal_variation"):
            vals = [r[key] for r in reports if r[key] is not None]
            if vals:
                agg[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        doc["aggregate"] = agg
    _write_json(out / "report.json", doc)
    return 0


# ---------------------------------------------------------------- benchmark

def _cmd_benchmark(ns: argparse.Namespace) -> int:
    preset = None
    if ns.preset is not None:
        if ns.preset not in PRESETS:
            raise ValueError(f"unknown preset {ns.preset!r}")
        preset = PRESETS[ns.preset]
    params = _merge_params(BENCHMARK_DEFAULTS, ns, preset)
    p_grid = _parse_int_list(params["p_grid"])
    seeds = _parse_int_list(params["seeds"])

    out = _resolve_out(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in p_grid:
        for seed in seeds:
            gp = dict(params)
            gp["p"] = p
            gp["seed"] = seed
            n = p if str(params["n"]) == "match-p" else params["n"]
            counts = _parse_counts(n, gp["T"])
            ss = np.random.SeedSequence(int(seed))
            truth_ss, data_ss = ss.spawn(2)
            rng = np.random.Generator(np.random.PCG64(truth_ss))
            truth = _build_truth(gp, rng)
            data = graphgen.sample_dataset(truth, counts, data_ss,
                                           family=gp["family"], nu=gp["nu"])
            cfg = _solver_config(gp)
            t0 = time.perf_counter()
            seq, trace = solver.fit(data, cfg)
            seconds = time.perf_counter() - t0
            rep = evaluate_sequence(seq, list(truth.precisions), list(truth.edges),
                                    DEFAULT_EDGE_THRESHOLD)
            iters = trace.num_iterations
            rows.append({
                "p": p, "seed": seed, "n": counts[0], "fit_seconds": seconds,
                "iterations": iters,
                "seconds_per_iteration": seconds / max(1, iters),
                "termination": trace.termination,
                "final_objective": float(trace.objective[-1]),
                "final_max_grad_norm": float(trace.max_grad_norm[-1]),
                "auc": rep.auc, "f1": rep.f1,
                "mean_geodesic_error": rep.mean_geodesic_error,
            })

    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for k in header:
            v = row[k]
            cells.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    (out / "benchmark.csv").write_text("\n".join(lines) + "\n")

    agg = {}
    for p in p_grid:
        sub = [r for r in rows if r["p"] == p]
        agg[str(p)] = {
            "fit_seconds": {"mean": float(np.mean([r["fit_seconds"] for r in sub])),
                            "std": float(np.std([r["fit_seconds"] for r in sub]))},
            "seconds_per_iteration": {
                "mean": float(np.mean([r["seconds_per_iteration"] for r in sub])),
                "std": float(np.std([r["seconds_per_iteration"] for r in sub]))},
            "auc": {"mean": float(np.mean([r["auc"] for r in sub])),
                    "std": float(np.std([r["auc"] for r in sub]))},
        }
    bparams = {k: params[k] for k in sorted(BENCHMARK_DEFAULTS)}
    _write_json(out / "aggregate.json", agg)
    _write_json(out / "manifest.json", {
        "command": "benchmark",
        "version": __version__,
        "params": bparams,
        "config_hash": _config_hash(bparams),
        "files": ["benchmark.csv", "aggregate.json"],
    })
    return 0


# ------------------------------------------------------------------- parser

def _add_generate_opts(sp):
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--preset", choices=sorted(PRESETS), help="named parameter bundle")
    sp.add_argument("--config", help="JSON file with parameter overrides")
    sp.add_argument("--kind", choices=sorted(_KIND_KEYS))
    sp.add_argument("--p", type=int)
    sp.add_argument("--T", type=int, dest="T")
    sp.add_argument("--n", help="samples per window: one integer or a comma list")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--family", choices=["gaussian", "student_t"])
    sp.add_argument("--nu", type=float)
    sp.add_argument("--frac", type=float, help="fraction of edges or loadings redrawn per step")
    sp.add_argument("--edge-prob", type=float)
    sp.add_argument("--m", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--prune", type=float)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--density", type=float)
    sp.add_argument("--load-min", type=float)
    sp.add_argument("--load-max", type=float)
    sp.add_argument("--diag-min", type=float)
    sp.add_argument("--diag-max", type=float)


def _add_fit_opts(sp):
    sp.add_argument("--data", required=True, help="directory produced by generate")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--config", help="JSON file with parameter overrides")
    sp.add_argument("--family", choices=["gaussian", "student_t"])
    sp.add_argument("--nu", type=float)
    sp.add_argument("--lam", type=float, help="sparsity penalty weight")
    sp.add_argument("--mu", type=float, help="temporal coupling weight")
    sp.add_argument("--epsilon", type=float, help="penalty smoothing scale")
    sp.add_argument("--rank", type=int)
    sp.add_argument("--eps-tol", type=float)
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--wolfe-c1", type=float)
    sp.add_argument("--wolfe-c2", type=float)
    sp.add_argument("--restart-c0", type=float)
    sp.add_argument("--ls-max-evals", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--structured", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lrdgm",
        description="Time-varying sparse precision estimation with "
                    "low-rank-plus-diagonal structure.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate ground truth and data windows")
    _add_generate_opts(g)
    g.set_defaults(func=_cmd_generate)

    f = sub.add_parser("fit", help="fit a precision sequence to data windows")
    _add_fit_opts(f)
    f.set_defaults(func=_cmd_fit)

    e = sub.add_parser("eval", help="score fits against ground truth")
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--fit", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="JSON file with parameter overrides")
    e.add_argument("--tau", type=float, help="edge threshold on |conditional correlation|")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("benchmark", help="timing and accuracy over a dimension grid")
    b.add_argument("--out", required=True)
    b.add_argument("--preset", choices=sorted(PRESETS))
    b.add_argument("--config", help="JSON file with parameter overrides")
    b.add_argument("--p-grid", help="comma list of dimensions")
    b.add_argument("--seeds", help="comma list of seeds")
    b.add_argument("--kind", choices=sorted(_KIND_KEYS))
    b.add_argument("--T", type=int, dest="T")
    b.add_argument("--n", help="samples per window, or match-p")
    b.add_argument("--family", choices=["gaussian", "student_t"])
    b.add_argument("--nu", type=float)
    b.add_argument("--frac", type=float)
    b.add_argument("--edge-prob", type=float)
    b.add_argument("--m", type=int)
    b.add_argument("--k", type=int)
    b.add_argument("--beta", type=float)
    b.add_argument("--sigma", type=float)
    b.add_argument("--prune", type=float)
    b.add_argument("--kappa", type=float)
    b.add_argument("--density", type=float)
    b.add_argument("--load-min", type=float)
    b.add_argument("--load-max", type=float)
    b.add_argument("--diag-min", type=float)
    b.add_argument("--diag-max", type=float)
    b.add_argument("--lam", type=float)
    b.add_argument("--mu", type=float)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--rank", type=int)
    b.add_argument("--eps-tol", type=float)
    b.add_argument("--max-iter", type=int)
    b.add_argument("--wolfe-c1", type=float)
    b.add_argument("--wolfe-c2", type=float)
    b.add_argument("--restart-c0", type=float)
    b.add_argument("--ls-max-evals", type=int)
    b.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    b.add_argument("--structured", action=argparse.BooleanOptionalAction, default=None)
    b.set_defaults(func=_cmd_benchmark)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return ns.func(ns)
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
