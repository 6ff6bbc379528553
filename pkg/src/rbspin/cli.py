"""Command-line front end.

Exit codes: 0 success, 2 configuration/usage error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import default_config_text, load_config, select_momenta
from .diagnostics import basis_size_for, error_report, snapshot_svd
from .errors import ConfigError, SolverError, TrainingAborted
from .io import fmt, load_model, read_header, save_model, write_csv, write_json
from .models import build_model, model_coefficients
from .offline import GreedyConfig, greedy_train
from .online import scan

log = logging.getLogger("rbspin")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
# truth solves (svd, validate) are refused above this Hilbert dimension
TRUTH_DIM_CAP = 2 ** 16
MODEL_FILE = "model.rbm"


def _threads(args, cfg):
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.threads
    if cfg is not None and cfg["threads"] is not None:
        return cfg["threads"]
    return os.cpu_count() or 1


def _load_cfg(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides or None)
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guard_truth(lattice):
    if lattice.dim > TRUTH_DIM_CAP:
        raise ConfigError(
            f"Hilbert dimension {lattice.dim} exceeds the desk-scale truth cap {TRUTH_DIM_CAP}; "
            "use a smaller lattice for svd/validate runs"
        )


def _k_label(k, ndim):
    k = np.atleast_1d(k) / np.pi
    if ndim == 1:
        return f"S[k={fmt(k[0])}pi]"
    return f"S[kx={fmt(k[0])}pi,ky={fmt(k[1])}pi]"


# --------------------------------------------------------------------- offline
def cmd_offline(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    t = cfg["train"]
    s = cfg["solver"]
    op, lattice, sf = build_model(cfg.kind, cfg["model"]["Nx"], cfg["model"]["Ny"], cfg.domain)
    gcfg = GreedyConfig(
        train_grid=cfg.grid("train"),
        tol=float(t["tol"]),
        n_f=t["n_f"],
        mu_1=None if t["mu_1"] is None else np.asarray(t["mu_1"], dtype=float),
        compress_tol=float(t["compress_tol"]),
        max_basis=t["max_basis"],
        tol_resid=float(s["tol_resid"]),
        tol_degeneracy=float(s["tol_degeneracy"]),
        seed=cfg["seed"],
        threads=_threads(args, cfg),
        residual_method=t["residual"],
        dense_cap=s["dense_cap"],
        max_iter=s["max_iter"],
        extra={"model": cfg.model_spec},
    )
    store_basis = cfg["output"]["store_basis"] and not args.no_store_basis
    log_path = out / "training_log.jsonl"
    model_path = out / MODEL_FILE
    with open(log_path, "w") as fh:

        def record(entry):
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()

        try:
            rbm = greedy_train(op, [sf], gcfg, record)
        except TrainingAborted as exc:
            partial = exc.partial
            if partial is not None and partial.N > 0:
                partial.precompute_observable(sf)
                save_model(partial, model_path.with_name(MODEL_FILE + ".partial"), cfg.model_spec, store_basis)
            fh.close()
            os.replace(log_path, log_path.with_name(log_path.name + ".partial"))
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
    save_model(rbm, model_path, cfg.model_spec, store_basis)
    summary = {
        "model": cfg.model_spec,
        "N": rbm.N,
        "n_truth_solves": rbm.meta["n_truth_solves"],
        "stop_reason": rbm.meta["stop_reason"],
        "final_max_residual": rbm.history[-1]["max_residual"],
        "greedy_tol": gcfg.tol,
        "samples": [{"mu": mu, "m": m, "added": a} for mu, m, a in rbm.samples],
        "basis_stored": store_basis,
    }
    write_json(out / "training_summary.json", summary)
    write_csv(
        out / "training_history.csv",
        ["iteration", "N", "m", "max_residual"],
        [[r["iteration"], r["N"], r["m"], float(r["max_residual"])] for r in rbm.history],
    )
    print(f"trained N={rbm.N} after {rbm.meta['n_truth_solves']} truth solves "
          f"({rbm.meta['stop_reason']}); max residual {rbm.history[-1]['max_residual']:.3e}")
    print(f"wrote {model_path}")
    return EXIT_OK


# ------------------------------------------------------------------------ scan
def cmd_scan(args) -> int:
    rbm, header = load_model(args.model)
    spec = header["model"]
    overrides = {"model": {"kind": spec["kind"], "Nx": spec["Nx"], "Ny": spec["Ny"], "domain": spec["domain"]}}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    out = _out_dir(args, cfg)
    sc = cfg["scan"]
    if sc["basis_size"] is not None:
        rbm = rbm.truncate(min(sc["basis_size"], rbm.N))
    cmap, obs = model_coefficients(spec["kind"], spec["Nx"], spec["Ny"], spec["domain"])
    if obs.name not in rbm.observables:
        raise ConfigError(f"model file has no reduced blocks for {obs.name!r}")
    grid = cfg.grid("scan")
    ks = select_momenta(sc["momenta"], cfg.lattice)
    res = scan(rbm, cmap, grid, [obs], tol_degeneracy=float(cfg["solver"]["tol_degeneracy"]),
               with_occupation=bool(sc["occupation"]) and rbm.basis is not None,
               threads=_threads(args, cfg))
    names = header["meta"].get("param_names") or [f"mu{i + 1}" for i in range(grid.ndim)]
    labels = obs.labels
    columns = [f"mu[{n}]" for n in names] + ["energy", "m", "residual", "gap"]
    columns += [_k_label(labels[i], labels.shape[1]) for i in ks] + ["occupation", "flags"]
    rows = []
    S = res.outputs[obs.name]
    for i in range(len(res)):
        row = [float(x) for x in res.points[i]]
        row += [float(res.energy[i]), int(res.m[i]), float(res.residual[i]), float(res.gap[i])]
        row += [float(S[i, k]) for k in ks]
        row += [float(res.occupation[i]), res.flags[i]]
        rows.append(row)
    write_csv(out / "scan.csv", columns, rows)
    write_json(out / "scan.json", {
        "model_file": str(args.model),
        "model": spec,
        "N": rbm.N,
        "n_f": header["meta"].get("n_truth_solves"),
        "samples": [{"mu": mu, "m": m, "added": a} for mu, m, a in rbm.samples],
        "tolerances": {k: header["meta"].get(k) for k in ("greedy_tol", "compress_tol", "tol_resid", "tol_degeneracy")},
        "grid_shape": list(grid.shape),
        "columns": columns,
        "momenta_pi": [(labels[i] / np.pi).tolist() for i in ks],
        "max_residual": float(np.nanmax(res.residual)),
        "flagged_rows": int(sum(1 for f in res.flags if f)),
    })
    print(f"scanned {len(res)} points at N={rbm.N} in {res.seconds:.2f} s; "
          f"max residual {np.nanmax(res.residual):.3e}")
    return EXIT_OK


# ------------------------------------------------------------------------- svd
def cmd_svd(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    _guard_truth(cfg.lattice)
    op, _, _ = build_model(cfg.kind, cfg["model"]["Nx"], cfg["model"]["Ny"], cfg.domain)
    rbm = None
    if args.model is not None:
        rbm, _ = load_model(args.model)
        if rbm.basis is None or rbm.dim != op.dim:
            rbm = None
    s = cfg["solver"]
    grid = cfg.grid("svd")
    t0 = time.perf_counter()
    sigma = snapshot_svd(op, grid, tol_resid=float(s["tol_resid"]), tol_degeneracy=float(s["tol_degeneracy"]),
                         seed=cfg["seed"], rbm=rbm, dense_cap=s["dense_cap"], max_iter=s["max_iter"])
    write_csv(out / "svd.csv", ["N", "sigma_over_sigma1"], [[i + 1, float(x)] for i, x in enumerate(sigma)])
    sizes = {repr(float(t)): basis_size_for(sigma, t) for t in cfg["svd"]["thresholds"]}
    write_json(out / "svd.json", {
        "model": cfg.model_spec,
        "hilbert_dim": op.dim,
        "grid_shape": list(grid.shape),
        "n_columns": int(sigma.size),
        "basis_size_at_threshold": sizes,
        "seconds": time.perf_counter() - t0,
    })
    print(f"{sigma.size} singular values; basis sizes per threshold: {sizes}")
    return EXIT_OK


# -------------------------------------------------------------------- validate
def cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    _guard_truth(cfg.lattice)
    if args.model is None:
        raise ConfigError("validate needs --model")
    rbm, header = load_model(args.model)
    if header["model"]["kind"] != cfg.kind or header["model"]["Nx"] != cfg["model"]["Nx"] \
            or header["model"]["Ny"] != cfg.model_spec["Ny"]:
        raise ConfigError("model file and config describe different systems")
    op, _, sf = build_model(cfg.kind, cfg["model"]["Nx"], cfg["model"]["Ny"], cfg.domain)
    n = cfg["test"]["basis_size"]
    if n is not None:
        rbm = rbm.truncate(min(n, rbm.N))
    s = cfg["solver"]
    grid = cfg.grid("test")
    rep = error_report(rbm, op, grid, sf if sf.name in rbm.observables else None,
                       strategy=cfg["test"]["strategy"], tol_resid=float(s["tol_resid"]),
                       tol_degeneracy=float(s["tol_degeneracy"]), seed=cfg["seed"],
                       dense_cap=s["dense_cap"], max_iter=s["max_iter"])
    names = header["meta"].get("param_names") or [f"mu{i + 1}" for i in range(grid.ndim)]
    cols = [f"mu[{n}]" for n in names] + ["energy", "energy_rb", "m", "m_rb", "err_val", "err_vec",
                                          "err_sf", "residual", "flags"]
    rows = [[*map(float, r["mu"]), float(r["energy"]), float(r["energy_rb"]), r["m"], r["m_rb"],
             float(r["err_val"]), float(r["err_vec"]), float(r["err_sf"]), float(r["residual"]), r["flags"]]
            for r in rep.per_point]
    write_csv(out / "validate.csv", cols, rows)
    write_csv(out / "residual_history.csv", ["N", "max_residual"],
              [[r["N"], float(r["max_residual"])] for r in rbm.history])
    summary = rep.summary()
    summary.update({"N": rbm.N, "model": cfg.model_spec, "grid_shape": list(grid.shape),
                    "trained_tol": header["meta"].get("greedy_tol")})
    write_json(out / "validate.json", summary)
    print(f"N={rbm.N}: err_val {rep.err_val:.3e} (mean {rep.mean_val:.3e}), "
          f"err_vec {rep.err_vec:.3e}, err_sf {rep.err_sf:.3e}, max residual {rep.max_residual:.3e}")
    return EXIT_OK


# ------------------------------------------------------------------ model-info
def cmd_model_info(args) -> int:
    header = read_header(args.model)
    info = {k: header[k] for k in ("schema_version", "model", "N", "dim", "n_terms", "has_basis")}
    info["n_samples"] = len(header["samples"])
    info["stop_reason"] = header["meta"].get("stop_reason")
    info["final_max_residual"] = header["history"][-1]["max_residual"] if header["history"] else None
    info["observables"] = sorted(a["name"][4:] for a in header["arrays"] if a["name"].startswith("obs/"))
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbspin", description="Reduced basis surrogates for spin Hamiltonians.")
    p.add_argument("--print-config", action="store_true", help="print the default configuration and exit")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (-vv for debug)")
    sub = p.add_subparsers(dest="command")

    def common(sp, model=False, model_required=False):
        sp.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--seed", type=int, default=None, help="random seed for cold starts")
        if model:
            sp.add_argument("--model", type=Path, required=model_required, default=None, help="model file")

    sp = sub.add_parser("offline", help="greedy training; writes model.rbm and training_log.jsonl")
    common(sp)
    sp.add_argument("--no-store-basis", action="store_true", help="omit the basis B from the model file")
    sp.set_defaults(func=cmd_offline)

    sp = sub.add_parser("scan", help="evaluate a trained model on the scan grid")
    common(sp, model=True, model_required=True)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("svd", help="snapshot singular-value decay on the svd grid")
    common(sp, model=True)
    sp.set_defaults(func=cmd_svd)

    sp = sub.add_parser("validate", help="errors of a model against truth solves on the test grid")
    common(sp, model=True, model_required=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("model-info", help="print the metadata of a model file")
    sp.add_argument("model", type=Path)
    sp.set_defaults(func=cmd_model_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        sys.stdout.write(default_config_text())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
