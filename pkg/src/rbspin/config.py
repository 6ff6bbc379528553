"""Run configuration: YAML file -> validated :class:`RunConfig`.

Every section and key is optional; unknown keys are rejected.  Grid specs
take either ``counts`` (with ``layout`` ``uniform`` or ``interleaved``,
spanning the model domain) or explicit ``axes``, where an axis is a list
of values, a single fixed value, or ``{linspace: [lo, hi, n]}``.
Unset grids fall back to the benchmark setup (50x50 / 49x49 for the
chain, 20^3 / 19^3 for the triangle lattice); scan and svd grids fall back
to the test grid.  Momenta are given in units of pi, e.g. ``[[0, 1], [1, 0]]``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .affine import ParameterGrid
from .errors import ConfigError
from .models import RYDBERG_DOMAIN, TRIANGLE_DOMAIN, LatticeSpec, momentum_grid
from .truth import DEFAULT_SEED, DENSE_CAP, MAX_ITER, TOL_DEGENERACY, TOL_RESID

__all__ = ["DEFAULTS", "RunConfig", "load_config", "default_config_text", "build_grid", "select_momenta"]

DEFAULTS = {
    "model": {"kind": "rydberg", "Nx": 13, "Ny": 1, "domain": None},
    "train": {
        "grid": None,
        "tol": 1.0e-6,
        "n_f": 100,
        "max_basis": None,
        "mu_1": None,
        "compress_tol": 1.0e-10,
        "residual": "stable",
    },
    "test": {"grid": None, "basis_size": None, "strategy": "surrogate"},
    "scan": {"grid": None, "momenta": "all", "basis_size": None, "occupation": True},
    "svd": {"grid": None, "thresholds": [1.0e-4, 1.0e-6, 1.0e-8, 1.0e-10]},
    "solver": {
        "tol_resid": TOL_RESID,
        "tol_degeneracy": TOL_DEGENERACY,
        "dense_cap": DENSE_CAP,
        "max_iter": MAX_ITER,
    },
    "output": {"dir": "out", "store_basis": True},
    "seed": DEFAULT_SEED,
    "threads": None,
}

_GRID_KEYS = {"counts", "layout", "axes"}

# grids used when a section leaves ``grid`` unset: training and interleaved test grids
MODEL_GRIDS = {
    "rydberg": ({"counts": [50, 50], "layout": "uniform"}, {"counts": [49, 49], "layout": "interleaved"}),
    "triangle": ({"counts": [20, 20, 20], "layout": "uniform"},
                 {"counts": [19, 19, 19], "layout": "interleaved"}),
}


def default_config_text() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False, default_flow_style=None)


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and base[key] and key != "grid":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            out[key] = _merge(base[key], val, where + key + ".")
        else:
            out[key] = val
    return out


def _domain_for(kind):
    return RYDBERG_DOMAIN if kind == "rydberg" else TRIANGLE_DOMAIN


def build_grid(spec, domain, where="grid") -> ParameterGrid:
    """Turn a grid spec (see module docstring) into a :class:`ParameterGrid`."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be a mapping with 'counts' or 'axes'")
    extra = set(spec) - _GRID_KEYS
    if extra:
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(extra)}")
    box = np.asarray(domain, dtype=float)
    try:
        if spec.get("axes") is not None:
            if spec.get("counts") is not None:
                raise ConfigError(f"{where}: give either 'counts' or 'axes', not both")
            axes = []
            for ax in spec["axes"]:
                if isinstance(ax, dict):
                    if set(ax) != {"linspace"} or len(ax["linspace"]) != 3:
                        raise ConfigError(f"{where}: axis mappings take only 'linspace: [lo, hi, n]'")
                    lo, hi, n = ax["linspace"]
                    axes.append(np.linspace(float(lo), float(hi), int(n)))
                elif isinstance(ax, (list, tuple)):
                    axes.append(np.asarray(ax, dtype=float))
                else:
                    axes.append(np.array([float(ax)]))
            grid = ParameterGrid(tuple(axes))
        else:
            counts = spec.get("counts")
            if counts is None:
                raise ConfigError(f"{where}: needs 'counts' or 'axes'")
            counts = [int(c) for c in counts]
            layout = spec.get("layout", "uniform")
            if layout == "uniform":
                grid = ParameterGrid.uniform(box, counts)
            elif layout == "interleaved":
                grid = ParameterGrid.interleaved(box, counts)
            else:
                raise ConfigError(f"{where}: layout must be 'uniform' or 'interleaved', got {layout!r}")
        if grid.ndim != len(box):
            raise ConfigError(f"{where} has {grid.ndim} axes; the model has {len(box)} parameters")
        grid.check_inside(box)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return grid


def select_momenta(selection, lattice: LatticeSpec):
    """Indices into the momentum grid for ``"all"`` or a list of momenta in units of pi."""
    grid = momentum_grid(lattice)
    if selection in (None, "all"):
        return np.arange(len(grid))
    out = []
    for k in selection:
        k = np.atleast_1d(np.asarray(k, dtype=float)) * np.pi
        if k.size != grid.shape[1]:
            raise ConfigError(f"momentum {np.asarray(k) / np.pi} has the wrong dimension")
        diff = np.angle(np.exp(1j * (grid - k[None, :])))
        hit = np.flatnonzero(np.all(np.abs(diff) < 1e-9, axis=1))
        if hit.size == 0:
            raise ConfigError(f"momentum {(k / np.pi).tolist()} (units of pi) is not on the lattice momentum grid")
        out.append(int(hit[0]))
    return np.array(out, dtype=int)


@dataclass
class RunConfig:
    raw: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def kind(self) -> str:
        return self.raw["model"]["kind"]

    @property
    def domain(self):
        d = self.raw["model"]["domain"]
        return np.asarray(_domain_for(self.kind) if d is None else d, dtype=float)

    @property
    def lattice(self) -> LatticeSpec:
        m = self.raw["model"]
        if self.kind == "rydberg":
            return LatticeSpec("rydberg-chain", m["Nx"], 1, 1, "open")
        return LatticeSpec("triangle-lattice", m["Nx"], m["Ny"], 3, "periodic")

    @property
    def model_spec(self) -> dict:
        m = self.raw["model"]
        return {"kind": self.kind, "Nx": m["Nx"], "Ny": m["Ny"] if self.kind == "triangle" else 1,
                "domain": self.domain.tolist()}

    def grid(self, section) -> ParameterGrid:
        spec = self.raw[section]["grid"]
        if spec is None:
            train, test = MODEL_GRIDS[self.kind]
            spec = train if section == "train" else self.raw["test"]["grid"] or test
        return build_grid(spec, self.domain, f"{section}.grid")

    def validate(self) -> "RunConfig":
        m = self.raw["model"]
        if self.kind not in ("rydberg", "triangle"):
            raise ConfigError(f"model.kind must be 'rydberg' or 'triangle', got {self.kind!r}")
        for key in ("Nx", "Ny"):
            if not isinstance(m[key], int) or isinstance(m[key], bool):
                raise ConfigError(f"model.{key} must be an integer")
        if self.kind == "rydberg":
            if m["Nx"] < 2:
                raise ConfigError("model.Nx must be >= 2 for the Rydberg chain")
            if m["Ny"] != 1:
                raise ConfigError("model.Ny must be 1 for the Rydberg chain")
        elif m["Nx"] < 1 or m["Ny"] < 1:
            raise ConfigError("model.Nx and model.Ny must be >= 1")
        if self.lattice.n_sites > 30:
            raise ConfigError(f"{self.lattice.n_sites} sites exceed what this engine can store")
        box = self.domain
        expected = 2 if self.kind == "rydberg" else 3
        if box.shape != (expected, 2) or np.any(box[:, 0] > box[:, 1]) or not np.all(np.isfinite(box)):
            raise ConfigError(f"model.domain must be {expected} finite (low, high) pairs")
        t = self.raw["train"]
        if not (isinstance(t["tol"], (int, float)) and t["tol"] > 0):
            raise ConfigError("train.tol must be a positive number")
        if not isinstance(t["n_f"], int) or t["n_f"] < 1:
            raise ConfigError("train.n_f must be a positive integer")
        if t["max_basis"] is not None and (not isinstance(t["max_basis"], int) or t["max_basis"] < 1):
            raise ConfigError("train.max_basis must be null or a positive integer")
        if not (isinstance(t["compress_tol"], (int, float)) and t["compress_tol"] >= 0):
            raise ConfigError("train.compress_tol must be a non-negative number")
        if t["residual"] not in ("stable", "gram"):
            raise ConfigError("train.residual must be 'stable' or 'gram'")
        train = self.grid("train")
        if t["mu_1"] is not None:
            if train.index_of(np.asarray(t["mu_1"], dtype=float)) < 0:
                raise ConfigError(f"train.mu_1={t['mu_1']} is not a point of the training grid")
        self.grid("test")
        self.grid("scan")
        self.grid("svd")
        if self.raw["test"]["strategy"] not in ("surrogate", "neighbor", "cold"):
            raise ConfigError("test.strategy must be 'surrogate', 'neighbor' or 'cold'")
        for sec in ("test", "scan"):
            n = self.raw[sec]["basis_size"]
            if n is not None and (not isinstance(n, int) or n < 1):
                raise ConfigError(f"{sec}.basis_size must be null or a positive integer")
        select_momenta(self.raw["scan"]["momenta"], self.lattice)
        s = self.raw["solver"]
        for key in ("tol_resid", "tol_degeneracy"):
            if not (isinstance(s[key], (int, float)) and s[key] > 0):
                raise ConfigError(f"solver.{key} must be a positive number")
        for key in ("dense_cap", "max_iter"):
            if not isinstance(s[key], int) or s[key] < 1:
                raise ConfigError(f"solver.{key} must be a positive integer")
        if not isinstance(self.raw["seed"], int):
            raise ConfigError("seed must be an integer")
        th = self.raw["threads"]
        if th is not None and (not isinstance(th, int) or th < 1):
            raise ConfigError("threads must be null or a positive integer")
        thr = self.raw["svd"]["thresholds"]
        if not isinstance(thr, list) or not all(isinstance(x, (int, float)) and 0 < x < 1 for x in thr):
            raise ConfigError("svd.thresholds must be a list of numbers in (0, 1)")
        return self


def _coerce_numbers(obj):
    # YAML 1.1 reads "1e-6" (no dot) as a string; accept it as a float
    if isinstance(obj, dict):
        return {k: _coerce_numbers(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_coerce_numbers(v) for v in obj]
    if isinstance(obj, str):
        try:
            return float(obj)
        except ValueError:
            return obj
    return obj


def load_config(path=None, overrides=None) -> RunConfig:
    """Read, merge with :data:`DEFAULTS` and validate.  ``path=None`` gives the defaults."""
    data = {}
    source = None
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
    merged = _merge(DEFAULTS, _coerce_numbers(data))
    if overrides:
        merged = _merge(merged, overrides)
    return RunConfig(merged, source).validate()
