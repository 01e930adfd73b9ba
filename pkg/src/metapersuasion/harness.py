"""Experiment configs, paired-seed replications and result files.

A config is a JSON object::

    {"family": "mpp_full", "environment": "builtin:mpp_two_state",
     "replications": 20, "seed": 0, "output": "results/mpp_full",
     "params": {"T": 200, "m": 200}}

``environment`` is a path (relative to the config file) or ``builtin:<name>``
for a file shipped in ``metapersuasion/data``.  Replication ``r`` uses seed
``seed + r`` for both arms: task parameters, receiver-type sequences and MPP
episode noise are drawn from streams keyed by that seed alone, while each
arm's own randomisation comes from a stream that also carries the arm name.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .rng import stream

__all__ = [
    "FAMILIES",
    "ARMS",
    "SCHEMA_VERSION",
    "ConfigError",
    "RunError",
    "ExperimentConfig",
    "Ledger",
    "run",
    "write_ledger",
    "read_raw",
    "emit_plot_data",
]

FAMILIES = ("obp_full", "obp_bandit", "mpp_full", "mpp_partial")
ARMS = ("meta", "baseline")
SCHEMA_VERSION = 1
RAW_COLUMNS = ("family", "arm", "replication", "task", "regret", "violation", "seed")
SUMMARY_COLUMNS = ("family", "arm", "task", "metric", "mean", "std", "n")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class RunError(RuntimeError):
    pass


# ---------------------------------------------------------------- validation
def _num(d: dict, key: str, prefix: str, *, lo=None, hi=None, integer=False, lo_open=False, default=None):
    path = f"{prefix}.{key}"
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, "expected a number")
    if integer and not float(v).is_integer():
        raise ConfigError(path, "expected an integer")
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}")
    return int(v) if integer else float(v)


def _interval(d: dict, key: str, prefix: str, default=None):
    path = f"{prefix}.{key}"
    if key not in d:
        return default
    v = d[key]
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise ConfigError(path, "expected [low, high]")
    lo, hi = float(v[0]), float(v[1])
    if not 0 < lo < hi:
        raise ConfigError(path, "need 0 < low < high")
    return (lo, hi)


_PARAM_KEYS = {
    "obp_full": {"m", "T", "tau1", "grid_step", "eta_interval", "type_sequence"},
    "obp_bandit": {"m", "T", "tau1", "grid_step", "eta_interval", "type_sequence", "n_eta", "n_b", "alpha", "geometry"},
    "mpp_full": {"m", "T", "tau2", "tau3", "kappa", "delta", "psi", "refresh_every"},
    "mpp_partial": {"m", "T", "tau2", "tau3", "kappa", "delta", "psi", "refresh_every", "alpha"},
}


def _check_params(family: str, p: dict) -> dict:
    prefix = "params"
    unknown = sorted(set(p) - _PARAM_KEYS[family])
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", f"unknown parameter for family {family}")
    out: dict[str, Any] = {}
    out["m"] = _num(p, "m", prefix, lo=1, integer=True)
    out["T"] = _num(p, "T", prefix, lo=1, integer=True)
    if family.startswith("obp"):
        out["tau1"] = _num(p, "tau1", prefix, lo=0, hi=1)
        step = _num(p, "grid_step", prefix, lo=0, hi=1, lo_open=True)
        if step is not None and abs(1 / step - round(1 / step)) > 1e-9:
            raise ConfigError(f"{prefix}.grid_step", "1/grid_step must be an integer")
        out["grid_step"] = step
        out["eta_interval"] = _interval(p, "eta_interval", prefix)
        seq = p.get("type_sequence", "iid")
        if seq not in ("iid", "cyclic"):
            raise ConfigError(f"{prefix}.type_sequence", "expected 'iid' or 'cyclic'")
        out["type_sequence"] = seq
        if family == "obp_bandit":
            out["n_eta"] = _num(p, "n_eta", prefix, lo=1, integer=True, default=5)
            out["n_b"] = _num(p, "n_b", prefix, lo=1, integer=True, default=4)
            out["alpha"] = _num(p, "alpha", prefix, lo=0, lo_open=True)
            geo = p.get("geometry", "polytope")
            if geo not in ("polytope", "ball"):
                raise ConfigError(f"{prefix}.geometry", "expected 'polytope' or 'ball'")
            out["geometry"] = geo
    else:
        out["tau2"] = _num(p, "tau2", prefix, lo=0, hi=1)
        out["tau3"] = _num(p, "tau3", prefix, lo=0, hi=1)
        out["delta"] = _num(p, "delta", prefix, lo=0, hi=1, lo_open=True)
        if out["delta"] is not None and out["delta"] >= 1:
            raise ConfigError(f"{prefix}.delta", "must be < 1")
        out["psi"] = _num(p, "psi", prefix, lo=0)
        out["refresh_every"] = _num(p, "refresh_every", prefix, lo=1, integer=True, default=1)
        kap = p.get("kappa", {})
        if not isinstance(kap, dict):
            raise ConfigError(f"{prefix}.kappa", "expected an object")
        for k in kap:
            if k not in ("P", "mu", "us", "ur", "all"):
                raise ConfigError(f"{prefix}.kappa.{k}", "unknown family (use P, mu, us, ur or all)")
            _num(kap, k, f"{prefix}.kappa", lo=0)
        out["kappa"] = {k: float(v) for k, v in kap.items()}
        if family == "mpp_partial":
            out["alpha"] = _num(p, "alpha", prefix, lo=0.5, hi=1.0, default=0.5)
    return {k: v for k, v in out.items() if v is not None}


def resolve_environment(ref: str, base_dir: Path | None = None) -> Path:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        path = Path(str(resources.files("metapersuasion") / "data" / f"{name}.json"))
    else:
        path = Path(ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
    if not path.is_file():
        raise ConfigError("environment", f"file not found: {path}")
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    environment: Path
    replications: int = 20
    seed: int = 0
    output: Path = Path("results")
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected a JSON object")
        unknown = sorted(set(data) - {"family", "environment", "replications", "seed", "output", "params"})
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        family = data.get("family")
        if family not in FAMILIES:
            raise ConfigError("family", f"expected one of {', '.join(FAMILIES)}")
        env = data.get("environment")
        if not isinstance(env, str):
            raise ConfigError("environment", "expected a path string")
        env_path = resolve_environment(env, base_dir)
        reps = _num(data, "replications", "", lo=1, integer=True, default=20)
        seed = _num(data, "seed", "", lo=0, integer=True, default=0)
        out = data.get("output", "results")
        if not isinstance(out, str):
            raise ConfigError("output", "expected a path string")
        out_path = Path(out)
        if not out_path.is_absolute() and base_dir is not None:
            out_path = base_dir / out_path
        params = data.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("params", "expected an object")
        cfg = cls(family, env_path, reps, seed, out_path, _check_params(family, params))
        cfg._check_environment()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("<file>", f"config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data, path.parent)

    def with_overrides(self, seed=None, reps=None, out=None, family=None) -> "ExperimentConfig":
        cfg = self
        if family is not None and family != self.family:
            if family not in FAMILIES:
                raise ConfigError("family", f"expected one of {', '.join(FAMILIES)}")
            if family[:3] != self.family[:3]:
                raise ConfigError("family", f"{family} needs a different environment than {self.family}")
            cfg = replace(cfg, family=family, params=_check_params(family, self._raw_params_for(family)))
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed", "must be >= 0")
            cfg = replace(cfg, seed=int(seed))
        if reps is not None:
            if reps < 1:
                raise ConfigError("replications", "must be >= 1")
            cfg = replace(cfg, replications=int(reps))
        if out is not None:
            cfg = replace(cfg, output=Path(out))
        return cfg

    def _raw_params_for(self, family: str) -> dict:
        p = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {k: v for k, v in p.items() if k in _PARAM_KEYS[family]}

    def _check_environment(self) -> None:
        try:
            if self.family.startswith("obp"):
                self.obp_setup()
            else:
                self.mpp_spec(self.seed)
        except ConfigError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("environment", f"invalid environment file: {exc}") from None

    # ------------------------------------------------------------ builders
    def obp_setup(self):
        from .obp.game import load_game

        game, extra = load_game(self.environment)
        p = self.params
        tau1 = p.get("tau1", extra.get("tau1", 0.05))
        step = p.get("grid_step", extra.get("grid_step", 0.25))
        return game, float(tau1), float(step)

    def mpp_spec(self, seed: int):
        from .mpp.env import load_spec

        spec = load_spec(self.environment)
        p = self.params
        kw = {k: p[k] for k in ("m", "T", "tau2", "tau3", "delta", "psi") if k in p}
        if "kappa" in p:
            kw["kappa"] = {**spec.kappa, **p["kappa"]}
        return spec.with_overrides(seed=int(seed), **kw)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "environment": str(self.environment),
            "replications": self.replications,
            "seed": self.seed,
            "output": str(self.output),
            "params": self._raw_params_for(self.family),
        }


# ---------------------------------------------------------------- ledger
@dataclass
class Ledger:
    """Task-averaged series per arm, shaped ``[replication, task]``."""

    family: str
    seeds: list[int]
    regret: dict[str, np.ndarray]
    violation: dict[str, np.ndarray] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return next(iter(self.regret.values())).shape[1]

    def summary(self, arm: str, metric: str = "regret") -> tuple[np.ndarray, np.ndarray]:
        data = self.regret[arm] if metric == "regret" else self.violation[arm]
        return data.mean(0), data.std(0)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _rows(ledger: Ledger):
    is_mpp = ledger.violation is not None
    for r, seed in enumerate(ledger.seeds):
        for arm in ARMS:
            for t in range(ledger.n_tasks):
                vio = _fmt(ledger.violation[arm][r, t]) if is_mpp else ""
                yield (ledger.family, arm, r, t + 1, _fmt(ledger.regret[arm][r, t]), vio, seed)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ledger(ledger: Ledger, out_dir: Path) -> dict[str, Path]:
    """Write ``raw.csv`` and ``summary.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    buf = io.StringIO()
    buf.write(f"# metapersuasion raw schema v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    w.writerows(_rows(ledger))
    raw = out_dir / "raw.csv"
    _atomic_write(raw, buf.getvalue())

    buf = io.StringIO()
    buf.write(f"# metapersuasion summary schema v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    metrics = ("regret", "violation") if ledger.violation is not None else ("regret",)
    n = len(ledger.seeds)
    for arm in ARMS:
        for metric in metrics:
            mean, std = ledger.summary(arm, metric)
            for t in range(ledger.n_tasks):
                w.writerow((ledger.family, arm, t + 1, metric, _fmt(mean[t]), _fmt(std[t]), n))
    summary = out_dir / "summary.csv"
    _atomic_write(summary, buf.getvalue())
    return {"raw": raw, "summary": summary}


def read_raw(path: str | Path) -> Ledger:
    """Rebuild a :class:`Ledger` from a raw CSV written by :func:`write_ledger`."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# metapersuasion raw schema v"):
        raise ValueError(f"{path} is not a raw results file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {version}")
    rows = list(csv.DictReader(lines[1:]))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    family = rows[0]["family"]
    reps = sorted({int(r["replication"]) for r in rows})
    T = max(int(r["task"]) for r in rows)
    seeds = [0] * len(reps)
    reg = {a: np.full((len(reps), T), np.nan) for a in ARMS}
    vio = {a: np.full((len(reps), T), np.nan) for a in ARMS}
    has_vio = rows[0]["violation"] != ""
    for r in rows:
        i, t, arm = int(r["replication"]), int(r["task"]) - 1, r["arm"]
        seeds[i] = int(r["seed"])
        reg[arm][i, t] = float(r["regret"])
        if has_vio:
            vio[arm][i, t] = float(r["violation"])
    return Ledger(family, seeds, reg, vio if has_vio else None)


def emit_plot_data(ledger: Ledger, path: str | Path) -> Path:
    """Write per-arm mean and one-standard-deviation bands as JSON."""
    metrics = ("regret", "violation") if ledger.violation is not None else ("regret",)
    series = {}
    for metric in metrics:
        series[metric] = {}
        for arm in ARMS:
            mean, std = ledger.summary(arm, metric)
            series[metric][arm] = {
                "mean": mean.tolist(),
                "lower": (mean - std).tolist(),
                "upper": (mean + std).tolist(),
                "std": std.tolist(),
            }
    doc = {
        "schema": SCHEMA_VERSION,
        "family": ledger.family,
        "replications": len(ledger.seeds),
        "x": list(range(1, ledger.n_tasks + 1)),
        "series": series,
    }
    path = Path(path)
    _atomic_write(path, json.dumps(doc, indent=1) + "\n")
    return path


# ---------------------------------------------------------------- runners
def _obp_inputs(cfg: ExperimentConfig, seed: int):
    from .obp.game import ObpTaskStream, enumerate_schemes

    game, tau1, step = cfg.obp_setup()
    p = cfg.params
    ts = ObpTaskStream(game, tau1, p.get("T", 25), p.get("m", 5), seed, p.get("type_sequence", "iid"))
    catalogs = [enumerate_schemes(ts.game(0, t), step) for t in range(ts.n_tasks)]
    types = [ts.types(0, t) for t in range(ts.n_tasks)]
    return catalogs, types


def _run_obp_full(cfg: ExperimentConfig, seed: int):
    from .obp.full import EwooInterval, run_full_baseline, run_full_meta

    catalogs, types = _obp_inputs(cfg, seed)
    m = len(types[0])
    lo, hi = cfg.params.get("eta_interval", (0.05, 0.25))
    interval = EwooInterval.from_bounds(lo, hi, m)
    meta = run_full_meta(catalogs, types, interval, stream(seed, "arm", "meta"))
    base = run_full_baseline(catalogs, types, interval.midpoint, stream(seed, "arm", "baseline"))
    return {"meta": meta.task_averaged, "baseline": base.task_averaged}, None


def _run_obp_bandit(cfg: ExperimentConfig, seed: int):
    from .obp.bandit import default_grid, run_bandit_baseline, run_bandit_meta

    catalogs, types = _obp_inputs(cfg, seed)
    p = cfg.params
    K = catalogs[0].point_set.dim
    m, T = len(types[0]), len(types)
    grid = default_grid(K, m, T, p.get("eta_interval", (0.05, 0.25)), p.get("n_eta", 5), p.get("n_b", 4))
    if "alpha" in p:
        grid.alpha = p["alpha"]
    geo = p.get("geometry", "polytope")
    meta, _ = run_bandit_meta(catalogs, types, grid, stream(seed, "arm", "meta"), geo)
    eta, b = grid.midpoint
    base = run_bandit_baseline(catalogs, types, eta, b, stream(seed, "arm", "baseline"), geo)
    return {"meta": meta.task_averaged, "baseline": base.task_averaged}, None


def _run_mpp(cfg: ExperimentConfig, seed: int):
    from .mpp.learners import TaskSource, full_meta_opps, partial_meta_opps, zero_kappas

    spec = cfg.mpp_spec(seed)
    source = TaskSource(spec, seed, 0)
    every = cfg.params.get("refresh_every", 1)
    if cfg.family == "mpp_full":
        runs = {
            "meta": full_meta_opps(source, refresh_every=every),
            "baseline": full_meta_opps(source, zero_kappas(), refresh_every=every),
        }
    else:
        alpha = cfg.params.get("alpha", 0.5)
        runs = {
            "meta": partial_meta_opps(source, alpha, refresh_every=every),
            "baseline": partial_meta_opps(source, alpha, zero_kappas(), refresh_every=every),
        }
    reg = {a: r.metrics.task_averaged_regret for a, r in runs.items()}
    vio = {a: r.metrics.task_averaged_violation for a, r in runs.items()}
    return reg, vio


_RUNNERS = {
    "obp_full": _run_obp_full,
    "obp_bandit": _run_obp_bandit,
    "mpp_full": _run_mpp,
    "mpp_partial": _run_mpp,
}


def run(cfg: ExperimentConfig, write: bool = True, progress=None) -> Ledger:
    """Run both arms for every replication and (optionally) write the CSV files."""
    seeds = [cfg.seed + r for r in range(cfg.replications)]
    reg = {a: [] for a in ARMS}
    vio = {a: [] for a in ARMS}
    has_vio = False
    for r, seed in enumerate(seeds):
        try:
            rr, vv = _RUNNERS[cfg.family](cfg, seed)
        except Exception as exc:
            raise RunError(f"replication {r} (seed {seed}): {exc}") from exc
        for a in ARMS:
            reg[a].append(np.asarray(rr[a], float))
            if vv is not None:
                has_vio = True
                vio[a].append(np.asarray(vv[a], float))
        if progress is not None:
            progress(r + 1, len(seeds))
    ledger = Ledger(
        cfg.family,
        seeds,
        {a: np.vstack(reg[a]) for a in ARMS},
        {a: np.vstack(vio[a]) for a in ARMS} if has_vio else None,
    )
    if write:
        ledger.extras["files"] = write_ledger(ledger, cfg.output)
    return ledger
