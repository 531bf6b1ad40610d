"""Experiment orchestration: configs, training runs, evaluation, sweeps.

Every run is driven by an :class:`ExperimentConfig`. All randomness comes
from ``training.seed`` through named substreams (``init``, ``data``,
``test-data``, ``batches``, ``proposal``, ``refine-inits``), so changing one
component leaves the others' draws untouched.

Files written by :func:`cmd_train` into ``output_dir``::

    config.json       resolved config snapshot (loads back to the same run)
    checkpoint.json   parameters, architecture, proposal, rng algorithm
    loss.csv          epoch,loss
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines as bl
from . import metrics
from .densities import RNG_ALGORITHM, GroundTruthDensity, Proposal, make_rng
from .ebm import EnergyModel, YGrid, fit_ebm
from .errors import ConfigurationError, TrainingError
from .predict import RefineConfig, refine_block, select_best, uniform_inits
from .synthdata import LabeledSet, generate_piecewise, generate_hetero_sine, read_csv

log = logging.getLogger(__name__)

WORKERS_ENV = "EBREG_WORKERS"
MODEL_KINDS = ("ebm", *sorted(bl.MODEL_KINDS))
GENERATORS = ("piecewise", "hetero-sine")

# -- config ------------------------------------------------------------------

_DEFAULTS = {
    "preset": "toy-1d",
    "task": {"generator": "piecewise", "n_train": 2000, "n_test": 2000, "noise": 0.1},
    "model": {
        "kind": "ebm",
        "branch_dims": [10, 10],
        "head_dims": [10, 10],
        "backbone_dims": [10, 10],
        "activation": "softplus",
        "softplus_beta": 10.0,
        "mdn_components": 2,
        "softmax_classes": 101,
        "direct_loss": "L2",
    },
    "training": {
        "epochs": 75,
        "batch_size": 32,
        "lr": 1e-3,
        "betas": [0.9, 0.999],
        "M": 1024,
        "sigmas": [0.1, 0.8],
        "seed": 0,
    },
    "refinement": {"T": 10, "step": 0.1, "decay": 0.5, "stop_tol": 0.001,
                   "degen_tol": -0.01, "variant": "S1", "inits": 16, "init_mode": "grid"},
    "evaluation": {"y_lo": -5.0, "y_hi": 5.0, "cells": 2048,
                   "x_lo": -3.0, "x_hi": 3.0, "x_count": 60},
    "output_dir": "runs/toy-1d",
}

PRESETS = {
    "toy-1d": {},
    "hetero-sine": {
        "task": {"generator": "hetero-sine"},
        "evaluation": {"y_lo": -4.0, "y_hi": 4.0},
        "output_dir": "runs/hetero-sine",
    },
}


def _merge(base: dict, over: dict, path: str, errors: list) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            errors.append(f"{where}: unknown field")
        elif isinstance(base[k], dict):
            if not isinstance(v, dict):
                errors.append(f"{where}: expected an object")
            else:
                out[k] = _merge(base[k], v, where + ".", errors)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; see ``_DEFAULTS`` for the schema."""

    data: dict = field(default_factory=lambda: copy.deepcopy(_DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config: expected a JSON object")
        errors: list[str] = []
        preset = raw.get("preset", "toy-1d")
        if preset not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {preset!r} (choose from {sorted(PRESETS)})")
        base = _merge(_DEFAULTS, PRESETS[preset], "", errors)
        merged = _merge(base, raw, "", errors)
        cfg = cls(merged)
        errors += cfg._validate()
        if errors:
            raise ConfigurationError("invalid config:\n  " + "\n  ".join(errors))
        return cfg

    @classmethod
    def preset(cls, name: str = "toy-1d", **overrides) -> "ExperimentConfig":
        raw = {"preset": name}
        for key, val in overrides.items():
            section, _, leaf = key.partition("__")
            if leaf:
                raw.setdefault(section, {})[leaf] = val
            else:
                raw[section] = val
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(raw)

    def _validate(self) -> list[str]:
        e = []
        d = self.data

        def pos_int(sec, key, allow_zero=False):
            v = d[sec][key]
            lo = 0 if allow_zero else 1
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                e.append(f"{sec}.{key}: expected an integer >= {lo}, got {v!r}")

        def pos_num(sec, key):
            v = d[sec][key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                e.append(f"{sec}.{key}: expected a positive number, got {v!r}")

        if d["task"]["generator"] not in GENERATORS:
            e.append(f"task.generator: expected one of {list(GENERATORS)}, got {d['task']['generator']!r}")
        pos_int("task", "n_train")
        pos_int("task", "n_test")
        pos_num("task", "noise")
        m = d["model"]
        if m["kind"] not in MODEL_KINDS:
            e.append(f"model.kind: expected one of {list(MODEL_KINDS)}, got {m['kind']!r}")
        for key in ("branch_dims", "head_dims", "backbone_dims"):
            v = m[key]
            if not (isinstance(v, list) and v and all(isinstance(i, int) and i > 0 for i in v)):
                e.append(f"model.{key}: expected a non-empty list of positive integers, got {v!r}")
        if m["activation"] not in ad.ACTIVATIONS:
            e.append(f"model.activation: expected one of {sorted(ad.ACTIVATIONS)}, got {m['activation']!r}")
        pos_num("model", "softplus_beta")
        pos_int("model", "mdn_components")
        pos_int("model", "softmax_classes")
        if m["direct_loss"] not in ("L2", "huber"):
            e.append(f"model.direct_loss: expected 'L2' or 'huber', got {m['direct_loss']!r}")
        t = d["training"]
        pos_int("training", "epochs", allow_zero=True)
        pos_int("training", "batch_size")
        pos_int("training", "M")
        pos_num("training", "lr")
        pos_int("training", "seed", allow_zero=True)
        b = t["betas"]
        if not (isinstance(b, list) and len(b) == 2 and all(isinstance(x, (int, float)) and 0 <= x < 1 for x in b)):
            e.append(f"training.betas: expected two numbers in [0, 1), got {b!r}")
        s = t["sigmas"]
        if not (isinstance(s, list) and s and all(isinstance(x, (int, float)) and x > 0 for x in s)):
            e.append(f"training.sigmas: expected a non-empty list of positive numbers, got {s!r}")
        r = d["refinement"]
        pos_int("refinement", "inits")
        if r["init_mode"] not in ("grid", "random"):
            e.append(f"refinement.init_mode: expected 'grid' or 'random', got {r['init_mode']!r}")
        try:
            self.refine_config()
        except (ConfigurationError, TypeError) as exc:
            e.append(f"refinement: {exc}")
        v = d["evaluation"]
        pos_int("evaluation", "cells")
        pos_int("evaluation", "x_count")
        for a, z in (("y_lo", "y_hi"), ("x_lo", "x_hi")):
            if not (isinstance(v[a], (int, float)) and isinstance(v[z], (int, float)) and v[a] < v[z]):
                e.append(f"evaluation.{a}/{z}: need {a} < {z}, got {v[a]!r}, {v[z]!r}")
        if not isinstance(d["output_dir"], str):
            e.append("output_dir: expected a string")
        return e

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["training"]["seed"]

    @property
    def kind(self) -> str:
        return self.data["model"]["kind"]

    def proposal(self) -> Proposal:
        return Proposal(tuple(float(s) for s in self.data["training"]["sigmas"]))

    def refine_config(self) -> RefineConfig:
        r = {k: v for k, v in self.data["refinement"].items() if k not in ("inits", "init_mode")}
        return RefineConfig(**r)

    def grid(self) -> YGrid:
        v = self.data["evaluation"]
        return YGrid(float(v["y_lo"]), float(v["y_hi"]), int(v["cells"]))

    def eval_xs(self) -> np.ndarray:
        """Evenly spaced cell midpoints on [x_lo, x_hi]."""
        v = self.data["evaluation"]
        edges = np.linspace(v["x_lo"], v["x_hi"], v["x_count"] + 1)
        return 0.5 * (edges[:-1] + edges[1:])

    def with_updates(self, **sections) -> "ExperimentConfig":
        raw = copy.deepcopy(self.data)
        for sec, vals in sections.items():
            if isinstance(raw.get(sec), dict):
                raw[sec].update(vals)
            else:
                raw[sec] = vals
        return ExperimentConfig.from_dict(raw)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1) + "\n"

    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


# -- task plumbing -----------------------------------------------------------

def make_data(cfg: ExperimentConfig, which: str = "train") -> LabeledSet:
    t = cfg["task"]
    n = t["n_train"] if which == "train" else t["n_test"]
    rng = make_rng(cfg.seed, "data" if which == "train" else "test-data")
    if t["generator"] == "piecewise":
        ds = generate_piecewise(n, GroundTruthDensity(), rng)
    else:
        ds = generate_hetero_sine(n, rng, noise=t["noise"])
    return ds.subset(np.arange(len(ds)), which)


def truth_model(cfg: ExperimentConfig) -> metrics.TruthModel:
    if cfg["task"]["generator"] == "piecewise":
        return metrics.TruthModel.piecewise(GroundTruthDensity())
    return metrics.TruthModel.hetero_sine(cfg["task"]["noise"])


def build_model(cfg: ExperimentConfig, x_dim: int = 1, y_dim: int = 1):
    m = cfg["model"]
    rng = make_rng(cfg.seed, "init")
    kind = m["kind"]
    if kind == "ebm":
        return EnergyModel.create(rng, x_dim, y_dim, branch_dims=tuple(m["branch_dims"]),
                                  head_dims=tuple(m["head_dims"]), activation=m["activation"],
                                  softplus_beta=m["softplus_beta"])
    arch = {"backbone_dims": tuple(m["backbone_dims"]), "head_dims": tuple(m["head_dims"]),
            "activation": m["activation"], "softplus_beta": m["softplus_beta"]}
    if kind == "gaussian":
        return bl.GaussianModel.create(rng, x_dim, y_dim, **arch)
    if kind == "laplace":
        return bl.LaplaceModel.create(rng, x_dim, y_dim, multivariate=y_dim > 1, **arch)
    if kind == "mdn":
        if y_dim != 1:
            raise ConfigurationError("model.kind 'mdn' supports 1D targets only")
        return bl.MdnModel.create(rng, x_dim, K=m["mdn_components"], **arch)
    if kind == "softmax":
        v = cfg["evaluation"]
        values = np.linspace(v["y_lo"], v["y_hi"], m["softmax_classes"])
        return bl.SoftmaxModel.create(rng, values, x_dim, y_dim, **arch)
    return bl.DirectModel.create(rng, x_dim, y_dim, loss=m["direct_loss"], **arch)


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(d: dict):
    if d.get("kind") == "ebm":
        return EnergyModel.from_dict(d)
    return bl.model_from_dict(d)


def architecture(model) -> dict:
    if isinstance(model, EnergyModel):
        return model.architecture()
    return {"kind": model.kind, "x_dim": model.x_dim,
            "backbone": model.backbone.describe(),
            "heads": {k: v.describe() for k, v in sorted(model.heads.items())}}


@dataclass
class TrainResult:
    config: ExperimentConfig
    model: object
    history: list
    train: LabeledSet


def run_training(cfg: ExperimentConfig, on_epoch=None) -> TrainResult:
    """Generate the training split and fit the configured model in memory."""
    train = make_data(cfg, "train")
    model = build_model(cfg, train.x_dim, train.y_dim)
    t = cfg["training"]
    common = dict(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
                  betas=tuple(t["betas"]), data_rng=make_rng(cfg.seed, "batches"),
                  on_epoch=on_epoch)
    if cfg.kind == "ebm":
        hist = fit_ebm(model, train.inputs, train.targets, cfg.proposal(), M=t["M"],
                       proposal_rng=make_rng(cfg.seed, "proposal"), **common)
    else:
        hist = bl.fit_baseline(model, train.inputs, train.targets, **common)
    return TrainResult(cfg, model, hist, train)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def checkpoint_doc(res: TrainResult) -> dict:
    return {
        "model": model_to_dict(res.model),
        "architecture": architecture(res.model),
        "proposal": res.config.proposal().to_dict(),
        "rng_algorithm": RNG_ALGORITHM,
        "seed": res.config.seed,
        "config": res.config.data,
        "config_hash": res.config.hash(),
        "epochs_trained": len(res.history),
        "final_loss": res.history[-1] if res.history else None,
    }


def load_checkpoint(path):
    """Returns (model, config) from a checkpoint file."""
    try:
        doc = ad.loads_checkpoint(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"checkpoint not found: {path}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigurationError(f"unreadable checkpoint {path}: {exc}") from None
    return model_from_dict(doc["model"]), ExperimentConfig.from_dict(doc["config"])


def loss_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(history):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def cmd_train(config, out_dir=None) -> dict:
    """Train from a config (path or object); write snapshot, checkpoint and loss CSV."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    out = Path(out_dir if out_dir is not None else cfg["output_dir"])
    _atomic_write(out / "config.json", cfg.to_json())

    def progress(epoch, loss, _model):
        log.info("epoch %d loss %.6f", epoch, loss)

    res = run_training(cfg, on_epoch=progress)
    _atomic_write(out / "loss.csv", loss_csv(res.history))
    _atomic_write(out / "checkpoint.json", ad.dumps_checkpoint(checkpoint_doc(res)))
    return {"result": res, "checkpoint": out / "checkpoint.json", "dir": out}


# -- evaluation --------------------------------------------------------------

def predict_points(model, cfg: ExperimentConfig, X, traces: bool = False):
    """Point predictions: multi-start refinement for energy models, the model's own
    estimate otherwise. Returns (Y_hat, traces or None)."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    if not isinstance(model, EnergyModel):
        return model.predict(X), None
    r = cfg["refinement"]
    K = r["inits"]
    v = cfg["evaluation"]
    dy = model.y_dim
    if r["init_mode"] == "grid" and dy == 1:
        inits = np.broadcast_to(uniform_inits(v["y_lo"], v["y_hi"], K), (len(X), K, 1))
    else:
        rng = make_rng(cfg.seed, "refine-inits")
        inits = rng.uniform(v["y_lo"], v["y_hi"], size=(len(X), K, dy))
    Y, f, tr = refine_block(model, X, inits, cfg.refine_config(), traces=traces)
    best = np.argmax(f, axis=1)
    Yhat = select_best(Y, f)
    chosen = [tr[i * K + int(best[i])] for i in range(len(X))] if traces else None
    return Yhat, chosen


def _check_dims(model, data: LabeledSet):
    if model.x_dim != data.x_dim:
        raise ConfigurationError(f"checkpoint expects x of width {model.x_dim}, data has {data.x_dim}")
    ydim = getattr(model, "y_dim", None)
    if ydim is not None and not callable(ydim) and data.y_dim != ydim:
        raise ConfigurationError(f"checkpoint expects y of width {ydim}, data has {data.y_dim}")


def evaluate(model, cfg: ExperimentConfig, data: LabeledSet) -> dict:
    """Metrics report: test NLL, grid KL (overall, x<0, x>=0) and MAE."""
    _check_dims(model, data)
    grid = cfg.grid()
    xs = cfg.eval_xs()
    truth = truth_model(cfg)
    kl = metrics.grid_kl(model, xs, truth, grid, per_x=True)
    yhat, _ = predict_points(model, cfg, data.inputs)
    report = {
        "kind": model.kind,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "n_test": len(data),
        "test_nll": metrics.test_nll(model, data.inputs, data.targets, grid),
        "grid_kl": float(np.mean(kl)),
        "grid_kl_neg": float(np.mean(kl[xs < 0])) if np.any(xs < 0) else None,
        "grid_kl_pos": float(np.mean(kl[xs >= 0])) if np.any(xs >= 0) else None,
        "mae": metrics.mae(yhat, data.targets),
    }
    neg = data.inputs[:, 0] < 0
    if isinstance(model, EnergyModel):
        ll = metrics.energy_log_likelihoods(model, data.inputs, data.targets, grid)
    else:
        ll = model.log_pdf(data.inputs, data.targets)
    report["test_nll_neg"] = float(-np.mean(ll[neg])) if neg.any() else None
    report["test_nll_pos"] = float(-np.mean(ll[~neg])) if (~neg).any() else None
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def cmd_eval(ckpt, data_path=None, out_path=None) -> dict:
    model, cfg = load_checkpoint(ckpt)
    data = read_csv(data_path) if data_path is not None else make_data(cfg, "test")
    report = evaluate(model, cfg, data)
    out = Path(out_path) if out_path else Path(ckpt).with_name("report.json")
    _atomic_write(out, report_json(report))
    return report


def cmd_predict(ckpt, in_path, out_path, trace: bool = False) -> Path:
    model, cfg = load_checkpoint(ckpt)
    data = read_csv(in_path, require_targets=False)
    if model.x_dim != data.x_dim:
        raise ConfigurationError(f"checkpoint expects x of width {model.x_dim}, input has {data.x_dim}")
    yhat, traces = predict_points(model, cfg, data.inputs, traces=trace)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*(f"x_{i}" for i in range(data.x_dim)), *(f"yhat_{i}" for i in range(yhat.shape[1]))])
    for x, y in zip(data.inputs, yhat):
        w.writerow([*map(repr, map(float, x)), *map(repr, map(float, y))])
    out = Path(out_path)
    _atomic_write(out, buf.getvalue())
    if trace and traces is not None:
        lines = []
        for i, tr in enumerate(traces):
            body = tr.to_csv().splitlines()
            if i == 0:
                lines.append("row," + body[0])
            lines += [f"{i},{ln}" for ln in body[1:]]
        _atomic_write(out.with_name(out.stem + ".trace.csv"), "\n".join(lines) + "\n")
    return out


def cmd_density(ckpt, out_path, x_count: int | None = None) -> Path:
    model, cfg = load_checkpoint(ckpt)
    if x_count is not None:
        cfg = cfg.with_updates(evaluation={"x_count": x_count})
    grid = cfg.grid()
    if grid.dim != 1:
        raise ConfigurationError("density surfaces are exported for 1D targets only")
    xs = cfg.eval_xs()
    surf = metrics.density_surface(model, xs, grid)
    text = metrics.surface_csv(xs, grid, surf, {"seed": cfg.seed, "config_hash": cfg.hash(),
                                                "kind": model.kind})
    out = Path(out_path)
    _atomic_write(out, text)
    return out


# -- sweeps ------------------------------------------------------------------

def parse_grid_spec(spec: str) -> list[tuple[float, ...]]:
    """``"0.1;0.8;0.1,0.8"`` -> [(0.1,), (0.8,), (0.1, 0.8)]: one proposal per cell."""
    cells = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            sig = tuple(float(s) for s in part.split(","))
        except ValueError:
            raise ConfigurationError(f"grid spec: cannot parse sigmas {part!r}") from None
        if not all(s > 0 and math.isfinite(s) for s in sig):
            raise ConfigurationError(f"grid spec: sigmas must be positive, got {part!r}")
        cells.append(sig)
    if not cells:
        raise ConfigurationError("grid spec: no cells")
    return cells


def _sweep_cell(args):
    cfg_data, sigmas, seed, out_dir = args
    cfg = ExperimentConfig.from_dict(cfg_data).with_updates(
        training={"sigmas": list(sigmas), "seed": seed}, model={"kind": "ebm"})
    name = "L{}_s{}_seed{}".format(len(sigmas), "-".join(repr(s) for s in sigmas), seed)
    row = {"L": len(sigmas), "sigmas": " ".join(repr(s) for s in sigmas), "seed": seed}
    try:
        res = run_training(cfg)
        report = evaluate(res.model, cfg, make_data(cfg, "test"))
    except (TrainingError, ConfigurationError, FloatingPointError, ValueError) as exc:
        row.update(status=f"failed: {exc}".replace("\n", " "), grid_kl=None, grid_kl_neg=None, test_nll=None)
        return row
    if out_dir is not None:
        cell = Path(out_dir) / "cells" / name
        _atomic_write(cell / "checkpoint.json", ad.dumps_checkpoint(checkpoint_doc(res)))
        _atomic_write(cell / "report.json", report_json(report))
    row.update(status="ok", grid_kl=report["grid_kl"], grid_kl_neg=report["grid_kl_neg"],
               test_nll=report["test_nll"])
    return row


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def run_sweep(cfg: ExperimentConfig, cells, seeds, out_dir=None, workers: int | None = None) -> list[dict]:
    """Train and evaluate one EBM per (proposal, seed); failed cells are marked, not raised."""
    if not cells or not seeds:
        raise ConfigurationError("sweep needs at least one cell and one seed")
    jobs = [(cfg.data, tuple(c), int(s), None if out_dir is None else str(out_dir))
            for c in cells for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_cell, jobs))
    return [_sweep_cell(j) for j in jobs]


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Seed-averaged metrics per proposal cell, in first-seen order."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["L"], r["sigmas"]), []).append(r)
    out = []
    for (L, sig), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]

        def mean(key):
            return float(np.mean([r[key] for r in ok])) if ok else None

        out.append({"L": L, "sigmas": sig, "seeds": len(rs), "failed": len(rs) - len(ok),
                    "grid_kl": mean("grid_kl"), "grid_kl_neg": mean("grid_kl_neg"),
                    "test_nll": mean("test_nll")})
    return out


def table_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in columns])
    return buf.getvalue()


def cmd_sweep(config, spec: str, seeds=(0,), out_dir=None) -> dict:
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    cells = parse_grid_spec(spec)
    out = Path(out_dir if out_dir is not None else Path(cfg["output_dir"]) / "sweep")
    rows = run_sweep(cfg, cells, list(seeds), out)
    summary = summarize_sweep(rows)
    _atomic_write(out / "runs.csv", table_csv(rows, ["L", "sigmas", "seed", "status", "grid_kl",
                                                     "grid_kl_neg", "test_nll"]))
    _atomic_write(out / "table.csv", table_csv(summary, ["L", "sigmas", "seeds", "failed",
                                                         "grid_kl", "grid_kl_neg", "test_nll"]))
    return {"rows": rows, "summary": summary, "dir": out}
