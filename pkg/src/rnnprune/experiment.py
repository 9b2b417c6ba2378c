"""Experiment configuration, the per-seed comparison sweep and CSV reporting."""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from pathlib import Path

import numpy as np

from . import baselines as B
from . import pruning as P
from .bounds import (
    BoundReport,
    approx_bound_rhs,
    approx_lhs,
    budget_from_params,
    check_prop2,
    generalization_bound_terms,
    measured_terms,
)
from .covariance import covariance_of, nonzero_rows, read_spectrum_csv, write_spectrum_csv
from .data import TASKS, load_mnist_idx, synthetic_task
from .rnn import RnnParams, SequenceBatch, TrainConfig, evaluate, init_irnn, init_standard, save_params, train

__all__ = [
    "ConfigError",
    "StageError",
    "DEFAULT_CONFIG",
    "PRESETS",
    "METHODS",
    "build_config",
    "parse_override",
    "apply_override",
    "validate_config",
    "artifact_root",
    "load_datasets",
    "init_model",
    "train_config",
    "finetune_config",
    "prune_model",
    "run",
    "run_seed",
    "run_sweep",
    "report",
    "read_csv",
]

ARTIFACT_ENV = "RNNPRUNE_ARTIFACT_ROOT"
MNIST_ENV = "RNNPRUNE_MNIST_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# order of rows in the comparison table
METHODS = (
    "baseline",
    "baseline_small",
    "spectral_rec",
    "spectral_norec",
    "random_rec",
    "random_norec",
    "random_weight",
    "magnitude_weight",
    "column_sparsification",
    "low_rank",
)
FINETUNED = ("spectral_rec", "magnitude_weight")
NODE_METHODS = ("spectral_rec", "spectral_norec", "random_rec", "random_norec")

DEFAULT_CONFIG = {
    "task": "mnist_rows",
    "data": {
        "mnist_dir": None,
        "n_train": 2000,
        "n_test": 1000,
        "synthetic_steps": 10,
        "synthetic_encoding": "onehot",
        "seed": 0,
    },
    "model": {"m": 64, "activation": "relu", "init": "irnn"},
    "train": {"epochs": 30, "batch": 120, "lr": 1e-2, "decay": 0.95, "decay_step": 10, "clip": 1.0, "seed": 0},
    "prune": {
        "method": "spectral_rec",
        "m_sharp": 20,
        "kept": None,
        "tau": "zero",
        "theta": [1.0, 0.0, 0.0],
        "delta_tilde": 0.2,
        "selector": "greedy",
        "random_repeats": 10,
    },
    "finetune": {"epochs": 15, "lr": 5e-3},
    "sweep": {"seeds": [0, 1, 2, 3, 4], "methods": list(METHODS), "m_sharp_grid": None},
    "bounds": {"delta": 3.0, "prop2_trials": 200, "prop2_seed": 0},
    "paths": {"root": None},
}

PRESETS = {
    "desk": {},
    "full": {
        "task": "mnist_pixels",
        "data.n_train": 60000,
        "data.n_test": 10000,
        "model.m": 128,
        "train.epochs": 500,
        "train.lr": 1e-4,
        "prune.m_sharp": 42,
        "finetune.epochs": 250,
        "finetune.lr": 5e-5,
    },
}

# dotted keys that may hold None in addition to their declared type
NULLABLE = {"data.mnist_dir": str, "prune.kept": int, "paths.root": str, "sweep.m_sharp_grid": list}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A failure tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _flatten(cfg: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in cfg.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


_SCHEMA = _flatten(DEFAULT_CONFIG)


def parse_override(text: str) -> tuple[str, object]:
    """``"prune.m_sharp=42"`` (leading dashes allowed) -> ``("prune.m_sharp", 42)``.

    The value is read as JSON when possible and as a plain string otherwise.
    """
    body = text.lstrip("-")
    if "=" not in body:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = body.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _coerce(key: str, value):
    default = _SCHEMA[key]
    if value is None:
        if key in NULLABLE:
            return None
        raise ConfigError(f"{key} may not be null")
    expected = NULLABLE.get(key, type(default))
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return value
    if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
        raise ConfigError(f"{key} must be of type {expected.__name__}, got {value!r}")
    return value


def apply_override(cfg: dict, key: str, value) -> None:
    if key not in _SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = _coerce(key, value)


def _merge_file(cfg: dict, data: dict, prefix: str = "") -> None:
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            if name in _SCHEMA:
                raise ConfigError(f"{name} is not a section")
            if not any(k.startswith(name + ".") for k in _SCHEMA):
                raise ConfigError(f"unknown config section {name!r}")
            _merge_file(cfg, value, name + ".")
        else:
            apply_override(cfg, name, value)


def validate_config(cfg: dict) -> dict:
    if cfg["task"] not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}")
    if cfg["model"]["activation"] not in ("relu", "tanh"):
        raise ConfigError("model.activation must be relu or tanh")
    if cfg["model"]["init"] not in ("irnn", "standard"):
        raise ConfigError("model.init must be irnn or standard")
    m = cfg["model"]["m"]
    if m < 1:
        raise ConfigError("model.m must be >= 1")
    pr = cfg["prune"]
    if not 1 <= pr["m_sharp"] <= m:
        raise ConfigError(f"prune.m_sharp must lie in [1, {m}]")
    if pr["kept"] is not None and not 0 <= pr["kept"] <= m * m:
        raise ConfigError("prune.kept out of range")
    if pr["method"] not in METHODS:
        raise ConfigError(f"prune.method must be one of {METHODS}")
    if pr["selector"] not in P.SELECTORS:
        raise ConfigError(f"prune.selector must be one of {P.SELECTORS}")
    if not 0.0 < pr["delta_tilde"] < 0.5:
        raise ConfigError("prune.delta_tilde must lie in (0, 1/2)")
    if pr["random_repeats"] < 1:
        raise ConfigError("prune.random_repeats must be >= 1")
    try:
        P.TauSpec.parse(pr["tau"])
        P._check_theta(pr["theta"])
        TrainConfig(**_train_kwargs(cfg["train"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seeds = cfg["sweep"]["seeds"]
    if not seeds or any(not isinstance(x, int) or isinstance(x, bool) or x < 0 for x in seeds):
        raise ConfigError("sweep.seeds must be a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sweep.seeds must not repeat")
    unknown = [x for x in cfg["sweep"]["methods"] if x not in METHODS]
    if unknown:
        raise ConfigError(f"unknown sweep methods {unknown}")
    grid = cfg["sweep"]["m_sharp_grid"]
    if grid is not None and any(not isinstance(k, int) or not 1 <= k <= m for k in grid):
        raise ConfigError("sweep.m_sharp_grid entries must lie in [1, m]")
    if cfg["bounds"]["delta"] < math.log(2.0):
        raise ConfigError("bounds.delta must be >= log 2")
    return cfg


def build_config(path=None, overrides=(), preset: str = "desk") -> dict:
    """Defaults, then a preset, then a JSON file, then dotted overrides; validated at the end."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in PRESETS[preset].items():
        apply_override(cfg, key, copy.deepcopy(value))
    if path is not None:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge_file(cfg, data)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        apply_override(cfg, key, value)
    return validate_config(cfg)


def artifact_root(cfg: dict | None = None) -> Path:
    if cfg is not None and cfg["paths"]["root"]:
        return Path(cfg["paths"]["root"])
    return Path(os.environ.get(ARTIFACT_ENV, "artifacts"))


def _mnist_path(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"neither {stem} nor {stem}.gz found in {directory}")


def load_datasets(cfg: dict) -> tuple[SequenceBatch, SequenceBatch]:
    task = cfg["task"]
    d = cfg["data"]
    if task.startswith("mnist"):
        directory = d["mnist_dir"] or os.environ.get(MNIST_ENV)
        if not directory:
            raise ConfigError(f"set data.mnist_dir or ${MNIST_ENV} to the directory holding the IDX files")
        directory = Path(directory)
        mode = "rows" if task == "mnist_rows" else "pixels"
        paths = {k: _mnist_path(directory, v) for k, v in MNIST_FILES.items()}
        train_ds = load_mnist_idx(paths["train_images"], paths["train_labels"], mode, d["n_train"])
        test_ds = load_mnist_idx(paths["test_images"], paths["test_labels"], mode, d["n_test"])
        return train_ds, test_ds
    kwargs = {"encoding": d["synthetic_encoding"]} if task == "synthetic_parity" else {}
    seed = d["seed"]
    train_ds = synthetic_task(task, d["n_train"], d["synthetic_steps"], [seed, 0], **kwargs)
    test_ds = synthetic_task(task, d["n_test"], d["synthetic_steps"], [seed, 1], **kwargs)
    return train_ds, test_ds


def _num_classes(*datasets: SequenceBatch) -> int:
    return int(max(int(np.max(ds.targets)) for ds in datasets if ds.n)) + 1


def init_model(cfg: dict, m: int, d_x: int, d_y: int, seed: int) -> RnnParams:
    if cfg["model"]["init"] == "irnn":
        return init_irnn(m, d_x, d_y, seed)
    return init_standard(m, d_x, d_y, seed, cfg["model"]["activation"])


def _train_kwargs(t: dict) -> dict:
    return dict(epochs=t["epochs"], batch_size=t["batch"], lr=t["lr"], lr_decay=t["decay"],
                decay_step=t["decay_step"], clip=t["clip"], seed=t["seed"])


def train_config(cfg: dict, seed: int) -> TrainConfig:
    kwargs = _train_kwargs(cfg["train"])
    kwargs["seed"] = seed
    return TrainConfig(**kwargs)


def finetune_config(cfg: dict, seed: int) -> TrainConfig:
    kwargs = _train_kwargs(cfg["train"])
    kwargs.update(epochs=cfg["finetune"]["epochs"], lr=cfg["finetune"]["lr"], seed=seed)
    return TrainConfig(**kwargs)


def m_sharp_grid(cfg: dict) -> list[int]:
    """Configured grid, or every multiple of 4 up to ``m`` (plus ``m`` itself)."""
    if cfg["sweep"]["m_sharp_grid"] is not None:
        return list(cfg["sweep"]["m_sharp_grid"])
    m = cfg["model"]["m"]
    return sorted(set(range(4, m + 1, 4)) | {m})


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def prune_model(cfg: dict, method: str, trained: RnnParams, cov, train_ds: SequenceBatch, seed: int,
                repeat: int = 0, j=None) -> dict:
    """Apply one compression method; returns ``params``, ``j`` and method-specific extras.

    ``j`` lets the reconstruction-free spectral variant reuse an existing selection.
    """
    pr = cfg["prune"]
    m_sharp = pr["m_sharp"]
    tau = P.TauSpec.parse(pr["tau"])
    theta = tuple(pr["theta"])
    kept = pr["kept"] if pr["kept"] is not None else m_sharp * m_sharp
    full = tuple(range(trained.m))
    if method == "spectral_rec":
        res = P.spectral_prune(trained, train_ds, m_sharp, tau, theta, pr["selector"], cov=cov)
        return {"params": res.compressed, "j": res.j, "result": res}
    if method == "spectral_norec":
        res = B.spectral_no_reconstruction(trained, cov, m_sharp, tau, theta, pr["selector"], j=j)
        return {"params": res.compressed, "j": res.j, "result": res}
    if method in ("random_rec", "random_norec"):
        res = B.random_node_prune(trained, cov, m_sharp, method == "random_rec", _derived_seed(seed, 1, repeat), tau)
        return {"params": res.compressed, "j": res.j, "result": res}
    if method == "random_weight":
        params, mask = B.random_weight_prune(trained, kept, _derived_seed(seed, 2, repeat))
        return {"params": params, "j": full, "mask": mask}
    if method == "magnitude_weight":
        params, mask = B.magnitude_weight_prune(trained, kept)
        return {"params": params, "j": full, "mask": mask}
    if method == "low_rank":
        return {"params": B.low_rank_factorize(trained, m_sharp), "j": full}
    raise ValueError(f"{method!r} is not a post-training compression")


def _weight_counts(cfg: dict, method: str, m: int, d_x: int, d_y: int) -> dict:
    m_sharp = cfg["prune"]["m_sharp"]
    kept = cfg["prune"]["kept"] if cfg["prune"]["kept"] is not None else m_sharp * m_sharp
    if method == "baseline":
        return B.weight_counts("baseline", m, d_x, d_y)
    if method in NODE_METHODS or method == "baseline_small":
        return B.weight_counts("spectral_rec", m, d_x, d_y, m_sharp=m_sharp)
    if method in ("random_weight", "magnitude_weight"):
        return B.weight_counts(method, m, d_x, d_y, kept=kept)
    if method == "column_sparsification":
        return B.weight_counts(method, m, d_x, d_y, kept_cols=m_sharp)
    return B.weight_counts("low_rank", m, d_x, d_y, rank=m_sharp)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in header])


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


METRICS_HEADER = ["method", "seed", "accuracy", "finetuned_accuracy", "repeats", "hidden_size",
                  "input_hidden", "hidden_hidden", "hidden_out", "total"]
BOUNDS_HEADER = ["check", "method", "seed", "repeat", "lhs", "rhs", "holds"]


def _bound_check(report: BoundReport, trained, compressed, j, cov, train_ds, method, seed, repeat, cfg, train_loss):
    budget = budget_from_params(compressed, train_ds.input_radius, rho_psi=1.0,
                                r_y=math.log(trained.d_y))
    meas = measured_terms(trained, compressed, j, cov)
    rhs = approx_bound_rhs(budget, meas, train_ds.steps)
    lhs = approx_lhs(trained, compressed, train_ds)
    terms = generalization_bound_terms(budget, meas, len(j), trained.d_x, trained.d_y, train_ds.n,
                                       train_ds.steps, cfg["bounds"]["delta"], train_loss)
    report.add_check("approx_error", lhs, rhs, method=method, seed=seed, repeat=repeat,
                     budget=budget, measured=meas, generalization=terms)
    return {"check": "approx_error", "method": method, "seed": seed, "repeat": repeat,
            "lhs": lhs, "rhs": rhs, "holds": int(lhs <= rhs)}


def run_seed(cfg: dict, seed: int, train_ds: SequenceBatch, test_ds: SequenceBatch, out_dir: Path,
             timings: dict | None = None) -> tuple[list[dict], list[dict]]:
    """Train one baseline, compress it with every configured method and evaluate everything."""
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = timings if timings is not None else {}
    m, d_x, d_y = cfg["model"]["m"], train_ds.d_x, _num_classes(train_ds, test_ds)
    m_sharp = cfg["prune"]["m_sharp"]
    methods = [x for x in METHODS if x in cfg["sweep"]["methods"]]
    repeats = cfg["prune"]["random_repeats"]
    rows, bound_rows = [], []
    report = BoundReport(inputs={"seed": seed, "n": train_ds.n, "steps": train_ds.steps, "m": m, "m_sharp": m_sharp,
                                 "r_x": train_ds.input_radius, "delta": cfg["bounds"]["delta"]})

    def acc(params):
        return evaluate(params, test_ds)["accuracy"]

    def row(method, accuracy, finetuned=None, n_rep=1, hidden=m_sharp):
        counts = _weight_counts(cfg, method, m, d_x, d_y)
        return {"method": method, "seed": seed, "accuracy": accuracy, "finetuned_accuracy": finetuned,
                "repeats": n_rep, "hidden_size": hidden, **counts}

    t0 = time.perf_counter()
    with _stage("train"):
        trained = train(init_model(cfg, m, d_x, d_y, seed), train_ds, train_config(cfg, seed)).params
    timings["train"] = time.perf_counter() - t0
    save_model(trained, out_dir / "trained.json")
    train_loss = evaluate(trained, train_ds)["loss"]

    with _stage("covariance"):
        cov = covariance_of(trained, train_ds)
        m_nzr, _ = nonzero_rows(cov)
        write_spectrum_csv(cov, out_dir / "spectrum.csv")

    with _stage("prune"):
        t0 = time.perf_counter()
        order, _ = P.greedy_path(cov, m)
        curve = [{"m_sharp": k, "input_loss": P.input_information_loss(cov, order[:k])} for k in range(1, m + 1)]
        _write_csv(out_dir / "loss_vs_msharp.csv", ["m_sharp", "input_loss"], curve)
        grid_rows = []
        for k in m_sharp_grid(cfg):
            res = P.compress(trained, cov, order[:k])
            grid_rows.append({"m_sharp": k, "accuracy": acc(res.compressed), "input_loss": res.losses[0]})
        _write_csv(out_dir / "accuracy_vs_msharp.csv", ["m_sharp", "accuracy", "input_loss"], grid_rows)
        timings["curves"] = time.perf_counter() - t0

    with _stage("prop2"):
        t0 = time.perf_counter()
        p2 = check_prop2(cov, m_sharp, cfg["prune"]["delta_tilde"], cfg["bounds"]["prop2_trials"],
                         _derived_seed(cfg["bounds"]["prop2_seed"], seed))
        (out_dir / "prop2.json").write_text(json.dumps(p2.to_dict(), indent=2) + "\n")
        bound_rows.append({"check": "prop2_success_rate", "method": "spectral_sampled", "seed": seed, "repeat": 0,
                           "lhs": 1.0 - p2.delta_tilde, "rhs": p2.success_rate,
                           "holds": int(p2.success_rate >= 1.0 - p2.delta_tilde)})
        bound_rows.append({"check": "prop2_dof_scaled_rate", "method": "spectral_sampled", "seed": seed, "repeat": 0,
                           "lhs": 1.0 - p2.delta_tilde, "rhs": p2.dof_scaled_success_rate,
                           "holds": int(p2.dof_scaled_success_rate >= 1.0 - p2.delta_tilde)})
        timings["prop2"] = time.perf_counter() - t0

    spectral_j = None
    for method in methods:
        t0 = time.perf_counter()
        with _stage(f"method:{method}"):
            if method == "baseline":
                rows.append(row(method, acc(trained), hidden=m))
            elif method == "baseline_small":
                small = train(init_model(cfg, m_sharp, d_x, d_y, seed), train_ds, train_config(cfg, seed)).params
                rows.append(row(method, acc(small)))
            elif method == "column_sparsification":
                result, mask = B.column_sparsify_train(init_model(cfg, m, d_x, d_y, seed), train_ds,
                                                       train_config(cfg, seed), m_sharp,
                                                       noise_seed=_derived_seed(seed, 3))
                bound_rows.append(_bound_check(report, trained, result.params, tuple(range(m)), cov, train_ds,
                                               method, seed, 0, cfg, train_loss))
                rows.append(row(method, acc(result.params), hidden=m))
            else:
                n_rep = repeats if method.startswith("random") else 1
                accs, fts = [], []
                for r in range(n_rep):
                    out = prune_model(cfg, method, trained, cov, train_ds, seed, r,
                                      j=spectral_j if method == "spectral_norec" else None)
                    params, j = out["params"], out["j"]
                    if method == "spectral_rec":
                        spectral_j = j
                        (out_dir / "spectral_rec.json").write_text(json.dumps(out["result"].to_dict()))
                    bound_rows.append(_bound_check(report, trained, params, j, cov, train_ds, method, seed, r,
                                                   cfg, train_loss))
                    accs.append(acc(params))
                    if method in FINETUNED:
                        ft = B.finetune(params, train_ds, finetune_config(cfg, seed), out.get("mask")).params
                        bound_rows.append(_bound_check(report, trained, ft, j, cov, train_ds, method + "_ft", seed,
                                                       r, cfg, train_loss))
                        fts.append(acc(ft))
                hidden = m_sharp if method in NODE_METHODS else m
                rows.append(row(method, float(np.mean(accs)), float(np.mean(fts)) if fts else None, n_rep, hidden))
        timings[method] = time.perf_counter() - t0

    report.quantities = {"m_nzr": m_nzr, "trace": cov.trace, "train_loss": train_loss,
                         "prop2": p2.to_dict(), "spectral_j": list(spectral_j) if spectral_j else None}
    report.to_json(out_dir / "bound_report.json")
    _write_csv(out_dir / "metrics.csv", METRICS_HEADER, rows)
    _write_csv(out_dir / "bounds.csv", BOUNDS_HEADER, bound_rows)
    (out_dir / "info.json").write_text(json.dumps({"m_nzr": m_nzr, "seed": seed}) + "\n")
    return rows, bound_rows


def save_model(params: RnnParams, path: Path) -> None:
    save_params(params, path)


RUN_HEADER = ["method", "seed", "accuracy", "finetuned_accuracy", "train_accuracy", "hidden_size",
              "input_hidden", "hidden_hidden", "hidden_out", "total"]


def run(cfg: dict, out_dir=None) -> Path:
    """Train, compress with ``prune.method``, optionally fine-tune, evaluate and write artifacts.

    Random methods use repeat 0 only. Fine-tuning runs when ``finetune.epochs > 0``
    and the method supports it (low rank and the retrained baselines do not).
    """
    seed = cfg["train"]["seed"]
    method = cfg["prune"]["method"]
    out = Path(out_dir) if out_dir is not None else artifact_root(cfg) / f"run_{method}_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    with _stage("data"):
        train_ds, test_ds = load_datasets(cfg)
    m, d_x, d_y = cfg["model"]["m"], train_ds.d_x, _num_classes(train_ds, test_ds)
    with _stage("train"):
        trained = train(init_model(cfg, m, d_x, d_y, seed), train_ds, train_config(cfg, seed)).params
        save_model(trained, out / "trained.json")
    with _stage("covariance"):
        cov = covariance_of(trained, train_ds)
        write_spectrum_csv(cov, out / "spectrum.csv")
    with _stage("prune"):
        mask = None
        if method == "baseline":
            compressed, j = trained, tuple(range(m))
        elif method == "baseline_small":
            compressed = train(init_model(cfg, cfg["prune"]["m_sharp"], d_x, d_y, seed), train_ds,
                               train_config(cfg, seed)).params
            j = None
        elif method == "column_sparsification":
            result, mask = B.column_sparsify_train(init_model(cfg, m, d_x, d_y, seed), train_ds,
                                                   train_config(cfg, seed), cfg["prune"]["m_sharp"],
                                                   noise_seed=_derived_seed(seed, 3))
            compressed, j = result.params, tuple(range(m))
        else:
            res = prune_model(cfg, method, trained, cov, train_ds, seed)
            compressed, j, mask = res["params"], res["j"], res.get("mask")
            if "result" in res:
                (out / "prune_result.json").write_text(json.dumps(res["result"].to_dict()) + "\n")
        if mask is not None:
            (out / "mask.json").write_text(json.dumps(mask.to_dict()) + "\n")
        save_model(compressed, out / "compressed.json")
    finetuned = None
    if cfg["finetune"]["epochs"] > 0 and compressed.hid_factors is None and method not in (
            "baseline", "baseline_small", "column_sparsification"):
        with _stage("finetune"):
            finetuned = B.finetune(compressed, train_ds, finetune_config(cfg, seed), mask).params
            save_model(finetuned, out / "finetuned.json")
    with _stage("eval"):
        report_ = BoundReport(inputs={"seed": seed, "method": method, "n": train_ds.n, "steps": train_ds.steps})
        if j is not None:
            train_loss = evaluate(trained, train_ds)["loss"]
            _bound_check(report_, trained, compressed, j, cov, train_ds, method, seed, 0, cfg, train_loss)
        report_.to_json(out / "bound_report.json")
        row = {"method": method, "seed": seed, "accuracy": evaluate(compressed, test_ds)["accuracy"],
               "finetuned_accuracy": evaluate(finetuned, test_ds)["accuracy"] if finetuned is not None else None,
               "train_accuracy": evaluate(compressed, train_ds)["accuracy"], "hidden_size": compressed.m,
               **_weight_counts(cfg, method, m, d_x, d_y)}
        _write_csv(out / "metrics.csv", RUN_HEADER, [row])
    return out


def run_sweep(cfg: dict, out_dir=None) -> Path:
    """Run every seed of the sweep into ``out_dir`` and aggregate the report there."""
    out = Path(out_dir) if out_dir is not None else artifact_root(cfg) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    with _stage("data"):
        train_ds, test_ds = load_datasets(cfg)
    timings = {}
    start = time.perf_counter()
    seed_dirs = []
    for seed in cfg["sweep"]["seeds"]:
        seed_dir = out / f"seed_{seed}"
        timings[f"seed_{seed}"] = {}
        run_seed(cfg, seed, train_ds, test_ds, seed_dir, timings[f"seed_{seed}"])
        seed_dirs.append(seed_dir)
    timings["total"] = time.perf_counter() - start
    # timings vary between runs, so they live outside the metrics files
    (out / "timing.json").write_text(json.dumps(timings, indent=2) + "\n")
    report(seed_dirs, out)
    return out


def _std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def report(artifact_dirs, out_dir) -> dict[str, Path]:
    """Aggregate per-seed artifacts into spectrum, loss curve, comparison and bounds CSVs.

    The spectrum and loss curve come from the lowest seed; the comparison
    averages each method over all seeds; bounds rows are concatenated.
    """
    dirs = [Path(d) for d in artifact_dirs]
    missing = [str(d) for d in dirs if not (d / "metrics.csv").exists()]
    if not dirs or missing:
        raise FileNotFoundError(f"missing artifacts: {missing or 'no directories given'}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    metric_rows = [r for d in dirs for r in read_csv(d / "metrics.csv")]
    metric_rows.sort(key=lambda r: (METHODS.index(r["method"]), int(r["seed"])))
    first = min(dirs, key=lambda d: int(json.loads((d / "info.json").read_text())["seed"]))

    paths = {name: out / f"{name}.csv" for name in ("spectrum", "loss_vs_msharp", "comparison", "bounds")}
    write_spectrum_csv(read_spectrum_csv(first / "spectrum.csv"), paths["spectrum"])
    curve = read_csv(first / "loss_vs_msharp.csv")
    _write_csv(paths["loss_vs_msharp"], ["m_sharp", "input_loss"],
               [{"m_sharp": int(r["m_sharp"]), "input_loss": float(r["input_loss"])} for r in curve])

    comparison = []
    for method in METHODS:
        rows = [r for r in metric_rows if r["method"] == method]
        if not rows:
            continue
        accs = [float(r["accuracy"]) for r in rows]
        fts = [float(r["finetuned_accuracy"]) for r in rows if r["finetuned_accuracy"]]
        comparison.append({
            "method": method, "seeds": len(rows),
            "accuracy_mean": float(np.mean(accs)), "accuracy_std": _std(accs),
            "finetuned_mean": float(np.mean(fts)) if fts else None, "finetuned_std": _std(fts) if fts else None,
            **{k: int(rows[0][k]) for k in ("input_hidden", "hidden_hidden", "hidden_out", "total")},
        })
    _write_csv(paths["comparison"], ["method", "seeds", "accuracy_mean", "accuracy_std", "finetuned_mean",
                                     "finetuned_std", "input_hidden", "hidden_hidden", "hidden_out", "total"],
               comparison)

    bound_rows = [r for d in sorted(dirs, key=lambda d: d.name) for r in read_csv(d / "bounds.csv")]
    bound_rows.sort(key=lambda r: (r["check"], r["method"], int(r["seed"]), int(r["repeat"])))
    _write_csv(paths["bounds"], BOUNDS_HEADER, bound_rows)
    _write_csv(out / "metrics.csv", METRICS_HEADER, metric_rows)
    return paths
