"""Spectral pruning of recurrent networks: training, compression, baselines and bound checks.

Every subcommand accepts ``--config file.json``, ``--preset {desk,full}`` and any
number of dotted overrides such as ``--prune.m_sharp=42``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import baselines as B
from . import experiment as E
from .bounds import BoundReport, check_prop2
from .covariance import covariance_of
from .pruning import PruneResult
from .rnn import evaluate, load_params, train

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2
EXIT_VIOLATION = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnnprune", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--preset", default="desk", choices=sorted(E.PRESETS))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a baseline network")
    p.add_argument("--out", type=Path, help="model JSON path")

    p = sub.add_parser("prune", parents=[common], help="compress a trained network with prune.method")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("finetune", parents=[common], help="continue training, optionally under a mask")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="train and test accuracy and loss of a model")
    p.add_argument("--model", type=Path, required=True)

    p = sub.add_parser("run", parents=[common], help="train, prune, fine-tune and evaluate in one go")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", parents=[common], help="method comparison over all configured seeds")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("report", parents=[common], help="aggregate artifact directories into CSVs")
    p.add_argument("dirs", type=Path, nargs="+", help="seed directories or sweep directories")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("check-bounds", parents=[common], help="evaluate the bound inequalities for a pair")
    p.add_argument("--trained", type=Path, required=True)
    p.add_argument("--compressed", type=Path, required=True)
    p.add_argument("--prune-result", type=Path, help="PruneResult JSON giving the kept index set")
    p.add_argument("--prop2", action="store_true", help="also run the sampled index set check")
    p.add_argument("--out", type=Path)
    return parser


def _split_overrides(extra: list[str]) -> list[str]:
    bad = [x for x in extra if not (x.startswith("--") and "=" in x)]
    if bad:
        raise E.ConfigError(f"unrecognized arguments: {' '.join(bad)}")
    return extra


def _expand_dirs(dirs: list[Path]) -> list[Path]:
    """Seed directories pass through; a sweep directory expands to its ``seed_*`` children."""
    out = []
    for d in dirs:
        seeds = sorted(p for p in d.glob("seed_*") if p.is_dir())
        out.extend([d] if (d / "info.json").exists() or not seeds else seeds)
    return out


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_train(args, cfg):
    train_ds, test_ds = E.load_datasets(cfg)
    seed = cfg["train"]["seed"]
    with E._stage("train"):
        init = E.init_model(cfg, cfg["model"]["m"], train_ds.d_x, E._num_classes(train_ds, test_ds), seed)
        params = train(init, train_ds, E.train_config(cfg, seed)).params
    out = args.out or E.artifact_root(cfg) / "trained.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    E.save_model(params, out)
    _print_json({"model": str(out), "test": evaluate(params, test_ds)})
    return EXIT_OK


def _cmd_prune(args, cfg):
    method = cfg["prune"]["method"]
    if method in ("baseline", "baseline_small", "column_sparsification"):
        raise E.ConfigError(f"{method} is not a post-training compression; use the run command")
    trained = load_params(args.model)
    train_ds, test_ds = E.load_datasets(cfg)
    with E._stage("covariance"):
        cov = covariance_of(trained, train_ds)
    with E._stage("prune"):
        res = E.prune_model(cfg, method, trained, cov, train_ds, cfg["train"]["seed"])
    out = args.out or E.artifact_root(cfg) / f"prune_{method}"
    out.mkdir(parents=True, exist_ok=True)
    E.save_model(res["params"], out / "compressed.json")
    if "result" in res:
        (out / "prune_result.json").write_text(json.dumps(res["result"].to_dict()) + "\n")
    if "mask" in res:
        (out / "mask.json").write_text(json.dumps(res["mask"].to_dict()) + "\n")
    _print_json({"dir": str(out), "j": list(res["j"]), "test": evaluate(res["params"], test_ds)})
    return EXIT_OK


def _cmd_finetune(args, cfg):
    params = load_params(args.model)
    mask = B.WeightMask.from_dict(json.loads(args.mask.read_text())) if args.mask else None
    train_ds, test_ds = E.load_datasets(cfg)
    with E._stage("finetune"):
        tuned = B.finetune(params, train_ds, E.finetune_config(cfg, cfg["train"]["seed"]), mask).params
    args.out.parent.mkdir(parents=True, exist_ok=True)
    E.save_model(tuned, args.out)
    _print_json({"model": str(args.out), "test": evaluate(tuned, test_ds)})
    return EXIT_OK


def _cmd_eval(args, cfg):
    params = load_params(args.model)
    train_ds, test_ds = E.load_datasets(cfg)
    _print_json({"train": evaluate(params, train_ds), "test": evaluate(params, test_ds)})
    return EXIT_OK


def _cmd_run(args, cfg):
    out = E.run(cfg, args.out)
    _print_json({"dir": str(out), "metrics": E.read_csv(out / "metrics.csv")})
    return EXIT_OK


def _cmd_sweep(args, cfg):
    out = E.run_sweep(cfg, args.out)
    print((out / "comparison.csv").read_text(), end="")
    return EXIT_OK


def _cmd_report(args, cfg):
    with E._stage("report"):
        paths = E.report(_expand_dirs(args.dirs), args.out)
    _print_json({k: str(v) for k, v in paths.items()})
    return EXIT_OK


def _cmd_check_bounds(args, cfg):
    trained = load_params(args.trained)
    compressed = load_params(args.compressed)
    train_ds, _ = E.load_datasets(cfg)
    if args.prune_result:
        j = PruneResult.from_dict(json.loads(args.prune_result.read_text())).j
    else:
        j = tuple(range(trained.m))
    with E._stage("covariance"):
        cov = covariance_of(trained, train_ds)
    report = BoundReport(inputs={"trained": str(args.trained), "compressed": str(args.compressed),
                                 "n": train_ds.n, "steps": train_ds.steps})
    with E._stage("bounds"):
        train_loss = evaluate(trained, train_ds)["loss"]
        E._bound_check(report, trained, compressed, j, cov, train_ds, "pair", cfg["train"]["seed"], 0, cfg, train_loss)
        if args.prop2:
            p2 = check_prop2(cov, len(j), cfg["prune"]["delta_tilde"], cfg["bounds"]["prop2_trials"],
                             cfg["bounds"]["prop2_seed"])
            report.quantities["prop2"] = p2.to_dict()
            # stored as lhs <= rhs: required rate vs observed rate
            report.add_check("prop2_success_rate", 1.0 - p2.delta_tilde, p2.success_rate)
            report.add_check("prop2_dof_scaled_rate", 1.0 - p2.delta_tilde, p2.dof_scaled_success_rate)
    text = report.to_json(args.out)
    print(text)
    return EXIT_OK if report.all_hold else EXIT_VIOLATION


COMMANDS = {
    "train": _cmd_train,
    "prune": _cmd_prune,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "check-bounds": _cmd_check_bounds,
}


def main(argv=None) -> int:
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = E.build_config(args.config, _split_overrides(extra), args.preset)
    except (E.ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"rnnprune: error [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except E.StageError as exc:
        print(f"rnnprune: error {exc}", file=sys.stderr)
        return EXIT_STAGE
    except E.ConfigError as exc:
        print(f"rnnprune: error [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"rnnprune: error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
