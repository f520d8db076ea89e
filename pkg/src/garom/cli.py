"""``garom`` command line: data generation, training, inference, comparison, robustness.

Every option can also come from a JSON file given with ``--config``; keys
are the long flag names with dashes replaced by underscores, and flags given
on the command line win over the file. Each run writes the fully resolved
options next to its outputs, and that file can be passed back via
``--config`` to repeat the run.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, data
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .inference import markov_bound_terms, normal_interval, predict_stats
from .model import TrainConfig, TrainingDivergedError, build_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
OUTPUT_ENV = "GAROM_OUTPUT_DIR"
RESOLVED_NAME = "config.resolved"

log = logging.getLogger("garom")


class UsageError(Exception):
    pass


def _default_out():
    return os.environ.get(OUTPUT_ENV, ".")


_TRAIN_DEFAULTS = {
    "epochs": bench.DESK_EPOCHS,
    "seed": 0,
    "latent": 64,
    "lr": 1e-3,
    "batch_size": 8,
    "noise_dim": 12,
    "lambda_k": 1e-3,
    "gamma": 0.3,
    "paper_scale": False,
}

DEFAULTS = {
    "gen-data": {"dataset": "gaussian", "n": 400, "points": 900, "seed": 0, "out": None},
    "train": {**_TRAIN_DEFAULTS, "data": None, "eta": 1.0, "split": None, "split_seed": None,
              "out": None},
    "infer": {"ckpt": None, "params": None, "k": 20, "seed": 0, "z_score": None,
              "markov_a": None, "out": None},
    "compare": {**_TRAIN_DEFAULTS, "data": None, "dims": "4,16,64", "split": 0.6,
                "split_seed": None, "k": 20, "nn_epochs": 20000, "ae_epochs": 1000,
                "models": ",".join(bench.MODELS), "jobs": 1, "out": None},
    "robustness": {**_TRAIN_DEFAULTS, "data": None, "eta": 1.0, "seeds": 5, "split": 0.6,
                   "split_seed": None, "checkpoint_every": 100, "k": 20, "jobs": 1,
                   "out": None},
}


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--paper-scale", action="store_true", default=argparse.SUPPRESS,
                   help=f"train for {bench.FULL_EPOCHS} epochs unless --epochs is given")
    p.add_argument("--seed", type=int)
    p.add_argument("--latent", type=int, help="discriminator bottleneck width")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--noise-dim", type=int)
    p.add_argument("--lambda-k", type=float)
    p.add_argument("--gamma", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="garom", description="GAROM reduced order modelling tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = dict(argument_default=argparse.SUPPRESS)

    p = sub.add_parser("gen-data", help="write a generated benchmark to CSV", **common)
    p.add_argument("--dataset", choices=["gaussian"])
    p.add_argument("--n", type=int, help="number of parameter instances")
    p.add_argument("--points", type=int, help="evaluation points per instance")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("train", help="train a (r-)GAROM model", **common)
    p.add_argument("--data")
    p.add_argument("--eta", type=float, help="0 for GAROM, 1 for r-GAROM")
    p.add_argument("--split", type=float, help="train on this fraction of rows")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--out", help="output directory")
    _add_train_flags(p)

    p = sub.add_parser("infer", help="ensemble statistics from a checkpoint", **common)
    p.add_argument("--ckpt")
    p.add_argument("--params", help="CSV with c_* columns (u_* columns needed for --markov-a)")
    p.add_argument("--k", type=int, help="ensemble size, >= 2")
    p.add_argument("--seed", type=int)
    p.add_argument("--z-score", type=float, help="add normal-interval bounds")
    p.add_argument("--markov-a", type=float, help="add the Markov error bound at threshold a")
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("compare", help="GAROM vs baselines across latent dims", **common)
    p.add_argument("--data")
    p.add_argument("--dims", help="comma separated latent dimensions")
    p.add_argument("--split", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--nn-epochs", type=int)
    p.add_argument("--ae-epochs", type=int)
    p.add_argument("--models", help="comma separated subset of " + ",".join(bench.MODELS))
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")
    _add_train_flags(p)

    p = sub.add_parser("robustness", help="multi-seed training study", **common)
    p.add_argument("--data")
    p.add_argument("--eta", type=float)
    p.add_argument("--seeds", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")
    _add_train_flags(p)

    for p in sub.choices.values():
        p.add_argument("--config", help="JSON file of option values")
    return parser


def resolve(command, flags):
    """Merge defaults, the optional config file and explicit flags."""
    opts = dict(DEFAULTS[command])
    cfg_path = flags.pop("config", None)
    if cfg_path:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                file_opts = json.load(fh)
        except OSError as exc:
            raise FileNotFoundError(f"config file {cfg_path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {cfg_path} is not valid JSON: {exc}") from None
        if file_opts.pop("command", command) != command:
            raise UsageError(f"config file {cfg_path} is for another command")
        unknown = sorted(set(file_opts) - set(opts))
        if unknown:
            raise UsageError(f"unknown keys in {cfg_path}: {', '.join(unknown)}")
        opts.update(file_opts)
    opts.update(flags)
    if opts.get("paper_scale") and "epochs" not in flags and not (
            cfg_path and "epochs" in file_opts):
        opts["epochs"] = bench.FULL_EPOCHS
    return opts


def _require(opts, *keys):
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " +
                         ", ".join("--" + k.replace("_", "-") for k in missing))


def _train_config(opts, eta=1.0):
    try:
        return TrainConfig(eta=eta, epochs=opts["epochs"], seed=opts["seed"],
                           latent_dim=opts["latent"], learning_rate=opts["lr"],
                           batch_size=opts["batch_size"], noise_dim=opts["noise_dim"],
                           lambda_k=opts["lambda_k"], gamma=opts["gamma"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_resolved(path, command, opts):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"command": command, **opts}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(opts, name):
    out = Path(opts["out"] or Path(_default_out()) / name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(opts):
    snaps = data.load_csv(opts["data"])
    seed = opts["split_seed"] if opts["split_seed"] is not None else opts["seed"]
    try:
        sp = data.split(snaps, opts["split"], seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return snaps, sp


# ---------------------------------------------------------------- commands


def cmd_gen_data(opts):
    if opts["n"] < 1 or opts["points"] < 1:
        raise UsageError("--n and --points must be >= 1")
    out = Path(opts["out"] or Path(_default_out()) / f"{opts['dataset']}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    snaps = data.gen_gaussian_dataset(opts["n"], opts["points"], seed=opts["seed"])
    data.save_csv(snaps, out)
    _write_resolved(f"{out}.{RESOLVED_NAME}", "gen-data", {**opts, "out": str(out)})
    log.info("wrote %d rows x %d columns to %s", snaps.n, snaps.n_c + snaps.n_u, out)
    return out


def write_history(model, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss_d", "loss_g", "k", "convergence"))
        for r in model.history:
            w.writerow([r.epoch, repr(float(r.loss_d)), repr(float(r.loss_g)),
                        repr(float(r.k)), repr(float(r.convergence))])


def cmd_train(opts):
    _require(opts, "data")
    cfg = _train_config(opts, opts["eta"])
    if opts["split"] is not None:
        snaps, sp = _load_split(opts)
        snaps = snaps.subset(sp.train)
    else:
        snaps = data.load_csv(opts["data"])
    out = _out_dir(opts, "run")
    _write_resolved(out / RESOLVED_NAME, "train", {**opts, "out": str(out)})
    model = build_model(snaps.n_u, snaps.n_c, cfg)
    for line in model.build_log:
        log.warning(line)

    def progress(epoch, m):
        if (epoch + 1) % max(1, cfg.epochs // 20) == 0:
            h = m.history[-1]
            log.info("epoch %d L_D %.5f L_G %.5f k %.4f M %.5f", epoch + 1, h.loss_d, h.loss_g,
                     h.k, h.convergence)

    try:
        train(model, snaps, callback=progress)
    finally:
        write_history(model, out / "history.csv")
    save_checkpoint(model, out / "checkpoint.bin")
    return out


def cmd_infer(opts):
    _require(opts, "ckpt", "params")
    if opts["k"] < 2:
        raise UsageError(f"--k must be >= 2 for a variance estimate, got {opts['k']}")
    if opts["markov_a"] is not None and opts["markov_a"] <= 0:
        raise UsageError("--markov-a must be > 0")
    if opts["z_score"] is not None and opts["z_score"] < 0:
        raise UsageError("--z-score must be >= 0")
    model = load_checkpoint(opts["ckpt"])
    params, sols = data.read_table(opts["params"])
    if params.shape[1] != model.n_c:
        raise data.CsvFormatError(f"{opts['params']} has {params.shape[1]} c_* columns, "
                                  f"checkpoint expects {model.n_c}")
    if sols.shape[1] not in (0, model.n_u):
        raise data.CsvFormatError(f"{opts['params']} has {sols.shape[1]} u_* columns, "
                                  f"checkpoint expects {model.n_u}")
    rng = np.random.default_rng(opts["seed"])
    stats = predict_stats(model, params, opts["k"], rng)
    extra = [(f"mean_{j}", stats.mean[:, j]) for j in range(model.n_u)]
    extra += [(f"var_{j}", stats.variance[:, j]) for j in range(model.n_u)]
    if opts["z_score"] is not None:
        lo, hi = normal_interval(stats, opts["z_score"])
        extra += [(f"lower_{j}", lo[:, j]) for j in range(model.n_u)]
        extra += [(f"upper_{j}", hi[:, j]) for j in range(model.n_u)]
    if opts["markov_a"] is not None:
        if sols.shape[1] == 0:
            raise data.CsvFormatError("--markov-a needs u_* reference columns in --params")
        ref = data.SnapshotSet(params, sols, "ingested")
        est = markov_bound_terms(model, ref, opts["k"], rng)
        extra.append(("markov_bound", np.full(len(params), est.bound(opts["markov_a"]))))
    out = Path(opts["out"] or Path(_default_out()) / "stats.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_table(out, params, extra=extra)
    _write_resolved(f"{out}.{RESOLVED_NAME}", "infer", {**opts, "out": str(out)})
    return out


def _parse_list(text, what, cast=int):
    try:
        items = [cast(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--{what} must be a comma separated list, got {text!r}") from None
    if not items:
        raise UsageError(f"--{what} is empty")
    return items


def cmd_compare(opts):
    _require(opts, "data")
    dims = _parse_list(opts["dims"], "dims")
    models = _parse_list(opts["models"], "models", str)
    bad = sorted(set(models) - set(bench.MODELS))
    if bad:
        raise UsageError(f"unknown models {bad}; choose from {', '.join(bench.MODELS)}")
    if opts["k"] < 2:
        raise UsageError("--k must be >= 2")
    cfg = _train_config(opts)
    snaps, sp = _load_split(opts)
    out = _out_dir(opts, "compare")
    _write_resolved(out / RESOLVED_NAME, "compare", {**opts, "out": str(out)})
    report = bench.compare_models(snaps, sp, dims, cfg, models, opts["k"], opts["nn_epochs"],
                                  opts["ae_epochs"], jobs=opts["jobs"])
    report.write_csv(out / "report.csv")
    report.write_metadata(out / "report.meta.json")
    report.write_timings(out / "timings.csv")
    with open(out / "deltas.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "latent_dim", "rowset", "row", "delta"))
        for (m, d, rs), vals in report.deltas.items():
            for i, v in enumerate(np.atleast_1d(vals)):
                w.writerow([m, d, rs, i, repr(float(v))])
    return out


def cmd_robustness(opts):
    _require(opts, "data")
    if opts["seeds"] < 2:
        raise UsageError("--seeds must be >= 2")
    if opts["k"] < 2:
        raise UsageError("--k must be >= 2")
    cfg = _train_config(opts, opts["eta"])
    snaps, sp = _load_split(opts)
    out = _out_dir(opts, "robustness")
    _write_resolved(out / RESOLVED_NAME, "robustness", {**opts, "out": str(out)})
    try:
        record = bench.robustness_study(snaps, sp, cfg, opts["seeds"], opts["checkpoint_every"],
                                        n_samples=opts["k"], jobs=opts["jobs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    record.write_csv(out / "robustness.csv")
    record.write_envelope_csv(out / "robustness_envelope.csv")
    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "seconds"))
        for run in record.runs:
            w.writerow([run.seed, f"{run.seconds:.3f}"])
    failed = [r for r in record.runs if r.status != "ok"]
    for r in failed:
        log.error("seed %d %s: %s", r.seed, r.status, r.message)
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "compare": cmd_compare,
    "robustness": cmd_robustness,
}


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    flags = vars(ns)
    command = flags.pop("command")
    verbose = flags.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        opts = resolve(command, flags)
        COMMANDS[command](opts)
    except UsageError as exc:
        print(f"garom {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"garom {command}: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, data.CsvFormatError, CheckpointFormatError) as exc:
        print(f"garom {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
