"""Evaluation suite: error metrics, model comparison tables and seed robustness."""

import csv
import json
import math
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .inference import predict_stats, DEFAULT_SAMPLES, BOUND_REDUCTION
from .model import RECON_REDUCTION, TrainConfig, TrainingDivergedError, build_model, train

GAROM_MODELS = ("garom", "r-garom")
MODELS = GAROM_MODELS + baselines.METHODS
ROWSETS = ("train", "test")
DESK_EPOCHS = 5000
FULL_EPOCHS = 20000

EPS_FORMULA = "mean_i ||u_i - u_hat_i||_2^2 / ||u_i||_2^2 (percent)"
EPS_L2_FORMULA = "mean_i ||u_i - u_hat_i||_2 / ||u_i||_2 (percent)"
STD_FORMULA = ("mean_i [ mean_j sigma_hat_ij / (||u_i||_2 / sqrt(N_u)) ] (percent), "
               "sigma_hat from the unbiased K-sample ensemble variance")


# ---------------------------------------------------------------- metrics


def relative_errors(u_true, u_pred, squared=True):
    """Per-row relative error; rows with zero-norm truth come back as NaN."""
    u = np.atleast_2d(np.asarray(u_true, dtype=np.float64))
    uh = np.atleast_2d(np.asarray(u_pred, dtype=np.float64))
    if u.shape != uh.shape:
        raise ValueError(f"shape mismatch: truth {u.shape} vs prediction {uh.shape}")
    num = np.einsum("ij,ij->i", u - uh, u - uh)
    den = np.einsum("ij,ij->i", u, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return ratio if squared else np.sqrt(ratio)


def mean_l2_relative_error(u_true, u_pred, squared=True):
    """Mean over rows of the relative error (a fraction, not percent).

    ``squared=True`` averages squared-norm ratios; ``squared=False``
    averages plain norm ratios. Zero-norm truth rows are skipped with a
    warning.
    """
    r = relative_errors(u_true, u_pred, squared)
    bad = np.isnan(r)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} zero-norm truth row(s) excluded from the error",
                      RuntimeWarning, stacklevel=2)
        if bad.all():
            return math.nan
    return float(r[~bad].mean())


def delta(u_true, u_pred):
    """Signed mean difference ``mean(u_true - u_pred)`` over the last axis."""
    u = np.asarray(u_true, dtype=np.float64)
    uh = np.asarray(u_pred, dtype=np.float64)
    if u.shape != uh.shape:
        raise ValueError(f"shape mismatch: truth {u.shape} vs prediction {uh.shape}")
    out = (u - uh).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def predictive_std_percent(std, u_true):
    std = np.atleast_2d(std)
    u = np.atleast_2d(np.asarray(u_true, dtype=np.float64))
    rms = np.sqrt(np.einsum("ij,ij->i", u, u) / u.shape[1])
    return float(np.mean(std.mean(axis=1) / rms) * 100.0)


# ---------------------------------------------------------------- comparison


@dataclass
class ReportRow:
    model: str
    latent_dim: int
    rowset: str
    eps_percent: float = math.nan
    eps_l2_percent: float = math.nan
    std_percent: float = math.nan
    status: str = "ok"
    message: str = ""
    seconds: float = 0.0


@dataclass
class EvalReport:
    rows: list
    deltas: dict = field(default_factory=dict)  # (model, dim, rowset) -> per-row delta
    metadata: dict = field(default_factory=dict)

    CSV_FIELDS = ("model", "latent_dim", "rowset", "eps_percent", "eps_l2_percent",
                  "std_percent", "status", "message")

    def get(self, model, latent_dim, rowset):
        for r in self.rows:
            if (r.model, r.latent_dim, r.rowset) == (model, latent_dim, rowset):
                return r
        raise KeyError((model, latent_dim, rowset))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_FIELDS)
            for r in self.rows:
                w.writerow([r.model, r.latent_dim, r.rowset, _num(r.eps_percent),
                            _num(r.eps_l2_percent), _num(r.std_percent), r.status, r.message])

    def write_timings(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("model", "latent_dim", "rowset", "seconds"))
            for r in self.rows:
                w.writerow([r.model, r.latent_dim, r.rowset, f"{r.seconds:.3f}"])

    def write_metadata(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _num(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _eval_rows(model_name, dim, rowset, truth, pred, std=None):
    row = ReportRow(model_name, dim, rowset)
    row.eps_percent = 100.0 * mean_l2_relative_error(truth, pred)
    row.eps_l2_percent = 100.0 * mean_l2_relative_error(truth, pred, squared=False)
    if std is not None:
        row.std_percent = predictive_std_percent(std, truth)
    return row, delta(truth, pred)


def _garom_job(name, dim, train_set, test_set, config, n_samples, eval_seed):
    cfg = config.replace(eta=0.0 if name == "garom" else 1.0, latent_dim=dim)
    t0 = time.perf_counter()
    model = build_model(train_set.n_u, train_set.n_c, cfg)
    train(model, train_set)
    out = []
    for rowset, s in (("train", train_set), ("test", test_set)):
        stats = predict_stats(model, s.params, n_samples, np.random.default_rng(eval_seed))
        out.append(_eval_rows(name, dim, rowset, s.solutions, stats.mean, stats.std))
    return out, time.perf_counter() - t0


def _baseline_job(reducer, dim, train_set, test_set, config, opts):
    t0 = time.perf_counter()
    if reducer == "pod":
        red = baselines.pod_fit(train_set.solutions, dim, opts["center"])[0]
    else:
        red = baselines.ae_fit(train_set.solutions, dim, opts["ae_epochs"],
                               config.learning_rate, config.seed)
    out = []
    for interp in baselines.INTERPOLATORS:
        method = f"{reducer}-{interp}"
        try:
            pipe = baselines.fit_pipeline(method, train_set.params, train_set.solutions, dim,
                                          seed=config.seed, nn_epochs=opts["nn_epochs"],
                                          lr=config.learning_rate, reducer=red)
            for rowset, s in (("train", train_set), ("test", test_set)):
                out.append(_eval_rows(method, dim, rowset, s.solutions,
                                      baselines.rom_predict(pipe, s.params)))
        except Exception as exc:  # one failed cell must not abort the table
            out.extend(_failed(method, dim, exc))
    return out, time.perf_counter() - t0


def _failed(model, dim, exc):
    status = "diverged" if isinstance(exc, (TrainingDivergedError, FloatingPointError)) else "failed"
    msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return [(ReportRow(model, dim, rs, status=status, message=msg), None) for rs in ROWSETS]


def _run_job(job):
    kind, name, dim, train_set, test_set, config, opts = job
    members = [name] if kind == "garom" else [f"{name}-{i}" for i in baselines.INTERPOLATORS]
    try:
        if kind == "garom":
            return _garom_job(name, dim, train_set, test_set, config, opts["n_samples"],
                              opts["eval_seed"])
        return _baseline_job(name, dim, train_set, test_set, config, opts)
    except Exception as exc:
        out = []
        for m in members:
            out.extend(_failed(m, dim, exc))
        return out, 0.0


def _map_jobs(fn, jobs, n_workers):
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, jobs))


def compare_models(dataset, split, latent_dims, config=None, models=MODELS,
                   n_samples=DEFAULT_SAMPLES, nn_epochs=20000, ae_epochs=1000,
                   center_pod=False, eval_seed=0, jobs=1):
    """Fit every requested model at every latent dimension and score both row sets.

    Each (model family, dim) is an independent job; ``jobs > 1`` runs them in
    worker processes. Rows are assembled in a fixed order, so the report does
    not depend on scheduling.
    """
    config = config or TrainConfig(epochs=DESK_EPOCHS)
    unknown = set(models) - set(MODELS)
    if unknown:
        raise ValueError(f"unknown models {sorted(unknown)}")
    train_set, test_set = dataset.subset(split.train), dataset.subset(split.test)
    opts = {"n_samples": n_samples, "eval_seed": eval_seed, "nn_epochs": nn_epochs,
            "ae_epochs": ae_epochs, "center": center_pod}
    work = []
    for dim in latent_dims:
        for name in GAROM_MODELS:
            if name in models:
                work.append(("garom", name, int(dim), train_set, test_set, config, opts))
        for reducer in baselines.REDUCERS:
            if any(m.startswith(reducer + "-") for m in models):
                work.append(("baseline", reducer, int(dim), train_set, test_set, config, opts))
    results = _map_jobs(_run_job, work, jobs)

    rows, deltas = [], {}
    for dim in latent_dims:
        for model_name in models:
            for (items, seconds), job in zip(results, work):
                if job[2] != dim:
                    continue
                for row, d in items:
                    if row.model == model_name:
                        row.seconds = seconds
                        rows.append(row)
                        if d is not None:
                            deltas[(row.model, row.latent_dim, row.rowset)] = d
    meta = {
        "eps_formula": EPS_FORMULA,
        "eps_l2_formula": EPS_L2_FORMULA,
        "std_formula": STD_FORMULA,
        "ensemble_samples": n_samples,
        "eval_seed": eval_seed,
        "recon_loss_reduction": RECON_REDUCTION,
        "markov_bound_reduction": BOUND_REDUCTION,
        "rbf_kernel": baselines.RBF_KERNEL,
        "pod_centering": bool(center_pod),
        "nn_epochs": nn_epochs,
        "ae_epochs": ae_epochs,
        "latent_dims": [int(d) for d in latent_dims],
        "split_seed": split.seed,
        "n_train": int(len(split.train)),
        "n_test": int(len(split.test)),
        "train_config": config.__dict__,
    }
    return EvalReport(rows, deltas, meta)


# ---------------------------------------------------------------- robustness


@dataclass
class SeedRun:
    seed: int
    epochs: list
    eps_percent: list
    eps_l2_percent: list
    status: str = "ok"
    message: str = ""
    k_min: float = math.nan
    k_max: float = math.nan
    nonfinite_losses: int = 0
    seconds: float = 0.0


@dataclass
class RobustnessRecord:
    runs: list
    checkpoints: list

    def matrix(self, l2=False):
        """(n_seeds, n_checkpoints) error table; NaN where a run has no value."""
        out = np.full((len(self.runs), len(self.checkpoints)), np.nan)
        for i, run in enumerate(self.runs):
            vals = run.eps_l2_percent if l2 else run.eps_percent
            for ep, v in zip(run.epochs, vals):
                out[i, self.checkpoints.index(ep)] = v
        return out

    def envelope(self, l2=False):
        """(min, mean, max) per checkpoint over runs that completed."""
        ok = [i for i, r in enumerate(self.runs) if r.status == "ok"]
        m = self.matrix(l2)[ok]
        if m.size == 0:
            nan = np.full(len(self.checkpoints), np.nan)
            return nan, nan, nan
        return m.min(axis=0), m.mean(axis=0), m.max(axis=0)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("seed", "epoch", "eps_percent", "eps_l2_percent", "status"))
            for run in self.runs:
                for ep, e, e2 in zip(run.epochs, run.eps_percent, run.eps_l2_percent):
                    w.writerow([run.seed, ep, _num(e), _num(e2), run.status])
                if run.status != "ok":
                    w.writerow([run.seed, "", "", "", f"{run.status}: {run.message}"])

    def write_envelope_csv(self, path):
        lo, mean, hi = self.envelope()
        lo2, mean2, hi2 = self.envelope(l2=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "eps_min", "eps_mean", "eps_max",
                        "eps_l2_min", "eps_l2_mean", "eps_l2_max"))
            for i, ep in enumerate(self.checkpoints):
                w.writerow([ep] + [_num(a[i]) for a in (lo, mean, hi, lo2, mean2, hi2)])


def _robust_job(job):
    seed, train_set, eval_set, config, every, n_samples, eval_seed = job
    cfg = config.replace(seed=seed)
    run = SeedRun(seed, [], [], [])
    k_seen = [math.inf, -math.inf]

    def on_step(step):
        k_seen[0] = min(k_seen[0], step.k)
        k_seen[1] = max(k_seen[1], step.k)
        if not (math.isfinite(step.loss_d) and math.isfinite(step.loss_g)):
            run.nonfinite_losses += 1

    def on_epoch(epoch, model):
        done = epoch + 1
        if done % every == 0 or done == cfg.epochs:
            stats = predict_stats(model, eval_set.params, n_samples,
                                  np.random.default_rng(eval_seed))
            run.epochs.append(done)
            run.eps_percent.append(100.0 * mean_l2_relative_error(eval_set.solutions, stats.mean))
            run.eps_l2_percent.append(
                100.0 * mean_l2_relative_error(eval_set.solutions, stats.mean, squared=False))

    t0 = time.perf_counter()
    try:
        model = build_model(train_set.n_u, train_set.n_c, cfg)
        train(model, train_set, callback=on_epoch, step_callback=on_step)
    except TrainingDivergedError as exc:
        run.status, run.message = "diverged", f"epoch {exc.epoch}: {exc}"
    except Exception as exc:
        run.status = "failed"
        run.message = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    run.k_min, run.k_max = k_seen
    run.seconds = time.perf_counter() - t0
    return run


def robustness_study(dataset, split, config=None, n_seeds=5, checkpoint_every=100,
                     seeds=None, n_samples=DEFAULT_SAMPLES, eval_seed=0, jobs=1):
    """Train ``n_seeds`` models differing only in seed; score test rows at checkpoints.

    Seeds default to ``config.seed + i``. A diverged run is kept in the
    record with its status and the checkpoints it reached.
    """
    config = config or TrainConfig(epochs=DESK_EPOCHS)
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(n_seeds)]
    if len(seeds) < 2:
        raise ValueError("a robustness study needs at least 2 seeds")
    if checkpoint_every < 1:
        raise ValueError("checkpoint_every must be >= 1")
    train_set, test_set = dataset.subset(split.train), dataset.subset(split.test)
    work = [(s, train_set, test_set, config, checkpoint_every, n_samples, eval_seed)
            for s in seeds]
    runs = _map_jobs(_robust_job, work, jobs)
    checkpoints = sorted({ep for r in runs for ep in r.epochs})
    return RobustnessRecord(runs, checkpoints)
