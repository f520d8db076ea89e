"""Acceptance criteria, each run at its stated tolerance.

The two desk-scale trainings behind criteria 4, 7 and 8 take tens of
minutes. Set GAROM_ACCEPTANCE_CACHE to a directory to keep the trained
checkpoints (and their timings) between runs; without it they are trained
fresh in every session.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from garom.baselines import fit_pipeline, pod_fit, pod_reconstruct, rbf_fit, rom_predict
from garom.bench import (delta, mean_l2_relative_error, predictive_std_percent,
                         robustness_study)
from garom.checkpoint import load_checkpoint, save_checkpoint
from garom.cli import main
from garom.data import gen_gaussian_dataset, split
from garom.inference import exceedance_frequency, markov_bound_terms, predict_stats
from garom.model import TrainConfig, build_model, discriminate, generate, train

pytestmark = pytest.mark.acceptance

CACHE_ENV = "GAROM_ACCEPTANCE_CACHE"
DATA_SEED = 1
SPLIT_SEED = 0
DESK_CONFIG = TrainConfig(epochs=5000, latent_dim=64, batch_size=8, learning_rate=1e-3,
                          lambda_k=1e-3, gamma=0.3, seed=0)
RUNTIME_LIMIT = 30 * 60
ENSEMBLE = 20
ROBUST_SEEDS = 5
ROBUST_EPOCHS = 200


def _cpu_count():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# ---------------------------------------------------------------- shared fixtures


@pytest.fixture(scope="session")
def gaussian():
    ds = gen_gaussian_dataset(400, 900, seed=DATA_SEED)
    sp = split(ds, 0.6, seed=SPLIT_SEED)
    return ds, sp, ds.subset(sp.train), ds.subset(sp.test)


def _train_desk(args):
    eta, path = args
    ds = gen_gaussian_dataset(400, 900, seed=DATA_SEED)
    train_set = ds.subset(split(ds, 0.6, seed=SPLIT_SEED).train)
    t0 = time.perf_counter()
    model = build_model(train_set.n_u, train_set.n_c, DESK_CONFIG.replace(eta=eta))
    train(model, train_set)
    seconds = time.perf_counter() - t0
    save_checkpoint(model, path)
    return seconds


@pytest.fixture(scope="session")
def desk_models(tmp_path_factory):
    """GAROM (eta 0) and r-GAROM (eta 1) at desk scale, plus wall-clock seconds."""
    cache = os.environ.get(CACHE_ENV)
    root = Path(cache) if cache else tmp_path_factory.mktemp("desk")
    root.mkdir(parents=True, exist_ok=True)
    paths = {eta: root / f"eta{eta}.bin" for eta in (0, 1)}
    timing = root / "timing.json"
    if cache and all(p.exists() for p in paths.values()) and timing.exists():
        info = json.loads(timing.read_text())
    else:
        jobs = [(eta, paths[eta]) for eta in (0, 1)]
        workers = min(2, _cpu_count())
        t0 = time.perf_counter()
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                per_model = list(pool.map(_train_desk, jobs))
        else:
            per_model = [_train_desk(j) for j in jobs]
        info = {"wall_seconds": time.perf_counter() - t0, "per_model_seconds": per_model,
                "workers": workers}
        timing.write_text(json.dumps(info))
    models = {"garom": load_checkpoint(paths[0]), "r-garom": load_checkpoint(paths[1])}
    return models, info


@pytest.fixture(scope="session")
def desk_scores(desk_models, gaussian):
    models, _ = desk_models
    _, _, train_set, test_set = gaussian
    out = {}
    for name, model in models.items():
        for rowset, s in (("train", train_set), ("test", test_set)):
            st = predict_stats(model, s.params, ENSEMBLE, np.random.default_rng(0))
            out[(name, rowset)] = {
                "eps_l2": 100 * mean_l2_relative_error(s.solutions, st.mean, squared=False),
                "eps_sq": 100 * mean_l2_relative_error(s.solutions, st.mean),
                "std": predictive_std_percent(st.std, s.solutions),
                "delta": delta(s.solutions, st.mean),
            }
    return out


# ---------------------------------------------------------------- 1


def _offset_biases(model, rng):
    # zero biases leave pre-activations exactly on ReLU kinks for some rows,
    # where one-sided derivatives differ; random biases move them off
    for _, net in model.named_nets():
        for layer in net.layers:
            layer.bias[...] = rng.normal(scale=0.1, size=layer.bias.shape)


def _central_diff(loss, params, h):
    grad = np.empty_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        up = loss()
        params[i] = old - h
        down = loss()
        params[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


@pytest.mark.criterion("1", "analytic gradients match central differences")
def test_c1_gradient_correctness(record_property):
    from garom.model import discriminator_grads, generator_grads

    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for trial in range(10):
        eta = trial % 2
        model = build_model(96, 2, TrainConfig(eta=eta, noise_dim=12, latent_dim=16, seed=trial))
        assert model.generator.main.sizes == (72, 16, 32, 96)
        assert model.discriminator.encoder.sizes == (96, 32, 16, 16)
        _offset_biases(model, rng)
        u = rng.random((1, 96))
        c = rng.uniform(-1, 1, (1, 2))
        z = rng.uniform(-1, 1, (1, 12))
        k = rng.uniform(0, 1)

        # losses written directly from the forward maps, independent of the
        # backward code under test; the generated row is fixed while the
        # discriminator is perturbed
        fixed_fake = generate(model, z, c)
        both_in = np.vstack([u, fixed_fake])

        def loss_d():
            err = np.abs(discriminate(model, both_in, np.vstack([c, c])) - both_in)
            return np.mean(err[0]) - k * np.mean(err[1])

        def loss_g():
            fake = generate(model, z, c)
            return (np.mean(np.abs(discriminate(model, fake, c) - fake))
                    + eta * np.mean(np.abs(fake - u)))

        _, _, _, d_grads = discriminator_grads(model, u, c, z, k=k)
        _, _, g_grads = generator_grads(model, u, c, z)
        checks = [(net, d_grads[n], loss_d) for n, net in model.discriminator.nets.items()]
        checks += [(net, g_grads[n], loss_g) for n, net in model.generator.nets.items()]
        for net, analytic, loss in checks:
            fd = _central_diff(loss, net.params, 1e-6)
            rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
            worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst relative error {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-5
    assert elapsed < 60


# ---------------------------------------------------------------- 2


@pytest.mark.criterion("2", "POD residual equals discarded singular energy")
def test_c2_pod_oracle(record_property):
    worst = 0.0
    for seed in range(5):
        u = np.random.default_rng(seed).normal(size=(50, 200))
        s = np.linalg.svd(u, compute_uv=False)
        for r in (1, 5, 20):
            basis, coeff = pod_fit(u, r)
            resid = np.linalg.norm(u - pod_reconstruct(basis, coeff)) ** 2
            expect = np.sum(s[r:] ** 2)
            worst = max(worst, abs(resid - expect) / expect)
    record_property("detail", f"worst relative deviation {worst:.2e}")
    assert worst <= 1e-9


# ---------------------------------------------------------------- 3


@pytest.mark.criterion("3", "RBF reproduces targets at its centers")
def test_c3_rbf_interpolation(record_property):
    # a length scale matched to the spacing of 50 points in the unit box;
    # at 1.0 the Gram matrix is in its flat limit (see the decisions ledger)
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-1, 1, (50, 2))
        targets = rng.normal(size=(50, 4))
        interp = rbf_fit(centers, targets, length_scale=0.3)
        worst = max(worst, float(np.max(np.abs(interp(centers) - targets))))
    record_property("detail", f"max error at centers {worst:.2e}")
    assert worst <= 1e-8


# ---------------------------------------------------------------- 4


def _pair(scores, key, rowset="test"):
    return scores[("garom", rowset)][key], scores[("r-garom", rowset)][key]


@pytest.mark.criterion("4a", "r-GAROM test error below 10% at desk scale")
def test_c4a_rgarom_error(desk_scores, record_property):
    _, r = _pair(desk_scores, "eps_l2")
    _, r_sq = _pair(desk_scores, "eps_sq")
    record_property("detail", f"r-GAROM test eps {r:.3f}% (squared-norm form {r_sq:.4f}%)")
    assert r < 10.0


@pytest.mark.criterion("4b", "r-GAROM test error below GAROM's")
def test_c4b_error_ordering(desk_scores, record_property):
    g, r = _pair(desk_scores, "eps_l2")
    g_sq, r_sq = _pair(desk_scores, "eps_sq")
    record_property("detail", f"GAROM {g:.3f}% vs r-GAROM {r:.3f}% "
                              f"(squared {g_sq:.4f}% vs {r_sq:.4f}%)")
    assert r < g


@pytest.mark.criterion("4c", "r-GAROM predictive std below GAROM's")
def test_c4c_std_ordering(desk_scores, record_property):
    g, r = _pair(desk_scores, "std")
    g_tr, r_tr = _pair(desk_scores, "std", "train")
    record_property("detail", f"test std GAROM {g:.4f}% vs r-GAROM {r:.4f}% "
                              f"(train {g_tr:.4f}% vs {r_tr:.4f}%)")
    assert r < g


@pytest.mark.criterion("4t", "both desk-scale trainings within 30 minutes")
def test_c4_runtime(desk_models, record_property):
    _, info = desk_models
    wall = info["wall_seconds"] if "wall_seconds" in info else sum(info["per_model_seconds"])
    record_property("detail", f"{wall / 60:.1f} min wall on {info.get('workers', 1)} worker(s), "
                              f"per model {[round(s / 60, 1) for s in info['per_model_seconds']]}")
    assert wall <= RUNTIME_LIMIT


def test_discriminator_separates_data_from_noise(desk_models, gaussian):
    # after training the autoencoder reconstructs snapshots far better than noise
    models, _ = desk_models
    _, _, _, test_set = gaussian
    rng = np.random.default_rng(5)
    noise = rng.uniform(0, 1, test_set.solutions.shape)
    m = models["r-garom"]
    on_data = np.mean(np.abs(discriminate(m, test_set.solutions, test_set.params)
                             - test_set.solutions))
    on_noise = np.mean(np.abs(discriminate(m, noise, test_set.params) - noise))
    assert on_data < 0.5 * on_noise


# ---------------------------------------------------------------- 5


@pytest.mark.criterion("5", "POD-RBF bands at ranks 16 and 4")
def test_c5_pod_rbf_bands(gaussian, record_property):
    _, _, train_set, test_set = gaussian
    out = {}
    for rank in (4, 16):
        pipe = fit_pipeline("pod-rbf", train_set.params, train_set.solutions, rank)
        pred = rom_predict(pipe, test_set.params)
        out[rank] = (100 * mean_l2_relative_error(test_set.solutions, pred, squared=False),
                     100 * mean_l2_relative_error(test_set.solutions, pred))
    record_property("detail", f"rank 16 {out[16][0]:.3f}%, rank 4 {out[4][0]:.2f}% "
                              f"(squared {out[16][1]:.4f}%, {out[4][1]:.2f}%)")
    assert out[16][0] < 2.0
    assert out[4][0] > 10.0


# ---------------------------------------------------------------- 6


@pytest.mark.criterion("6", "equilibrium control over a 5-seed robustness run")
def test_c6_robustness(gaussian, record_property):
    ds, sp, _, _ = gaussian
    cfg = DESK_CONFIG.replace(eta=1, epochs=ROBUST_EPOCHS)
    rec = robustness_study(ds, sp, cfg, n_seeds=ROBUST_SEEDS, checkpoint_every=50,
                           n_samples=ENSEMBLE, jobs=min(ROBUST_SEEDS, _cpu_count()))
    statuses = [r.status for r in rec.runs]
    k_lo = min(r.k_min for r in rec.runs)
    k_hi = max(r.k_max for r in rec.runs)
    nonfinite = sum(r.nonfinite_losses for r in rec.runs)
    final = rec.matrix(l2=True)[:, -1]
    final_sq = rec.matrix()[:, -1]
    record_property("detail", f"{ROBUST_EPOCHS} epochs, k in [{k_lo:.4f}, {k_hi:.4f}], "
                              f"non-finite losses {nonfinite}, final eps max {final.max():.3f}% "
                              f"mean {final.mean():.3f}% (squared max/mean "
                              f"{final_sq.max() / final_sq.mean():.2f})")
    assert statuses == ["ok"] * ROBUST_SEEDS
    assert 0.0 <= k_lo and k_hi <= 1.0
    assert nonfinite == 0
    assert np.all(np.isfinite(final))
    assert final.max() <= 10 * final.mean()


# ---------------------------------------------------------------- 7


@pytest.mark.criterion("7", "Markov bound holds within 2 Monte-Carlo SE")
def test_c7_markov_bound(desk_models, gaussian, record_property):
    models, _ = desk_models
    model = models["r-garom"]
    _, _, _, test_set = gaussian
    est = markov_bound_terms(model, test_set, ENSEMBLE, np.random.default_rng(11))
    # the prediction being scored uses an independent ensemble
    u_hat = predict_stats(model, test_set.params, ENSEMBLE, np.random.default_rng(12)).mean
    a = np.logspace(-8, 0, 25)
    freq = exceedance_frequency(test_set.solutions, u_hat, a)
    bound = est.bound(a)
    n = test_set.solutions.size
    se = np.sqrt(est.standard_error(a) ** 2 + freq * (1 - freq) / n)
    # report the threshold where the bound is tightest among the informative ones
    live = np.flatnonzero((bound > 0) & (bound < 1))
    worst = live[np.argmax(freq[live] / bound[live])] if live.size else 0
    record_property("detail", f"E[...] = {est.expectation:.3e}; {live.size} thresholds with "
                              f"bound < 1, tightest at a={a[worst]:.1e}: freq "
                              f"{freq[worst]:.3e} vs bound {bound[worst]:.3e}")
    assert np.all(freq <= bound + 2 * se)


# ---------------------------------------------------------------- 8


@pytest.mark.criterion("8", "test deltas centred near zero and overlapping train")
def test_c8_generalization(desk_scores, record_property):
    d_test = desk_scores[("r-garom", "test")]["delta"]
    d_train = desk_scores[("r-garom", "train")]["delta"]
    q_test = np.percentile(d_test, [25, 75])
    q_train = np.percentile(d_train, [25, 75])
    overlap = q_test[0] <= q_train[1] and q_train[0] <= q_test[1]
    record_property("detail", f"mean test delta {d_test.mean():+.2e}, IQR test "
                              f"[{q_test[0]:+.1e}, {q_test[1]:+.1e}] train "
                              f"[{q_train[0]:+.1e}, {q_train[1]:+.1e}]")
    assert abs(d_test.mean()) < 0.05
    assert overlap


# ---------------------------------------------------------------- 9


def _run_all_commands(root):
    data = root / "g.csv"
    tiny = ["--epochs", "3", "--latent", "4", "--noise-dim", "3"]
    cmds = [
        ["gen-data", "--n", "30", "--points", "20", "--seed", "4", "--out", str(data)],
        ["train", "--data", str(data), "--split", "0.6", "--out", str(root / "run"), *tiny],
        ["infer", "--ckpt", str(root / "run" / "checkpoint.bin"), "--params", str(data),
         "--k", "4", "--z-score", "1.96", "--markov-a", "0.01", "--out", str(root / "s.csv")],
        ["compare", "--data", str(data), "--dims", "2,3", "--k", "3", "--nn-epochs", "4",
         "--ae-epochs", "2", "--out", str(root / "cmp"), *tiny],
        ["robustness", "--data", str(data), "--seeds", "2", "--checkpoint-every", "1",
         "--k", "3", "--out", str(root / "rob"), *tiny],
    ]
    for cmd in cmds:
        assert main(cmd) == 0, cmd
    # wall-clock timings are kept out of the numeric reports on purpose
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.suffix in (".csv", ".bin") and p.name != "timings.csv"}


@pytest.mark.criterion("9", "reruns give byte-identical numeric outputs")
def test_c9_determinism(tmp_path, record_property):
    first = _run_all_commands(tmp_path / "a")
    second = _run_all_commands(tmp_path / "b")
    assert first.keys() == second.keys()
    differing = [str(k) for k in first if first[k] != second[k]]
    record_property("detail", f"{len(first)} files compared, {len(differing)} differ")
    assert not differing
