"""Classical reduced order models used as baselines.

A reducer (POD or a plain autoencoder) maps snapshots to latent
coordinates; an interpolator (Gaussian RBF or a small MLP) maps parameters
to those coordinates. Prediction decodes the interpolated coordinates.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .checkpoint import read_container, write_container
from .linalg import as_matrix, solve_spd, svd_thin
from .model import TrainingDivergedError
from .nn import AdamState, Mlp, backward, forward

REDUCERS = ("pod", "ae")
INTERPOLATORS = ("rbf", "nn")
METHODS = tuple(f"{r}-{i}" for r in REDUCERS for i in INTERPOLATORS)
RBF_KERNEL = "gaussian exp(-(r/length_scale)^2), no polynomial tail"


# ---------------------------------------------------------------- POD


@dataclass(frozen=True)
class PodBasis:
    modes: np.ndarray  # (N_u, rank), orthonormal columns
    singular_values: np.ndarray  # retained, non-increasing
    mean: np.ndarray  # (N_u,), zeros unless centered
    centered: bool = False

    @property
    def rank(self):
        return self.modes.shape[1]


def pod_fit(snapshots, rank, center=False):
    """Leading right singular directions of the snapshot rows.

    Returns ``(basis, coefficients)`` with coefficients of shape (N, rank).
    """
    u = as_matrix(snapshots, "snapshots")
    if not 1 <= rank <= min(u.shape):
        raise ValueError(f"rank must be in [1, {min(u.shape)}], got {rank}")
    mean = u.mean(axis=0) if center else np.zeros(u.shape[1])
    svd = svd_thin(u - mean)
    modes = np.ascontiguousarray(svd.v_transposed[:rank].T)
    basis = PodBasis(modes, svd.singular_values[:rank].copy(), mean, center)
    return basis, pod_project(basis, u)


def pod_project(basis, u):
    return (np.asarray(u, dtype=np.float64) - basis.mean) @ basis.modes


def pod_reconstruct(basis, latent):
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[-1] != basis.rank:
        raise ValueError(f"latent has {latent.shape[-1]} entries, basis rank is {basis.rank}")
    return latent @ basis.modes.T + basis.mean


# ---------------------------------------------------------------- RBF


@dataclass(frozen=True)
class RbfInterpolator:
    centers: np.ndarray  # (N, N_c)
    weights: np.ndarray  # (N, latent)
    length_scale: float = 1.0

    def __call__(self, c):
        return rbf_eval(self, c)


def rbf_fit(centers, targets, length_scale=1.0):
    """Interpolate ``targets`` at ``centers`` with a Gaussian kernel.

    The Gram system is solved by Cholesky with jitter escalation, so nearly
    duplicate centers degrade to a slightly regularized fit rather than
    failing.
    """
    x = as_matrix(centers, "centers")
    y = np.asarray(targets, dtype=np.float64)
    y2 = y.reshape(-1, 1) if y.ndim == 1 else y
    if y2.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} centers but {y2.shape[0]} target rows")
    if length_scale <= 0:
        raise ValueError("length_scale must be > 0")
    gram = kernels.gaussian_gram(x, x, float(length_scale))
    weights = solve_spd(gram, y2)
    return RbfInterpolator(x, weights.reshape(y.shape), float(length_scale))


def rbf_eval(interp, c):
    c_arr = np.asarray(c, dtype=np.float64)
    single = c_arr.ndim == 1
    c2 = as_matrix(c_arr, "c")
    if c2.shape[1] != interp.centers.shape[1]:
        raise ValueError(f"c has {c2.shape[1]} columns, centers have {interp.centers.shape[1]}")
    out = kernels.gaussian_gram(c2, interp.centers, interp.length_scale) @ interp.weights
    return out[0] if single else out


# ---------------------------------------------------------------- MLP fitting


def _mse_fit(nets, inputs, targets, epochs, lr, rng, batch_size=None):
    """Adam on mean squared error through a chain of nets; returns per-epoch losses."""
    states = [AdamState.zeros(net.params.size, lr) for net in nets]
    n = inputs.shape[0]
    losses = np.empty(epochs)
    for epoch in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]
        total = 0.0
        for idx in batches:
            x, t = inputs[idx], targets[idx]
            caches = []
            for net in nets:
                x, cache = forward(net, x)
                caches.append(cache)
            diff = x - t
            with np.errstate(over="ignore", invalid="ignore"):
                loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite MSE loss at epoch {epoch}", epoch=epoch)
            g = diff * (2.0 / diff.size)
            for i in range(len(nets) - 1, -1, -1):
                _, g = backward(nets[i], caches[i], g, input_grad=i > 0, adam=states[i])
            total += loss * t.shape[0]
        losses[epoch] = total / n
    return losses


@dataclass
class NnRegressor:
    net: Mlp
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, c):
        c_arr = np.asarray(c, dtype=np.float64)
        out = self.net(np.atleast_2d(c_arr))
        return out[0] if c_arr.ndim == 1 else out


NN_HIDDEN = (24, 64)


def nn_regressor_fit(params, targets, epochs=20000, lr=1e-3, seed=0):
    """Full-batch Adam fit of ``N_c -> 24 -> 64 -> latent`` (ReLU, ReLU, identity)."""
    c = as_matrix(params, "params")
    y = as_matrix(targets, "targets")
    if c.shape[0] != y.shape[0] or c.shape[0] == 0:
        raise ValueError("params and targets need the same, non-zero row count")
    rng = np.random.default_rng(seed)
    net = Mlp([c.shape[1], *NN_HIDDEN, y.shape[1]], ["relu", "relu", "identity"], rng)
    losses = _mse_fit([net], c, y, epochs, lr, rng)
    return NnRegressor(net, losses)


# ---------------------------------------------------------------- autoencoder


@dataclass
class AeModel:
    encoder: Mlp
    decoder: Mlp
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def encode(self, u):
        return self.encoder(np.atleast_2d(np.asarray(u, dtype=np.float64)))

    def decode(self, latent):
        return self.decoder(np.atleast_2d(np.asarray(latent, dtype=np.float64)))


def build_autoencoder(n_u, latent_dim, rng):
    w3, w6 = max(1, n_u // 3), max(1, n_u // 6)
    encoder = Mlp([n_u, w3, w6, latent_dim], ["relu"] * 3, rng)
    decoder = Mlp([latent_dim, w6, w3, n_u], ["relu", "relu", "identity"], rng)
    return AeModel(encoder, decoder)


def ae_fit(snapshots, latent_dim, epochs=1000, lr=1e-3, seed=0, batch_size=8):
    """Train encoder and decoder jointly on reconstruction MSE.

    ``batch_size=None`` gives full-batch steps.
    """
    u = as_matrix(snapshots, "snapshots")
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    rng = np.random.default_rng(seed)
    ae = build_autoencoder(u.shape[1], latent_dim, rng)
    ae.losses = _mse_fit([ae.encoder, ae.decoder], u, u, epochs, lr, rng, batch_size)
    return ae


# ---------------------------------------------------------------- pipelines


@dataclass
class RomPipeline:
    reducer: str
    interpolator: str
    rank: int
    pod: Optional[PodBasis] = None
    ae: Optional[AeModel] = None
    rbf: Optional[RbfInterpolator] = None
    nn: Optional[NnRegressor] = None

    def __post_init__(self):
        if self.reducer not in REDUCERS or self.interpolator not in INTERPOLATORS:
            raise ValueError(f"unknown method {self.reducer}-{self.interpolator}")

    @property
    def method(self):
        return f"{self.reducer}-{self.interpolator}"

    def encode(self, u):
        if self.reducer == "pod":
            return pod_project(self.pod, u)
        return self.ae.encode(u)

    def decode(self, latent):
        if self.reducer == "pod":
            return pod_reconstruct(self.pod, latent)
        return self.ae.decode(latent)

    def interpolate(self, c):
        return rbf_eval(self.rbf, c) if self.interpolator == "rbf" else self.nn(c)

    def is_fitted(self):
        reducer = self.pod if self.reducer == "pod" else self.ae
        interp = self.rbf if self.interpolator == "rbf" else self.nn
        return reducer is not None and interp is not None


def fit_pipeline(method, params, snapshots, rank, seed=0, nn_epochs=20000, ae_epochs=1000,
                 lr=1e-3, length_scale=1.0, center=False, reducer=None):
    """Fit one ``reducer-interpolator`` pipeline.

    A fitted ``reducer`` (PodBasis or AeModel) may be passed in to share it
    between the RBF and NN variants.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    red, interp = method.split("-")
    pipe = RomPipeline(red, interp, rank)
    if red == "pod":
        pipe.pod = reducer if reducer is not None else pod_fit(snapshots, rank, center)[0]
    else:
        pipe.ae = reducer if reducer is not None else ae_fit(snapshots, rank, ae_epochs, lr, seed)
    latent = pipe.encode(snapshots)
    if interp == "rbf":
        pipe.rbf = rbf_fit(params, latent, length_scale)
    else:
        pipe.nn = nn_regressor_fit(params, latent, nn_epochs, lr, seed)
    return pipe


def rom_predict(pipeline, c):
    if not pipeline.is_fitted():
        raise ValueError(f"{pipeline.method} pipeline is not fitted")
    c_arr = np.asarray(c, dtype=np.float64)
    out = pipeline.decode(np.atleast_2d(pipeline.interpolate(np.atleast_2d(c_arr))))
    return out[0] if c_arr.ndim == 1 else out


# ---------------------------------------------------------------- export


def _net_tensors(prefix, net):
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def pipeline_tensors(pipeline):
    t = {"pipeline.rank": np.array(float(pipeline.rank))}
    if pipeline.pod is not None:
        t["pod.modes"] = pipeline.pod.modes
        t["pod.singular_values"] = pipeline.pod.singular_values
        t["pod.mean"] = pipeline.pod.mean
        t["pod.centered"] = np.array(float(pipeline.pod.centered))
    if pipeline.ae is not None:
        t.update(_net_tensors("ae.encoder", pipeline.ae.encoder))
        t.update(_net_tensors("ae.decoder", pipeline.ae.decoder))
    if pipeline.rbf is not None:
        t["rbf.centers"] = pipeline.rbf.centers
        t["rbf.weights"] = pipeline.rbf.weights
        t["rbf.length_scale"] = np.array(pipeline.rbf.length_scale)
    if pipeline.nn is not None:
        t.update(_net_tensors("nn", pipeline.nn.net))
    return t


def save_pipeline(pipeline, path):
    """Write a fitted pipeline to the GAROMCK1 tensor container."""
    t = pipeline_tensors(pipeline)
    # method tag as a tensor of code points keeps the container format unchanged
    t["pipeline.method"] = np.array([float(ord(ch)) for ch in pipeline.method])
    write_container(path, t)


def _load_net(tensors, prefix, acts):
    n_layers = sum(1 for k in tensors if k.startswith(prefix + ".") and k.endswith(".weight"))
    sizes = [tensors[f"{prefix}.0.weight"].shape[0]]
    sizes += [tensors[f"{prefix}.{i}.weight"].shape[1] for i in range(n_layers)]
    net = Mlp(sizes, acts)
    for i, layer in enumerate(net.layers):
        layer.weight[...] = tensors[f"{prefix}.{i}.weight"]
        layer.bias[...] = tensors[f"{prefix}.{i}.bias"]
    return net


def load_pipeline(path):
    _, _, t = read_container(path)
    method = "".join(chr(int(x)) for x in t["pipeline.method"])
    red, interp = method.split("-")
    pipe = RomPipeline(red, interp, int(t["pipeline.rank"]))
    if red == "pod":
        pipe.pod = PodBasis(t["pod.modes"], t["pod.singular_values"], t["pod.mean"],
                            bool(t["pod.centered"]))
    else:
        pipe.ae = AeModel(_load_net(t, "ae.encoder", ["relu"] * 3),
                          _load_net(t, "ae.decoder", ["relu", "relu", "identity"]))
    if interp == "rbf":
        pipe.rbf = RbfInterpolator(t["rbf.centers"], t["rbf.weights"],
                                   float(t["rbf.length_scale"]))
    else:
        pipe.nn = NnRegressor(_load_net(t, "nn", ["relu", "relu", "identity"]))
    return pipe
