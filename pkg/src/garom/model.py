"""Conditional boundary-equilibrium GAN used as a reduced order model.

The generator maps ``[z | f(c)]`` to a snapshot, where ``f`` is a small
conditioning net. The discriminator is an autoencoder whose decoder sees
``[encoder(u) | g(c)]``. Training alternates one discriminator and one
generator Adam step per mini-batch and moves the equilibrium control ``k``
after both.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import kernels
from .nn import Activation, AdamState, Mlp, backward, forward

log = logging.getLogger(__name__)

SILU, RELU, IDENTITY = Activation.SILU, Activation.RELU, Activation.IDENTITY

# reconstruction loss reduction, recorded in run metadata
RECON_REDUCTION = "mean absolute error over components and batch rows"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class TrainConfig:
    eta: int = 1
    lambda_k: float = 1e-3
    gamma: float = 0.3
    learning_rate: float = 1e-3
    epochs: int = 20000
    batch_size: int = 8
    noise_dim: int = 12
    latent_dim: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.eta not in (0, 1):
            raise ValueError(f"eta must be 0 or 1, got {self.eta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in ("batch_size", "noise_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        self.eta = int(self.eta)

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return TrainConfig(**values)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def update_control(k, recon_real, recon_fake, lambda_k, gamma):
    """Equilibrium control step ``k + lambda (gamma L(u|c) - L(G(z|c)))`` clamped to [0, 1]."""
    return min(1.0, max(0.0, k + lambda_k * (gamma * recon_real - recon_fake)))


def convergence_measure(recon_real, recon_fake, gamma):
    return recon_real + abs(gamma * recon_real - recon_fake)


def recon_loss(u, u_rec):
    """Mean absolute reconstruction error over all components and rows."""
    u = np.asarray(u, dtype=np.float64)
    u_rec = np.asarray(u_rec, dtype=np.float64)
    if u.shape != u_rec.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_rec.shape}")
    return float(np.mean(np.abs(u - u_rec)))


def _width(n, divisor, what, build_log):
    w = n // divisor
    if w == 0:
        msg = f"{what} = {n}//{divisor} is 0; clamped to 1"
        log.warning(msg)
        build_log.append(msg)
    return max(1, w)


class Generator:
    """Conditioning net ``N_c -> 2N_z -> 5N_z`` plus main net ``6N_z -> N_u/6 -> N_u/3 -> N_u``."""

    def __init__(self, n_u, n_c, noise_dim, rng, build_log):
        nz = noise_dim
        self.noise_dim = nz
        self.conditioning = Mlp([n_c, 2 * nz, 5 * nz], [SILU, IDENTITY], rng)
        self.main = Mlp(
            [6 * nz, _width(n_u, 6, "N_u/6", build_log), _width(n_u, 3, "N_u/3", build_log), n_u],
            [SILU, SILU, IDENTITY],
            rng,
        )

    @property
    def nets(self):
        return {"conditioning": self.conditioning, "main": self.main}

    def forward(self, z, c):
        cond, cache_c = forward(self.conditioning, c)
        out, cache_m = forward(self.main, np.hstack([z, cond]))
        return out, (cache_c, cache_m)

    def backward(self, caches, grad_out, adam=None):
        cache_c, cache_m = caches
        adam = adam or {}
        g_main, g_in = backward(self.main, cache_m, grad_out, adam=adam.get("main"))
        g_cond, _ = backward(self.conditioning, cache_c, g_in[:, self.noise_dim:],
                             input_grad=False, adam=adam.get("conditioning"))
        return {"conditioning": g_cond, "main": g_main}


class Discriminator:
    """Autoencoder critic; the decoder input is ``[encoder(u) | g(c)]`` of width ``2N_l``."""

    def __init__(self, n_u, n_c, latent_dim, rng, build_log):
        nl = latent_dim
        w3 = _width(n_u, 3, "N_u/3", build_log)
        w6 = _width(n_u, 6, "N_u/6", build_log)
        self.latent_dim = nl
        self.conditioning = Mlp([n_c, _width(nl, 2, "N_l/2", build_log), nl], [RELU, IDENTITY], rng)
        self.encoder = Mlp([n_u, w3, w6, nl], [RELU, RELU, RELU], rng)
        self.decoder = Mlp([2 * nl, w6, w3, n_u], [RELU, RELU, IDENTITY], rng)

    @property
    def nets(self):
        return {"conditioning": self.conditioning, "encoder": self.encoder, "decoder": self.decoder}

    def forward(self, u, c):
        enc, cache_e = forward(self.encoder, u)
        cond, cache_c = forward(self.conditioning, c)
        out, cache_d = forward(self.decoder, np.hstack([enc, cond]))
        return out, (cache_e, cache_c, cache_d)

    def backward(self, caches, grad_out, weight_grads=True, input_grad=False, adam=None):
        cache_e, cache_c, cache_d = caches
        nl = self.latent_dim
        adam = adam or {}
        g_dec, g_in = backward(self.decoder, cache_d, grad_out, weight_grads=weight_grads,
                               adam=adam.get("decoder"))
        g_enc, g_u = backward(self.encoder, cache_e, g_in[:, :nl], weight_grads=weight_grads,
                              input_grad=input_grad, adam=adam.get("encoder"))
        grads = None
        if weight_grads:
            g_cond, _ = backward(self.conditioning, cache_c, g_in[:, nl:], input_grad=False,
                                 adam=adam.get("conditioning"))
            grads = {"conditioning": g_cond, "encoder": g_enc, "decoder": g_dec}
        return grads, g_u


class EpochRecord(NamedTuple):
    epoch: int
    loss_d: float
    loss_g: float
    k: float
    convergence: float


class StepResult(NamedTuple):
    loss_d: float
    loss_g: float
    k: float
    recon_real: float
    recon_fake: float


@dataclass
class ControlState:
    k: float = 0.0


@dataclass
class GaromModel:
    generator: Generator
    discriminator: Discriminator
    config: TrainConfig
    n_u: int
    n_c: int
    control: ControlState = field(default_factory=ControlState)
    history: list = field(default_factory=list)
    gen_adam: dict = field(default_factory=dict)
    disc_adam: dict = field(default_factory=dict)
    build_log: list = field(default_factory=list)

    @property
    def k(self):
        return self.control.k

    def named_nets(self):
        for name, net in self.generator.nets.items():
            yield f"generator.{name}", net
        for name, net in self.discriminator.nets.items():
            yield f"discriminator.{name}", net

    def set_learning_rate(self, lr):
        for state in (*self.gen_adam.values(), *self.disc_adam.values()):
            state.learning_rate = float(lr)


def _adam_states(nets, config):
    return {
        name: AdamState.zeros(net.params.size, config.learning_rate, config.beta1,
                              config.beta2, config.adam_epsilon)
        for name, net in nets.items()
    }


def _seed_streams(seed):
    init, train = np.random.SeedSequence(seed).spawn(2)
    return init, train


def build_model(n_u, n_c, config=None):
    """Build generator and discriminator with Xavier weights drawn from ``config.seed``."""
    config = config or TrainConfig()
    if n_u < 6:
        raise ValueError(f"N_u must be >= 6, got {n_u}")
    if n_c < 1:
        raise ValueError(f"N_c must be >= 1, got {n_c}")
    init_seq, _ = _seed_streams(config.seed)
    rng = np.random.default_rng(init_seq)
    build_log = []
    gen = Generator(n_u, n_c, config.noise_dim, rng, build_log)
    disc = Discriminator(n_u, n_c, config.latent_dim, rng, build_log)
    return GaromModel(
        generator=gen,
        discriminator=disc,
        config=config,
        n_u=n_u,
        n_c=n_c,
        gen_adam=_adam_states(gen.nets, config),
        disc_adam=_adam_states(disc.nets, config),
        build_log=build_log,
    )


def _check_batch(model, c, rows=None, width=None, what="batch"):
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = c.reshape(1, -1)
    if c.ndim != 2 or (width is not None and c.shape[1] != width):
        raise ValueError(f"{what} must have shape (batch, {width}), got {c.shape}")
    if rows is not None and c.shape[0] != rows:
        raise ValueError(f"{what} has {c.shape[0]} rows, expected {rows}")
    return c


def sample_noise(rng, batch, noise_dim):
    return rng.uniform(-1.0, 1.0, size=(batch, noise_dim))


def generate(model, z, c):
    """Generator output ``main([z | f(c)])``, one row per (z, c) pair."""
    z = _check_batch(model, z, width=model.config.noise_dim, what="z")
    c = _check_batch(model, c, rows=z.shape[0], width=model.n_c, what="c")
    return model.generator.forward(z, c)[0]


def discriminate(model, u, c):
    u = _check_batch(model, u, width=model.n_u, what="u")
    c = _check_batch(model, c, rows=u.shape[0], width=model.n_c, what="c")
    return model.discriminator.forward(u, c)[0]


def discriminator_grads(model, u, c, z, k=None, adam=None):
    """Loss ``L(u|c) - k L(G(z|c))`` and its gradient w.r.t. the discriminator only.

    The generated batch is treated as a constant. Real and generated rows go
    through the discriminator as one stacked batch. With ``adam`` (a dict of
    per-net Adam states) the update is applied during the backward pass and
    the returned grads are None.

    Returns ``(loss_d, recon_real, recon_fake, grads)``.
    """
    k = model.control.k if k is None else k
    batch = u.shape[0]
    fake = model.generator.forward(z, c)[0]
    rec, caches = model.discriminator.forward(np.vstack([u, fake]), np.vstack([c, c]))
    recon_real, g_real = kernels.l1_loss_grad(rec[:batch], u)
    recon_fake, g_fake = kernels.l1_loss_grad(rec[batch:], fake)
    loss_d = recon_real - k * recon_fake
    if adam is not None and not math.isfinite(loss_d):
        raise TrainingDivergedError(f"non-finite discriminator loss {loss_d}")
    grads, _ = model.discriminator.backward(caches, np.vstack([g_real, -k * g_fake]), adam=adam)
    return loss_d, recon_real, recon_fake, grads


def generator_grads(model, u, c, z, adam=None):
    """Loss ``L(G(z|c)) + eta |u - G(z|c)|`` and its gradient w.r.t. the generator only.

    Gradients flow through the discriminator's computation but its
    parameters get no update. Returns ``(loss_g, recon_fake, grads)``.
    """
    eta = model.config.eta
    fake, gen_caches = model.generator.forward(z, c)
    rec, disc_caches = model.discriminator.forward(fake, c)
    recon_fake, g_rec = kernels.l1_loss_grad(rec, fake)
    _, g_through_d = model.discriminator.backward(disc_caches, g_rec, weight_grads=False,
                                                  input_grad=True)
    grad_fake = g_through_d - g_rec
    loss_g = recon_fake
    if eta:
        reg, g_reg = kernels.l1_loss_grad(fake, u)
        loss_g += eta * reg
        grad_fake += eta * g_reg
    if adam is not None and not math.isfinite(loss_g):
        raise TrainingDivergedError(f"non-finite generator loss {loss_g}")
    return loss_g, recon_fake, model.generator.backward(gen_caches, grad_fake, adam=adam)


def train_step(model, u, c, rng):
    """One alternating update on the mini-batch ``(u, c)``.

    Discriminator step on fresh noise, then generator step on new noise
    (against the just-updated discriminator), then the control update
    ``k`` from the real reconstruction loss of the first sub-step and the
    generated reconstruction loss of the second.

    Raises
    ------
    TrainingDivergedError
        If a loss is not finite; parameters are left as they were before the
        offending sub-step.
    """
    cfg = model.config
    batch = u.shape[0]
    z = sample_noise(rng, batch, cfg.noise_dim)
    loss_d, recon_real, _, _ = discriminator_grads(model, u, c, z, adam=model.disc_adam)
    z = sample_noise(rng, batch, cfg.noise_dim)
    loss_g, recon_fake, _ = generator_grads(model, u, c, z, adam=model.gen_adam)

    k = update_control(model.control.k, recon_real, recon_fake, cfg.lambda_k, cfg.gamma)
    model.control.k = k
    return StepResult(loss_d, loss_g, k, recon_real, recon_fake)


def train(model, dataset, config=None, callback: Optional[Callable] = None,
          step_callback: Optional[Callable] = None):
    """Run ``config.epochs`` epochs of mini-batch training on ``dataset``.

    ``dataset`` is anything with ``params`` (N x N_c) and ``solutions``
    (N x N_u). Each epoch reshuffles the rows from a stream seeded by
    ``config.seed`` and the number of epochs already in ``model.history``, so
    repeated runs are bit-identical. ``callback(epoch, model)`` runs after
    every epoch and ``step_callback(step_result)`` after every mini-batch.
    """
    if config is not None:
        if (config.noise_dim, config.latent_dim) != (model.config.noise_dim, model.config.latent_dim):
            raise ValueError("config changes the architecture of an existing model")
        model.config = config
        model.set_learning_rate(config.learning_rate)
    cfg = model.config
    params = np.ascontiguousarray(dataset.params, dtype=np.float64)
    sols = np.ascontiguousarray(dataset.solutions, dtype=np.float64)
    if params.shape != (sols.shape[0], model.n_c) or sols.shape[1] != model.n_u:
        raise ValueError(
            f"dataset shapes {params.shape}/{sols.shape} do not match model "
            f"(N_c={model.n_c}, N_u={model.n_u})"
        )
    n = sols.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    _, train_seq = _seed_streams(cfg.seed)
    start = len(model.history)
    rng = np.random.default_rng(np.random.SeedSequence(train_seq.entropy,
                                                       spawn_key=(1, start)))
    bs = cfg.batch_size
    for epoch in range(start, start + cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        n_steps = 0
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            try:
                step = train_step(model, sols[idx], params[idx], rng)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch) from exc
            if step_callback is not None:
                step_callback(step)
            sums += (step.loss_d, step.loss_g,
                     convergence_measure(step.recon_real, step.recon_fake, cfg.gamma))
            n_steps += 1
        sums /= n_steps
        model.history.append(EpochRecord(epoch, sums[0], sums[1], model.control.k, sums[2]))
        if callback is not None:
            callback(epoch, model)
    return model
