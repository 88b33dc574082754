"""Adversarial training of the encoder/generator/two-discriminator model.

Losses are returned together with exact parameter gradients so the same code
path serves the optimizer and the finite-difference checks.

Modes:

* ``rcgan``: joint-matching loss with the penalty term plus the cycle loss.
* ``no-penalty``: the same without the penalty term (ablation). Penalty
  batches are still drawn, from their own RNG stream, and ignored.
* ``alice-baseline``: no penalty term and no penalty sampling at all.
* ``ali``: joint-matching loss only (no penalty, no cycle discriminator update).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import DistSpec, sample
from .nn_core import (
    AdamState,
    DenseNet,
    adam_step,
    backward,
    clamp_prob,
    forward,
    init_net,
    load_nets,
    save_nets,
)

log = logging.getLogger(__name__)

MODES = ("rcgan", "no-penalty", "alice-baseline", "ali")
NET_NAMES = ("encoder", "generator", "disc_xz", "disc_xx")
DISC_NETS = ("disc_xz", "disc_xx")
GEN_NETS = ("encoder", "generator")


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite."""

    def __init__(self, message: str, report: LossReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass
class RCGANModel:
    encoder: DenseNet
    generator: DenseNet
    disc_xz: DenseNet
    disc_xx: DenseNet
    latent_spec: DistSpec
    penalty_spec: DistSpec

    def __post_init__(self):
        z_dim = self.encoder.output_dim
        x_dim = self.encoder.input_dim
        if self.generator.input_dim != z_dim or self.generator.output_dim != x_dim:
            raise ValueError("generator must map latent dim back to data dim")
        if self.disc_xz.input_dim != x_dim + z_dim or self.disc_xz.output_dim != 1:
            raise ValueError("disc_xz must take (x, z) and emit one probability")
        if self.disc_xx.input_dim != 2 * x_dim or self.disc_xx.output_dim != 1:
            raise ValueError("disc_xx must take (x, x') and emit one probability")
        for name in DISC_NETS:
            if getattr(self, name).layers[-1].activation != "sigmoid":
                raise ValueError(f"{name} must end in a sigmoid")
        if self.latent_spec.dim != z_dim:
            raise ValueError("latent distribution dim differs from encoder output")
        if self.penalty_spec.dim != x_dim:
            raise ValueError("penalty distribution dim differs from data dim")

    @property
    def x_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def z_dim(self) -> int:
        return self.encoder.output_dim

    def nets(self) -> dict[str, DenseNet]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def copy(self) -> RCGANModel:
        return RCGANModel(
            *(getattr(self, n).copy() for n in NET_NAMES),
            self.latent_spec,
            self.penalty_spec,
        )

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.generator(self.encoder(x))

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta["latent_spec"] = asdict(self.latent_spec)
        meta["penalty_spec"] = asdict(self.penalty_spec)
        save_nets(path, self.nets(), meta)

    @classmethod
    def load(cls, path: str | Path) -> RCGANModel:
        nets, meta = load_nets(path)

        def spec(d):
            d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
            return DistSpec(**d)

        return cls(
            *(nets[n] for n in NET_NAMES),
            spec(meta["latent_spec"]),
            spec(meta["penalty_spec"]),
        )


def build_model(
    x_dim: int,
    z_dim: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    latent_spec: DistSpec | None = None,
    penalty_spec: DistSpec | None = None,
) -> RCGANModel:
    """Fresh model with leaky-relu MLPs of the given hidden widths."""
    h = list(hidden)
    return RCGANModel(
        encoder=init_net([x_dim, *h, z_dim], rng),
        generator=init_net([z_dim, *h, x_dim], rng),
        disc_xz=init_net([x_dim + z_dim, *h, 1], rng, output_activation="sigmoid"),
        disc_xx=init_net([2 * x_dim, *h, 1], rng, output_activation="sigmoid"),
        latent_spec=latent_spec or DistSpec.gaussian(z_dim),
        penalty_spec=penalty_spec or DistSpec.gaussian(x_dim),
    )


# -- losses --------------------------------------------------------------------


def _neg_log(d: np.ndarray) -> tuple[float, np.ndarray]:
    """``-mean log d`` over the batch and its gradient in ``d``."""
    dc, mask = clamp_prob(d)
    n = d.shape[0]
    return float(-np.log(dc).mean()), -(mask / (dc * n))


def _neg_log1m(d: np.ndarray) -> tuple[float, np.ndarray]:
    """``-mean log(1 - d)`` over the batch and its gradient in ``d``."""
    dc, mask = clamp_prob(d)
    n = d.shape[0]
    return float(-np.log1p(-dc).mean()), mask / ((1.0 - dc) * n)


def _zeros(net: DenseNet) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


def _accumulate(acc: list[np.ndarray], grads) -> None:
    for a, g in zip(acc, grads.flat()):
        a += g


@dataclass
class LossTerms:
    """Scalar losses plus gradients keyed by net name."""

    disc: float
    gen: float
    disc_grads: dict[str, list[np.ndarray]]
    gen_grads: dict[str, list[np.ndarray]]


def v_ano_terms(
    model: RCGANModel,
    x_real: np.ndarray,
    x_pen: np.ndarray | None,
    z: np.ndarray,
) -> LossTerms:
    """Joint-matching loss, optionally with the penalty term.

    Discriminator side::

        -[mean log D(x, E(x)) + mean log(1 - D(G(z), z)) + mean log(1 - D(x_t, E(x_t)))]

    Encoder/generator side (non-saturating)::

        -[mean log(1 - D(x, E(x))) + mean log D(G(z), z)]

    The penalty term enters the discriminator loss only.
    """
    dx = model.x_dim
    e_tr = forward(model.encoder, x_real)
    g_tr = forward(model.generator, z)
    real_tr = forward(model.disc_xz, np.hstack((x_real, e_tr.output)))
    fake_tr = forward(model.disc_xz, np.hstack((g_tr.output, z)))

    d_grads = {"disc_xz": _zeros(model.disc_xz)}
    l_real, u_real = _neg_log(real_tr.output)
    l_fake, u_fake = _neg_log1m(fake_tr.output)
    _accumulate(d_grads["disc_xz"], backward(real_tr, u_real))
    _accumulate(d_grads["disc_xz"], backward(fake_tr, u_fake))
    disc = l_real + l_fake
    if x_pen is not None:
        pen_tr = forward(model.disc_xz, np.hstack((x_pen, model.encoder(x_pen))))
        l_pen, u_pen = _neg_log1m(pen_tr.output)
        _accumulate(d_grads["disc_xz"], backward(pen_tr, u_pen))
        disc += l_pen

    g_real, ug_real = _neg_log1m(real_tr.output)
    g_fake, ug_fake = _neg_log(fake_tr.output)
    into_real = backward(real_tr, ug_real).input
    into_fake = backward(fake_tr, ug_fake).input
    gen_grads = {
        "encoder": backward(e_tr, into_real[:, dx:]).flat(),
        "generator": backward(g_tr, into_fake[:, :dx]).flat(),
    }
    return LossTerms(disc, g_real + g_fake, d_grads, gen_grads)


def v_cycle_terms(model: RCGANModel, x_real: np.ndarray) -> LossTerms:
    """Cycle-consistency loss on pairs ``(x, x)`` versus ``(x, G(E(x)))``.

    Discriminator side: ``-[mean log D(x, x) + mean log(1 - D(x, x~))]``.
    Encoder/generator side (non-saturating): ``-mean log D(x, x~)``.
    """
    dx = model.x_dim
    e_tr = forward(model.encoder, x_real)
    g_tr = forward(model.generator, e_tr.output)
    same_tr = forward(model.disc_xx, np.hstack((x_real, x_real)))
    recon_tr = forward(model.disc_xx, np.hstack((x_real, g_tr.output)))

    l_same, u_same = _neg_log(same_tr.output)
    l_recon, u_recon = _neg_log1m(recon_tr.output)
    d_grads = {"disc_xx": _zeros(model.disc_xx)}
    _accumulate(d_grads["disc_xx"], backward(same_tr, u_same))
    _accumulate(d_grads["disc_xx"], backward(recon_tr, u_recon))

    g_loss, ug = _neg_log(recon_tr.output)
    into_g = backward(recon_tr, ug).input[:, dx:]
    gb = backward(g_tr, into_g)
    gen_grads = {"generator": gb.flat(), "encoder": backward(e_tr, gb.input).flat()}
    return LossTerms(l_same + l_recon, g_loss, d_grads, gen_grads)


def _mean_log(d: np.ndarray) -> float:
    return float(np.log(clamp_prob(d)[0]).mean())


def _mean_log1m(d: np.ndarray) -> float:
    return float(np.log1p(-clamp_prob(d)[0]).mean())


def loss_v_ano(model, x_real, x_pen, z) -> tuple[float, float]:
    """(discriminator, encoder/generator) joint-matching losses, forward pass only."""
    d_real = model.disc_xz(np.hstack((x_real, model.encoder(x_real))))
    d_fake = model.disc_xz(np.hstack((model.generator(z), z)))
    disc = -(_mean_log(d_real) + _mean_log1m(d_fake))
    if x_pen is not None:
        disc -= _mean_log1m(model.disc_xz(np.hstack((x_pen, model.encoder(x_pen)))))
    gen = -(_mean_log1m(d_real) + _mean_log(d_fake))
    return disc, gen


def loss_v_cycle(model, x_real) -> tuple[float, float]:
    """(discriminator, encoder/generator) cycle losses, forward pass only."""
    d_same = model.disc_xx(np.hstack((x_real, x_real)))
    d_recon = model.disc_xx(np.hstack((x_real, model.reconstruct(x_real))))
    return -(_mean_log(d_same) + _mean_log1m(d_recon)), -_mean_log(d_recon)


# -- training loop -------------------------------------------------------------


@dataclass
class TrainConfig:
    mode: str = "rcgan"
    epochs: int = 100
    batch_size: int = 128
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    disc_steps: int = 1
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.disc_steps < 1:
            raise ValueError("disc_steps must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def uses_penalty(self) -> bool:
        return self.mode == "rcgan"

    @property
    def uses_cycle(self) -> bool:
        return self.mode != "ali"


LOSS_COLUMNS = ("ano_disc", "ano_gen", "cycle_disc", "cycle_gen")


@dataclass
class LossReport:
    steps: list[dict[str, float]] = field(default_factory=list)

    def append(self, entry: dict[str, float]) -> None:
        self.steps.append(entry)

    def epoch_means(self) -> list[dict[str, float]]:
        out: dict[int, list[dict]] = {}
        for row in self.steps:
            out.setdefault(int(row["epoch"]), []).append(row)
        return [
            {"epoch": e, **{c: float(np.mean([r[c] for r in rows])) for c in LOSS_COLUMNS}}
            for e, rows in sorted(out.items())
        ]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "epoch", *LOSS_COLUMNS))
            for row in self.steps:
                w.writerow(
                    (int(row["step"]), int(row["epoch"]), *(repr(row[c]) for c in LOSS_COLUMNS))
                )


class Streams:
    """Independent generators split from one root seed.

    ``SeedSequence(seed).spawn(4)`` gives, in order: init, batches, latent,
    penalty. Keeping penalty draws on their own stream means switching the
    penalty term on or off leaves every other random draw unchanged.
    """

    def __init__(self, seed: int):
        init, batches, latent, penalty = np.random.SeedSequence(seed).spawn(4)
        self.init = np.random.default_rng(init)
        self.batches = np.random.default_rng(batches)
        self.latent = np.random.default_rng(latent)
        self.penalty = np.random.default_rng(penalty)


@dataclass
class TrainState:
    cfg: TrainConfig
    streams: Streams
    disc_opt: AdamState
    gen_opt: AdamState
    step: int = 0
    epoch: int = 0

    @classmethod
    def fresh(cls, model: RCGANModel, cfg: TrainConfig, streams: Streams | None = None):
        hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
        return cls(
            cfg,
            streams or Streams(cfg.seed),
            AdamState.for_params(_params(model, DISC_NETS), **hyper),
            AdamState.for_params(_params(model, GEN_NETS), **hyper),
        )


def _params(model: RCGANModel, names) -> list[np.ndarray]:
    out = []
    for n in names:
        out.extend(getattr(model, n).params())
    return out


def _apply(model: RCGANModel, names, new_params: list[np.ndarray]) -> None:
    i = 0
    for n in names:
        net = getattr(model, n)
        k = len(net.params())
        net.set_params(new_params[i : i + k])
        i += k


def _flat_grads(model, names, grads: dict[str, list[np.ndarray]]) -> list[np.ndarray]:
    out = []
    for n in names:
        out.extend(grads.get(n) or _zeros(getattr(model, n)))
    return out


def _add(a: dict, b: dict) -> dict:
    out = {k: list(v) for k, v in a.items()}
    for k, v in b.items():
        out[k] = [x + y for x, y in zip(out[k], v)] if k in out else list(v)
    return out


def _check_finite(values: dict[str, float], report: LossReport | None) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite loss: {bad}", report)


def _draw(model: RCGANModel, n: int, state: TrainState):
    z = sample(model.latent_spec, n, state.streams.latent)
    x_pen = None
    if state.cfg.mode in ("rcgan", "no-penalty"):
        x_pen = sample(model.penalty_spec, n, state.streams.penalty)
        if not state.cfg.uses_penalty:
            x_pen = None
    return z, x_pen


def train_step(model: RCGANModel, batcher, cfg: TrainConfig, state: TrainState,
               report: LossReport | None = None) -> dict[str, float]:
    """``cfg.disc_steps`` discriminator updates, then one encoder/generator update.

    ``batcher()`` returns the next batch of real data. Updates ``model`` in place.
    """
    values: dict[str, float] = {}
    for _ in range(cfg.disc_steps):
        x = batcher()
        z, x_pen = _draw(model, x.shape[0], state)
        ano = v_ano_terms(model, x, x_pen, z)
        grads = ano.disc_grads
        values.update(ano_disc=ano.disc)
        if cfg.uses_cycle:
            cyc = v_cycle_terms(model, x)
            grads = _add(grads, cyc.disc_grads)
            values.update(cycle_disc=cyc.disc)
        else:
            values.update(cycle_disc=0.0)
        _check_finite(values, report)
        new = adam_step(_params(model, DISC_NETS), _flat_grads(model, DISC_NETS, grads), state.disc_opt)
        _apply(model, DISC_NETS, new)

    x = batcher()
    z, _ = _draw(model, x.shape[0], state)
    ano = v_ano_terms(model, x, None, z)
    grads = ano.gen_grads
    values.update(ano_gen=ano.gen)
    if cfg.uses_cycle:
        cyc = v_cycle_terms(model, x)
        grads = _add(grads, cyc.gen_grads)
        values.update(cycle_gen=cyc.gen)
    else:
        values.update(cycle_gen=0.0)
    _check_finite(values, report)
    new = adam_step(_params(model, GEN_NETS), _flat_grads(model, GEN_NETS, grads), state.gen_opt)
    _apply(model, GEN_NETS, new)

    entry = {"step": state.step, "epoch": state.epoch, **values}
    state.step += 1
    if report is not None:
        report.append(entry)
    return entry


def train(
    model: RCGANModel,
    data: np.ndarray,
    cfg: TrainConfig,
    checkpoint: str | Path | None = None,
) -> tuple[RCGANModel, LossReport]:
    """Train a copy of ``model`` on normal-only ``data``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.x_dim:
        raise ValueError(f"data of shape {data.shape} does not match x_dim {model.x_dim}")
    model = model.copy()
    state = TrainState.fresh(model, cfg)
    report = LossReport()
    n = data.shape[0]
    bs = min(cfg.batch_size, n)
    order: list[np.ndarray] = []

    def batcher():
        # reshuffle whenever the current epoch's permutation runs out
        if not order:
            perm = state.streams.batches.permutation(n)
            order.extend(perm[i : i + bs] for i in range(0, n - bs + 1, bs))
        return data[order.pop(0)]

    per_epoch = max(1, n // (bs * (cfg.disc_steps + 1)))
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        for _ in range(per_epoch):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
            train_step(model, batcher, cfg, state, report)
        if report.steps:
            last = report.epoch_means()[-1]
            log.debug("epoch %d: %s", epoch, last)
    if checkpoint is not None:
        model.save(checkpoint, {"train_config": asdict(cfg)})
    return model, report
