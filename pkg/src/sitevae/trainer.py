"""Mini-batch training loop with a linear lambda ramp and an Adam-style optimizer."""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import ConnectomeDataset
from .model import JointVAE, save_checkpoint
from .objectives import LOG_COLUMNS, LossBreakdown, ObjectiveSpec, compose, log_row
from .streams import stream


class NumericalAbort(ArithmeticError):
    """The loss became non-finite; carries the iteration and the last finite breakdown."""

    def __init__(self, iteration: int, last_finite: LossBreakdown | None):
        self.iteration = iteration
        self.last_finite = last_finite
        super().__init__(f"non-finite loss at iteration {iteration}; last finite: {last_finite}")


@dataclass(frozen=True)
class Schedule:
    anneal_iters: int = 5000
    kind: str = "linear"

    def __post_init__(self):
        if self.anneal_iters < 1:
            raise ValueError("anneal_iters must be >= 1")
        if self.kind != "linear":
            raise ValueError(f"unsupported schedule {self.kind!r}")


def lambda_at(schedule: Schedule | int, t: int) -> float:
    t0 = schedule.anneal_iters if isinstance(schedule, Schedule) else int(schedule)
    if t < 0:
        raise ValueError("iteration must be >= 0")
    return min(t / t0, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 100
    anneal_iters: int = 600
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float | None = 10.0
    seed: int = 0
    log_every: int = 0            # progress line to stderr; 0 disables
    checkpoint_every: int = 0     # iterations; 0 disables

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=2500, batch_size=512, anneal_iters=5000, lr=1e-4)
        base.update(overrides)
        return cls(**base)

    def iters_per_epoch(self, n: int) -> int:
        return n // self.batch_size

    def total_iters(self, n: int) -> int:
        return self.epochs * self.iters_per_epoch(n)

    def validate(self, n: int) -> None:
        if self.anneal_iters < 1:
            raise ValueError("anneal_iters must be >= 1")
        if not 1 <= self.batch_size <= n:
            raise ValueError(f"batch_size must be in [1, N={n}]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
                 grad_clip: float | None = None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> float:
        """Apply one update from the accumulated grads; returns the pre-clip grad norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
        if self.grad_clip is not None and norm > self.grad_clip:
            grads = [g * (self.grad_clip / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        b1, b2 = self.beta1, self.beta2
        step = self.lr / c1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[i], self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            new = m / denom
            new *= -step
            new += p.data
            new.setflags(write=False)
            p.data = new
        return norm


@dataclass
class TrainResult:
    model: JointVAE
    log: list = field(default_factory=list)          # rows in LOG_COLUMNS order
    epoch_recon: list = field(default_factory=list)  # mean recon per epoch
    iterations: int = 0

    def final(self) -> dict:
        return dict(zip(LOG_COLUMNS, self.log[-1])) if self.log else {}


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def train(model: JointVAE, dataset: ConnectomeDataset, spec: ObjectiveSpec, cfg: TrainConfig,
          log_path=None, checkpoint_dir=None) -> TrainResult:
    """Train ``model`` in place; fully deterministic given ``cfg.seed`` and the model weights."""
    spec.validate()
    n = dataset.n
    cfg.validate(n)
    if spec.model_anneal_mode == "arch_anneal" and model.config.anneal_mode != "arch_anneal":
        model.config = replace(model.config, anneal_mode="arch_anneal")
    if not model.data_initialized:
        model.init_from_data(dataset.x)
    schedule = Schedule(cfg.anneal_iters)
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.grad_clip)
    rng_batch = stream(cfg.seed, "batch")
    rng_eps = stream(cfg.seed, "eps")
    rng_gumbel = stream(cfg.seed, "gumbel")
    per_epoch = cfg.iters_per_epoch(n)
    x_all = dataset.x
    result = TrainResult(model=model)
    last_ok: LossBreakdown | None = None
    t = 0
    for epoch in range(cfg.epochs):
        order = rng_batch.permutation(n)
        recon_sum = 0.0
        for b in range(per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]  # partial tail dropped
            xb = x_all[idx]
            lam = lambda_at(schedule, t)
            eps, g = model.draw_noise(rng_eps, rng_gumbel, len(idx))
            post, _sample, x_hat = model.forward(xb, lam, eps, g)
            total, parts = compose(spec, xb, x_hat, post.mu, post.log_var, post.logits, lam)
            if not parts.is_finite():
                raise NumericalAbort(t, last_ok)
            last_ok = parts
            model.zero_grad()
            total.backward()
            opt.step()
            result.log.append(log_row(t, lam, parts))
            recon_sum += parts.recon
            t += 1
            if cfg.log_every and t % cfg.log_every == 0:
                print(f"iter {t} epoch {epoch} lambda {lam:.4f} total {parts.total:.5g} recon {parts.recon:.5g} "
                      f"kl_c {parts.kl_c:.5g} kl_d {parts.kl_d:.5g}", file=sys.stderr)
            if checkpoint_dir is not None and cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
                states = {k: r.bit_generator.state for k, r in
                          (("batch", rng_batch), ("eps", rng_eps), ("gumbel", rng_gumbel))}
                save_checkpoint(Path(checkpoint_dir) / f"ckpt_{t:07d}.lfck", model, t, _jsonable(states))
        result.epoch_recon.append(recon_sum / max(per_epoch, 1))
    result.iterations = t
    if log_path is not None:
        write_log(result.log, log_path)
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def extract_latents(model: JointVAE, dataset: ConnectomeDataset) -> tuple[np.ndarray, np.ndarray | None]:
    """Noise-free lambda = 1 pass: posterior means and argmax assignments."""
    return model.evaluate(dataset.x)
