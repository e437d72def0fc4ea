"""Reconstruction and KL terms, and the four composite training objectives.

All quantities are in nats, summed over dimensions per sample and averaged
over the batch.  ``compose`` returns the differentiable total together with a
``LossBreakdown`` of plain floats for logging.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from . import ndgrad as nd
from .ndgrad import Tensor

MODES = ("plain", "hinge", "loss_anneal", "arch_anneal")
LOG_COLUMNS = ("iter", "lambda", "total", "recon", "kl_c", "kl_d", "penalty_c", "penalty_d")


class ObjectiveConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    mode: str = "arch_anneal"
    beta: float = 1.0
    beta_c: float = 1.0
    beta_d: float = 1.0
    capacity_c: float | None = None
    capacity_d: float | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ObjectiveConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.beta, self.beta_c, self.beta_d) < 0:
            raise ObjectiveConfigError("weights must be >= 0")
        if self.mode == "hinge":
            if self.capacity_c is None or self.capacity_d is None:
                raise ObjectiveConfigError("hinge mode needs capacity_c and capacity_d")
        for c in (self.capacity_c, self.capacity_d):
            if c is not None and c < 0:
                raise ObjectiveConfigError("capacities must be >= 0")

    @property
    def model_anneal_mode(self) -> str:
        """The ModelConfig.anneal_mode this objective expects."""
        return {"plain": "none"}.get(self.mode, self.mode)

    @classmethod
    def hinge(cls, capacity_c: float, k_classes: int, beta: float = 100.0) -> "ObjectiveSpec":
        return cls(mode="hinge", beta=beta, capacity_c=capacity_c, capacity_d=math.log(k_classes))


@dataclass
class LossBreakdown:
    total: float
    recon: float
    kl_c: float
    kl_d: float
    kl_c_annealed: float = float("nan")
    penalty_c: float = 0.0
    penalty_d: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(getattr(self, f.name)) for f in fields(self) if f.name != "kl_c_annealed")


# ---------------------------------------------------------------------------
# terms


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise nd.ShapeError(f"{what}: {a.shape} vs {b.shape}")


def recon_loss(x, x_hat) -> Tensor:
    """Batch mean of 0.5 * ||x - x_hat||^2 (unit-variance Gaussian, constant dropped)."""
    x, x_hat = nd.as_tensor(x), nd.as_tensor(x_hat)
    _check_same(x, x_hat, "recon_loss")
    n = x.shape[0]
    return nd.scale(nd.sum_all(nd.square(x_hat - x)), 0.5 / n)


def kl_continuous(mu, log_var) -> Tensor:
    mu, log_var = nd.as_tensor(mu), nd.as_tensor(log_var)
    _check_same(mu, log_var, "kl_continuous")
    terms = nd.exp(log_var) + nd.square(mu) - 1.0 - log_var
    return nd.scale(nd.sum_all(terms), 0.5 / mu.shape[0])


def kl_continuous_annealed(mu, log_var, lam: float) -> Tensor:
    """KL of N(lam*mu, sigma^(2*lam)) from N(0, 1), taking the raw encoder heads."""
    mu, log_var = nd.as_tensor(mu), nd.as_tensor(log_var)
    _check_same(mu, log_var, "kl_continuous_annealed")
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    terms = (nd.exp(nd.scale(log_var, lam)) + nd.scale(nd.square(mu), lam * lam)
             - 1.0 - nd.scale(log_var, lam))
    return nd.scale(nd.sum_all(terms), 0.5 / mu.shape[0])


def kl_discrete(logits) -> Tensor:
    """KL of softmax(logits) from the uniform categorical, batch mean."""
    logits = nd.as_tensor(logits)
    n, k = logits.shape
    log_q = nd.log_softmax_rows(logits)
    q = nd.exp(log_q)
    return nd.scale(nd.sum_all(q * (log_q + math.log(k))), 1.0 / n)


def hinge_objective(recon, kl_c, kl_d, beta: float, capacity_c: float, capacity_d: float):
    recon, kl_c, kl_d = nd.as_tensor(recon), nd.as_tensor(kl_c), nd.as_tensor(kl_d)
    pen_c = nd.scale(nd.absolute(kl_c - capacity_c), beta)
    pen_d = nd.scale(nd.absolute(kl_d - capacity_d), beta)
    total = recon + pen_c + pen_d
    return total, LossBreakdown(
        total=total.item(), recon=recon.item(), kl_c=kl_c.item(), kl_d=kl_d.item(),
        penalty_c=pen_c.item(), penalty_d=pen_d.item(),
    )


# ---------------------------------------------------------------------------
# composition


def compose(spec: ObjectiveSpec, x, x_hat, mu, log_var, logits=None, lam: float = 1.0):
    """Total loss for ``spec.mode`` plus its breakdown.

    ``mu``/``log_var`` are what the encoder returned: raw heads for plain,
    hinge and loss_anneal; already lambda-scaled heads for arch_anneal.
    ``logits`` is None for a continuous-only model (the discrete terms are 0).
    """
    spec.validate()
    recon = recon_loss(x, x_hat)
    kl_c = kl_continuous(mu, log_var)
    kl_d = kl_discrete(logits) if logits is not None else Tensor(0.0)
    mode = spec.mode

    if mode == "hinge":
        return hinge_objective(recon, kl_c, kl_d, spec.beta, spec.capacity_c, spec.capacity_d)

    annealed = float("nan")
    if mode == "plain":
        pen_c, pen_d = nd.scale(kl_c, spec.beta_c), nd.scale(kl_d, spec.beta_d)
    elif mode == "loss_anneal":
        kl_ca = kl_continuous_annealed(mu, log_var, lam)
        annealed = kl_ca.item()
        pen_c, pen_d = nd.scale(kl_ca, spec.beta), nd.scale(kl_d, spec.beta)
    else:  # arch_anneal: kl_c already sees the scaled heads
        pen_c, pen_d = nd.scale(kl_c, spec.beta), nd.scale(kl_d, spec.beta)
    total = recon + pen_c + pen_d
    return total, LossBreakdown(
        total=total.item(), recon=recon.item(), kl_c=kl_c.item(), kl_d=kl_d.item(),
        kl_c_annealed=annealed, penalty_c=pen_c.item(), penalty_d=pen_d.item(),
    )


def combine(spec: ObjectiveSpec, b: LossBreakdown) -> float:
    """Recompute ``total`` from the parts (the invariant the log must satisfy)."""
    return b.recon + b.penalty_c + b.penalty_d


def log_row(iteration: int, lam: float, b: LossBreakdown) -> list:
    return [iteration, lam, b.total, b.recon, b.kl_c, b.kl_d, b.penalty_c, b.penalty_d]

