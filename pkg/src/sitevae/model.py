"""Joint continuous/discrete VAE: MLP encoder with three heads, mirrored decoder.

The anneal mode changes one thing in the forward pass: under ``arch_anneal``
the encoder's (mu, log_var) heads are multiplied by lambda inside the graph,
so both sampling and the KL see the scaled posterior.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import ndgrad as nd
from .ndgrad import Tensor
from .streams import stream

ANNEAL_MODES = ("none", "hinge", "loss_anneal", "arch_anneal")
CHECKPOINT_MAGIC = b"LFCK1"


class ConfigError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple = (1024, 512, 256, 128)
    z_c_dim: int = 32
    k_classes: int = 25           # 0 -> continuous-only VAE (baseline)
    gumbel_temperature: float = 0.67
    anneal_mode: str = "none"
    hard_gumbel: bool = False     # straight-through one-hot into the decoder
    standardize_input: bool = True  # per-edge z-scoring in front of the encoder

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        self.validate()

    def validate(self) -> None:
        if self.input_dim < 1 or self.z_c_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("all dimensions must be >= 1")
        if len(self.hidden_dims) < 1:
            raise ConfigError("need at least one hidden layer")
        if self.k_classes == 1 or self.k_classes < 0:
            raise ConfigError("k_classes must be >= 2 (or 0 for a continuous-only VAE)")
        if not self.gumbel_temperature > 0:
            raise ConfigError("gumbel_temperature must be > 0")
        if self.anneal_mode not in ANNEAL_MODES:
            raise ConfigError(f"anneal_mode must be one of {ANNEAL_MODES}")

    @property
    def discrete(self) -> bool:
        return self.k_classes > 0


@dataclass
class LatentPosterior:
    mu: Tensor
    log_var: Tensor
    logits: Tensor | None
    lambda_applied: float

    def probs(self) -> np.ndarray:
        if self.logits is None:
            raise ValueError("continuous-only model has no discrete posterior")
        return nd.softmax_rows(self.logits.data).data


@dataclass
class LatentSample:
    z_c: Tensor
    z_d_soft: Tensor | None
    z_d_hard: np.ndarray | None


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


class JointVAE:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.layers: list[tuple[str, Tensor, Tensor]] = []
        rng = stream(seed, "init")
        c = config
        dims = (c.input_dim,) + c.hidden_dims
        for i in range(len(c.hidden_dims)):
            self._linear(f"enc{i}", dims[i], dims[i + 1], rng)
        h = c.hidden_dims[-1]
        self._linear("mu", h, c.z_c_dim, rng)
        self._linear("log_var", h, c.z_c_dim, rng)
        if c.discrete:
            self._linear("logits", h, c.k_classes, rng)
        rev = (c.z_c_dim + c.k_classes,) + c.hidden_dims[::-1]
        for i in range(len(c.hidden_dims)):
            self._linear(f"dec{i}", rev[i], rev[i + 1], rng)
        self._linear("out", rev[-1], c.input_dim, rng)
        self._by_name = {name: (w, b) for name, w, b in self.layers}
        # fixed (not trained) encoder input transform; identity until init_from_data
        self.input_shift = np.zeros(c.input_dim)
        self.input_scale = np.ones(c.input_dim)
        self.data_initialized = False

    def init_from_data(self, x: np.ndarray) -> None:
        """Data-dependent setup from the training inputs, done once before training.

        Sets the output bias to the logit of the per-edge mean, so the untrained
        decoder already predicts the average connectome, and (when
        ``standardize_input``) stores the per-edge mean/std used to z-score
        encoder inputs.
        """
        x = np.asarray(x, dtype=np.float64)
        mean = np.clip(x.mean(axis=0), 1e-4, 1.0 - 1e-4)
        _, b = self._by_name["out"]
        b.data = Tensor(np.log(mean / (1.0 - mean))[None, :]).data
        if self.config.standardize_input:
            sd = x.std(axis=0)
            self.input_shift = x.mean(axis=0)
            self.input_scale = np.where(sd > 1e-12, sd, 1.0)
        self.data_initialized = True

    def _linear(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
        self.layers.append((name, w, b))

    def parameters(self) -> list[Tensor]:
        out = []
        for _, w, b in self.layers:
            out += [w, b]
        return out

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(params, arrays):
            if np.shape(a) != p.shape:
                raise ValueError(f"shape mismatch {np.shape(a)} vs {p.shape}")
            fresh = Tensor(a, requires_grad=True)
            p.data = fresh.data
            p.grad = None

    def zero_grad(self) -> None:
        nd.zero_grads(self.parameters())

    def _apply(self, name: str, h: Tensor) -> Tensor:
        w, b = self._by_name[name]
        return nd.matmul(h, w) + b

    # ------------------------------------------------------------------
    def encode(self, x, lam: float = 1.0) -> LatentPosterior:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {lam}")
        x = nd.as_tensor(x).data
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite encoder input")
        h = Tensor((x - self.input_shift) / self.input_scale)
        for i in range(len(self.config.hidden_dims)):
            h = nd.relu(self._apply(f"enc{i}", h))
            if not np.all(np.isfinite(h.data)):
                raise NumericalError(f"non-finite activation in encoder layer {i}")
        mu = self._apply("mu", h)
        log_var = self._apply("log_var", h)
        logits = self._apply("logits", h) if self.config.discrete else None
        if self.config.anneal_mode == "arch_anneal":
            mu = nd.scale(mu, lam)
            log_var = nd.scale(log_var, lam)
        return LatentPosterior(mu, log_var, logits, float(lam))

    @staticmethod
    def sample_continuous(post: LatentPosterior, eps: np.ndarray) -> Tensor:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != post.mu.shape:
            raise nd.ShapeError(f"noise {eps.shape} vs mu {post.mu.shape}")
        return post.mu + nd.exp(nd.scale(post.log_var, 0.5)) * Tensor(eps)

    def sample_discrete(self, post: LatentPosterior, g: np.ndarray, tau: float | None = None):
        tau = self.config.gumbel_temperature if tau is None else tau
        if not tau > 0:
            raise ConfigError("temperature must be > 0")
        soft = nd.softmax_rows(nd.scale(post.logits + Tensor(g), 1.0 / tau))
        hard = soft.data.argmax(axis=1)
        if self.config.hard_gumbel:
            soft = nd.straight_through_onehot(soft)
        return soft, hard

    def decode(self, z_c: Tensor, z_d_soft: Tensor | None) -> Tensor:
        h = nd.concat_cols([z_c, z_d_soft]) if z_d_soft is not None else z_c
        for i in range(len(self.config.hidden_dims)):
            h = nd.relu(self._apply(f"dec{i}", h))
        return nd.sigmoid(self._apply("out", h))

    def forward(self, x, lam: float, eps: np.ndarray, g: np.ndarray | None):
        post = self.encode(x, lam)
        z_c = self.sample_continuous(post, eps)
        if self.config.discrete:
            soft, hard = self.sample_discrete(post, g)
        else:
            soft, hard = None, None
        x_hat = self.decode(z_c, soft)
        return post, LatentSample(z_c, soft, hard), x_hat

    def draw_noise(self, rng_eps: np.random.Generator, rng_gumbel: np.random.Generator, batch: int):
        eps = rng_eps.standard_normal((batch, self.config.z_c_dim))
        g = gumbel_noise(rng_gumbel, (batch, self.config.k_classes)) if self.config.discrete else None
        return eps, g

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray | None]:
        """Noise-free pass at lambda = 1: (posterior means, argmax assignments)."""
        post = self.encode(np.asarray(x, dtype=np.float64), 1.0)
        mu = post.mu.data.copy()
        if not self.config.discrete:
            return mu, None
        return mu, post.logits.data.argmax(axis=1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: JointVAE, iteration: int = 0, rng_states: dict | None = None) -> None:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    states = json.dumps(rng_states or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(cfg)))
        fh.write(cfg)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.input_shift, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.input_scale, dtype="<f8").tobytes())
        fh.write(struct.pack("<QQQ", int(iteration), int(model.seed), int(model.data_initialized)))
        fh.write(struct.pack("<Q", len(states)))
        fh.write(states)


def load_checkpoint(path) -> tuple[JointVAE, int, dict]:
    buf = Path(path).read_bytes()
    if buf[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack_from("<Q", buf, 5)
    off = 13
    cfg = json.loads(buf[off:off + n].decode("utf-8"))
    off += n
    model = JointVAE(ModelConfig(**cfg), seed=0)
    arrays = []
    for p in model.parameters():
        arr = np.frombuffer(buf, dtype="<f8", count=p.size, offset=off).reshape(p.shape)
        arrays.append(arr.astype(np.float64))
        off += 8 * p.size
    model.set_parameters(arrays)
    d = model.config.input_dim
    model.input_shift = np.frombuffer(buf, dtype="<f8", count=d, offset=off).astype(np.float64)
    off += 8 * d
    model.input_scale = np.frombuffer(buf, dtype="<f8", count=d, offset=off).astype(np.float64)
    off += 8 * d
    iteration, seed, fitted = struct.unpack_from("<QQQ", buf, off)
    model.seed, model.data_initialized = seed, bool(fitted)
    off += 24
    (m,) = struct.unpack_from("<Q", buf, off)
    off += 8
    states = json.loads(buf[off:off + m].decode("utf-8"))
    return model, iteration, states
