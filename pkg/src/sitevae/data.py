"""Connectome datasets: synthetic multi-site generator, CSV ingestion, normalization, cache files.

A connectome is a symmetric R x R matrix of streamline counts.  It is reduced
to the strict upper triangle (row-major, i < j), so D = R(R-1)/2.  Counts are
mapped to [0, 1] by ``log1p(count) / G`` with one global scale ``G``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .streams import stream

log = logging.getLogger(__name__)

CACHE_MAGIC = b"LFDS1"


class IngestionError(RuntimeError):
    """Input files are missing or inconsistent."""


class FormatError(IngestionError):
    """A matrix file is not a square numeric matrix."""


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class ConnectomeDataset:
    x: np.ndarray                  # (N, D), normalized to [0, 1]
    site: np.ndarray               # (N,), ints 0..S-1
    norm: dict                     # {"kind": "log1p_max", "G": float, ...}
    meta: dict = field(default_factory=dict)   # column name -> list, one entry per row
    subject_ids: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        site = np.asarray(self.site, dtype=np.int64)
        if x.ndim != 2 or site.shape != (x.shape[0],):
            raise ValueError(f"x {x.shape} and site {site.shape} disagree")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "site", site)
        if not self.subject_ids:
            object.__setattr__(self, "subject_ids", tuple(f"sub-{i:05d}" for i in range(len(site))))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_sites(self) -> int:
        return int(self.site.max()) + 1 if self.n else 0

    def subset(self, idx) -> "ConnectomeDataset":
        idx = np.asarray(idx)
        return replace(
            self,
            x=self.x[idx],
            site=self.site[idx],
            meta={k: [v[i] for i in idx] for k, v in self.meta.items()},
            subject_ids=tuple(self.subject_ids[i] for i in idx),
        )

    def check(self) -> None:
        """Raise if the dataset invariants are violated."""
        if self.x.size and (self.x.min() < 0 or self.x.max() > 1):
            raise ValueError("x outside [0, 1]")
        present = np.unique(self.site)
        if len(present) and not np.array_equal(present, np.arange(len(present))):
            raise ValueError("site labels are not contiguous 0..S-1")


@dataclass(frozen=True)
class SyntheticConfig:
    n_subjects: int = 800
    n_edges: int = 300
    n_sites: int = 4
    bio_rank: int = 4
    site_strength: float = 10.0
    noise_sd: float = 0.1
    bio_scale: float = 0.25
    imbalance: float | None = None   # Dirichlet concentration; None -> round-robin sites
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_subjects", "n_edges", "n_sites", "bio_rank"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.site_strength < 0 or self.noise_sd < 0 or self.bio_scale < 0:
            raise ValueError("site_strength, noise_sd and bio_scale must be >= 0")
        if self.n_sites > self.n_subjects:
            raise ValueError("more sites than subjects")
        if self.imbalance is not None and self.imbalance <= 0:
            raise ValueError("imbalance must be > 0")


# ---------------------------------------------------------------------------
# vectorization


def n_edges(r: int, include_diagonal: bool = False) -> int:
    return r * (r + 1) // 2 if include_diagonal else r * (r - 1) // 2


def n_regions(d: int, include_diagonal: bool = False) -> int:
    off = 1 if include_diagonal else -1
    r = int(round((-off + math.sqrt(1 + 8 * d)) / 2))
    if n_edges(r, include_diagonal) != d:
        raise ValueError(f"{d} is not a triangular edge count")
    return r


def vectorize(mat: np.ndarray, include_diagonal: bool = False) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise FormatError(f"expected a square matrix, got shape {mat.shape}")
    i, j = np.triu_indices(mat.shape[0], k=0 if include_diagonal else 1)
    return mat[i, j]


def devectorize(vec: np.ndarray, include_diagonal: bool = False) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    r = n_regions(vec.shape[0], include_diagonal)
    out = np.zeros((r, r))
    i, j = np.triu_indices(r, k=0 if include_diagonal else 1)
    out[i, j] = vec
    out[j, i] = vec
    return out


# ---------------------------------------------------------------------------
# normalization


def normalize(counts: np.ndarray, manifest: dict | None = None) -> tuple[np.ndarray, dict]:
    """``log1p(count) / G``; G is fitted here unless a manifest supplies it.

    When G comes from another split, values above 1 are clipped and counted
    in the returned manifest under ``"clipped"``.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise NormalizationError("counts must be nonnegative")
    logc = np.log1p(counts)
    if manifest is None:
        g = float(logc.max()) if logc.size else 0.0
        if g <= 0:
            raise NormalizationError("all-zero dataset cannot be normalized")
        manifest = {"kind": "log1p_max", "G": g}
        return logc / g, dict(manifest)
    g = float(manifest["G"])
    x = logc / g
    over = int((x > 1).sum())
    out = dict(manifest)
    if over:
        out["clipped"] = over
    return np.minimum(x, 1.0), out


def denormalize(x: np.ndarray, manifest: dict) -> np.ndarray:
    """Inverse of ``normalize`` before integer rounding."""
    if manifest.get("kind", "log1p_max") != "log1p_max":
        raise NormalizationError(f"unknown transform {manifest['kind']!r}")
    return np.expm1(np.asarray(x, dtype=np.float64) * float(manifest["G"]))


# ---------------------------------------------------------------------------
# synthetic generator


def _site_labels(cfg: SyntheticConfig) -> np.ndarray:
    n, s = cfg.n_subjects, cfg.n_sites
    if cfg.imbalance is None:
        return np.arange(n) % s
    rng = stream(cfg.seed, "site")
    props = rng.dirichlet(np.full(s, cfg.imbalance))
    # every site keeps at least one subject
    counts = np.ones(s, dtype=int) + rng.multinomial(n - s, props)
    return rng.permutation(np.repeat(np.arange(s), counts))


def generate_log_domain(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The latent log-domain matrix y, site labels and bio factors u.

    y_i = B + W u_i + rho * M[site_i] + eps_i
    """
    cfg.validate()
    n, d, s, r = cfg.n_subjects, cfg.n_edges, cfg.n_sites, cfg.bio_rank
    template = stream(cfg.seed, "template").uniform(1.0, 6.0, size=d)
    w = stream(cfg.seed, "W").normal(0.0, cfg.bio_scale / math.sqrt(r), size=(d, r))
    m_rng = stream(cfg.seed, "M")
    if s <= d:
        q, _ = np.linalg.qr(m_rng.normal(size=(d, s)))
        site_dirs = q.T
    else:
        g = m_rng.normal(size=(s, d))
        site_dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    u = stream(cfg.seed, "u").normal(size=(n, r))
    eps = stream(cfg.seed, "eps").normal(0.0, cfg.noise_sd, size=(n, d)) if cfg.noise_sd > 0 else np.zeros((n, d))
    site = _site_labels(cfg)
    y = template + u @ w.T + cfg.site_strength * site_dirs[site] + eps
    return y, site, u


def generate(cfg: SyntheticConfig) -> ConnectomeDataset:
    y, site, u = generate_log_domain(cfg)
    counts = np.clip(np.round(np.expm1(y)), 0.0, None)
    x, manifest = normalize(counts)
    manifest["source"] = "synthetic"
    manifest["config"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    # stand-in covariate driven by the first bio factor
    age = np.clip(50.0 + 20.0 * u[:, 0], 2.0, 102.0)
    return ConnectomeDataset(x=x, site=site, norm=manifest, meta={"age": age.round(2).tolist()})


# ---------------------------------------------------------------------------
# ingestion


def _read_matrix(path: Path) -> np.ndarray:
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path.name}: not a numeric CSV matrix ({exc})") from None
    if mat.shape[0] != mat.shape[1]:
        raise FormatError(f"{path.name}: non-square matrix {mat.shape}")
    return mat


def read_metadata(path: Path) -> dict[str, dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or reader.fieldnames[:2] != ["subject_id", "site"]:
            raise IngestionError(f"{path.name}: header must start with subject_id,site")
        return {row["subject_id"]: row for row in reader}


def load_matrix_dir(path, pattern: str = "*.csv", include_diagonal: bool = False,
                    metadata: str = "metadata.csv") -> ConnectomeDataset:
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root} is not a directory")
    files = sorted(p for p in root.glob(pattern) if p.name != metadata)
    if not files:
        raise IngestionError(f"no matrix files matching {pattern!r} in {root}")
    meta_path = root / metadata
    if not meta_path.exists():
        raise IngestionError(f"missing {metadata} in {root}")
    rows = read_metadata(meta_path)

    vecs, sites, ids = [], [], []
    r0 = None
    for f in files:
        sid = f.stem
        if sid not in rows:
            raise IngestionError(f"subject {sid!r} has no row in {metadata}")
        mat = _read_matrix(f)
        if r0 is None:
            r0 = mat.shape[0]
        elif mat.shape[0] != r0:
            raise FormatError(f"{f.name}: {mat.shape[0]} regions, expected {r0}")
        if not np.allclose(mat, mat.T):
            log.warning("%s is not symmetric; using (A + A^T) / 2", f.name)
            mat = 0.5 * (mat + mat.T)
        vecs.append(vectorize(mat, include_diagonal))
        sites.append(rows[sid]["site"])
        ids.append(sid)

    levels = sorted(set(sites))
    site = np.array([levels.index(s) for s in sites])
    covariates = [c for c in next(iter(rows.values())).keys() if c not in ("subject_id", "site")]
    meta = {c: [rows[sid][c] for sid in ids] for c in covariates}
    x, manifest = normalize(np.vstack(vecs))
    manifest.update(source=str(root), include_diagonal=include_diagonal, site_levels=levels)
    return ConnectomeDataset(x=x, site=site, norm=manifest, meta=meta, subject_ids=tuple(ids))


def stratified_split(ds: ConnectomeDataset, train_fraction: float, seed: int) -> tuple[ConnectomeDataset, ConnectomeDataset]:
    """Per-site split: each site contributes round(n_site * fraction) rows to train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = stream(seed, "split")
    train, val = [], []
    for s in range(ds.n_sites):
        idx = rng.permutation(np.flatnonzero(ds.site == s))
        k = int(round(len(idx) * train_fraction))
        train.extend(idx[:k])
        val.extend(idx[k:])
    return ds.subset(np.sort(train)), ds.subset(np.sort(val))


# ---------------------------------------------------------------------------
# binary cache


def save_cache(ds: ConnectomeDataset, path) -> None:
    n, d = ds.x.shape
    manifest = {"norm": ds.norm, "meta": ds.meta, "subject_ids": list(ds.subject_ids)}
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQQ", n, d, ds.n_sites))
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(ds.site.astype("<u4").tobytes())
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))


def load_cache(path) -> ConnectomeDataset:
    buf = Path(path).read_bytes()
    if buf[:5] != CACHE_MAGIC:
        raise IngestionError(f"{path}: not a dataset cache (bad magic)")
    n, d, _s = struct.unpack_from("<QQQ", buf, 5)
    off = 5 + 24
    x = np.frombuffer(buf, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    off += 8 * n * d
    site = np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += 4 * n
    manifest = json.loads(buf[off:].decode("utf-8"))
    return ConnectomeDataset(x=x, site=site, norm=manifest["norm"], meta=manifest["meta"],
                             subject_ids=tuple(manifest["subject_ids"]))
