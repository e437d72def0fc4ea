"""Experiment sweeps over seeds: capacity, class count and anneal length.

Each grid point x seed is an independent job.  A job builds its dataset,
trains or fits one method, scores the assignments against the true sites and
returns one ``ResultRow``.  Rows are appended to ``results.csv`` as jobs
finish, in job order, so an interrupted sweep resumes where it stopped.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import kmeans, pca_fit, pca_kmeans_pipeline
from .data import ConnectomeDataset, SyntheticConfig, generate, load_cache, load_matrix_dir
from .metrics import ari, bootstrap_metric, effective_classes, homogeneity, welch_ttest
from .model import ConfigError, JointVAE, ModelConfig, load_checkpoint, save_checkpoint
from .objectives import ObjectiveSpec
from .trainer import TrainConfig, extract_latents, train

SCHEMA_VERSION = 1
EXPERIMENTS = ("capacity_sweep", "class_sweep", "anneal_sweep", "single_run")
METHODS = ("jointvae_arch", "jointvae_loss", "jointvae_hinge", "vae_kmeans", "pca_kmeans")
ANNEAL_FRACTIONS = tuple(i / 7 for i in range(1, 8))

# desk-scale model used unless the config overrides it
DESK_MODEL = dict(hidden_dims=(256, 128, 64, 32), z_c_dim=4, k_classes=8)
DESK_SYNTHETIC = SyntheticConfig(n_subjects=1000, n_edges=300, n_sites=8, site_strength=6.0)


@dataclass
class ResultRow:
    experiment: str
    method: str
    k_classes: int
    capacity_c: float
    anneal_iters: int
    seed: int
    ari: float
    homogeneity: float
    boot_mean: float
    boot_sd: float
    boot_ci_low: float
    boot_ci_high: float
    discrete_kl_final: float
    effective_classes: int

    @property
    def key(self) -> tuple:
        return _job_key(self.method, self.k_classes, self.capacity_c, self.anneal_iters, self.seed)


RESULT_FIELDS = tuple(f.name for f in fields(ResultRow))


@dataclass
class ExperimentConfig:
    experiment: str = "class_sweep"
    synthetic: SyntheticConfig = DESK_SYNTHETIC
    data_path: str | None = None      # ingest directory or .lfds cache; overrides ``synthetic``
    model: dict = field(default_factory=lambda: dict(DESK_MODEL))
    train: TrainConfig = TrainConfig(epochs=150, batch_size=100, anneal_iters=214)
    beta: float = 1e-3                # annealed objectives and the plain VAE baseline
    hinge_beta: float = 100.0
    capacities: tuple = (50.0, 500.0, 2000.0)
    k_grid: tuple | None = None       # None -> the number of true sites
    methods: tuple = ("jointvae_arch", "jointvae_loss", "vae_kmeans", "pca_kmeans")
    anneal_fractions: tuple = ANNEAL_FRACTIONS
    seeds: tuple = tuple(range(10))
    bootstrap_resamples: int = 1000
    pca_dim: int | None = None        # None -> z_c_dim
    out: str = "results"
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "synthetic" in d:
                d["synthetic"] = SyntheticConfig(**d["synthetic"])
            if "train" in d:
                d["train"] = TrainConfig(**d["train"])
            if "model" in d:
                d["model"] = {**DESK_MODEL, **d["model"]}
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("capacities", "k_grid", "methods", "anneal_fractions", "seeds"):
            if d.get(name) is not None:
                d[name] = tuple(d[name])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["model"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["model"].items()}
        return d

    def with_paper_scale(self) -> "ExperimentConfig":
        t = self.train
        return replace(self, train=TrainConfig.paper_scale(
            beta1=t.beta1, beta2=t.beta2, adam_eps=t.adam_eps, weight_decay=t.weight_decay,
            grad_clip=t.grad_clip, log_every=t.log_every, checkpoint_every=t.checkpoint_every))

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        for name in ("capacities", "methods", "anneal_fractions", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must be non-empty")
        if self.k_grid is not None and (len(self.k_grid) == 0 or min(self.k_grid) < 2):
            raise ConfigError("k_grid must be non-empty with every k >= 2")
        if any(not 0 < f <= 1 for f in self.anneal_fractions):
            raise ConfigError("anneal fractions must be in (0, 1]")
        if self.jobs < 1 or self.bootstrap_resamples < 2:
            raise ConfigError("jobs must be >= 1 and bootstrap_resamples >= 2")
        if self.beta < 0 or self.hinge_beta < 0:
            raise ConfigError("beta must be >= 0")
        try:
            self.synthetic.validate()
            self.train.validate(max(self.train.batch_size, 1))
            ModelConfig(input_dim=1, **self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# datasets


def load_dataset(cfg: ExperimentConfig, seed: int) -> ConnectomeDataset:
    """The dataset for one seed: fixed input files, or a fresh synthetic draw per seed."""
    if cfg.data_path is None:
        return generate(replace(cfg.synthetic, seed=seed))
    path = Path(cfg.data_path)
    if path.is_file():
        return load_cache(path)
    return load_matrix_dir(path)


def n_true_sites(cfg: ExperimentConfig) -> int:
    if cfg.data_path is None:
        return cfg.synthetic.n_sites
    return load_dataset(cfg, 0).n_sites


# ---------------------------------------------------------------------------
# jobs


@dataclass(frozen=True)
class Job:
    method: str
    k_classes: int
    capacity_c: float
    anneal_iters: int
    seed: int

    @property
    def key(self) -> tuple:
        return _job_key(self.method, self.k_classes, self.capacity_c, self.anneal_iters, self.seed)

    @property
    def run_id(self) -> str:
        cap = "na" if math.isnan(self.capacity_c) else f"{self.capacity_c:g}"
        return f"{self.method}_k{self.k_classes}_C{cap}_T{self.anneal_iters}_s{self.seed}"


def _job_key(method, k, cap, anneal, seed) -> tuple:
    cap = None if cap is None or (isinstance(cap, float) and math.isnan(cap)) else float(cap)
    return (method, int(k), cap, int(anneal), int(seed))


def _fit_jointvae(cfg: ExperimentConfig, job: Job, ds: ConnectomeDataset, out: Path):
    if job.method == "jointvae_hinge":
        spec = ObjectiveSpec.hinge(job.capacity_c, job.k_classes, beta=cfg.hinge_beta)
    elif job.method == "jointvae_arch":
        spec = ObjectiveSpec("arch_anneal", beta=cfg.beta)
    elif job.method == "jointvae_loss":
        spec = ObjectiveSpec("loss_anneal", beta=cfg.beta)
    else:  # vae_kmeans
        spec = ObjectiveSpec("plain", beta_c=cfg.beta, beta_d=cfg.beta)
    k = 0 if job.method == "vae_kmeans" else job.k_classes
    mcfg = ModelConfig(input_dim=ds.d, **{**cfg.model, "k_classes": k, "anneal_mode": spec.model_anneal_mode})
    model = JointVAE(mcfg, seed=job.seed)
    tcfg = replace(cfg.train, seed=job.seed, anneal_iters=job.anneal_iters)
    res = train(model, ds, spec, tcfg, log_path=out / "logs" / f"{job.run_id}.csv")
    save_checkpoint(out / "checkpoints" / f"{job.run_id}.lfck", model, res.iterations)
    mu, assign = extract_latents(model, ds)
    if assign is None:
        assign = kmeans(mu, job.k_classes, seed=job.seed).assignments
    kl_d = res.final().get("kl_d", float("nan")) if k else float("nan")
    return assign, kl_d


def run_job(cfg: ExperimentConfig, job: Job) -> tuple[ResultRow, np.ndarray]:
    """Train/fit one method on one seed and score it; also saves the bootstrap ARIs."""
    out = Path(cfg.out)
    for sub in ("logs", "checkpoints", "bootstrap"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    ds = load_dataset(cfg, job.seed)
    if job.method == "pca_kmeans":
        p = min(cfg.pca_dim or cfg.model["z_c_dim"], ds.n, ds.d)
        assign, kl_d = pca_kmeans_pipeline(ds.x, p, job.k_classes, job.seed), float("nan")
    else:
        assign, kl_d = _fit_jointvae(cfg, job, ds, out)
    boot = bootstrap_metric(ds.site, assign, ari, cfg.bootstrap_resamples, seed=job.seed)
    np.save(out / "bootstrap" / f"{job.run_id}.npy", boot.values)
    row = ResultRow(
        experiment=cfg.experiment, method=job.method, k_classes=job.k_classes,
        capacity_c=job.capacity_c, anneal_iters=job.anneal_iters, seed=job.seed,
        ari=boot.point, homogeneity=homogeneity(ds.site, assign),
        boot_mean=boot.mean, boot_sd=boot.sd, boot_ci_low=boot.ci_low, boot_ci_high=boot.ci_high,
        discrete_kl_final=kl_d, effective_classes=effective_classes(assign),
    )
    return row, boot.values


def _run_job_quiet(args):
    cfg, job = args
    return run_job(cfg, job)[0]


# ---------------------------------------------------------------------------
# results file


def read_results(path) -> list[ResultRow]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema_version={SCHEMA_VERSION}":
            raise ValueError(f"{path}: unsupported results header {first!r}")
        rows = []
        for rec in csv.DictReader(fh):
            vals = {}
            for f in fields(ResultRow):
                raw = rec[f.name]
                vals[f.name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
            rows.append(ResultRow(**vals))
    return rows


def append_result(path, row: ResultRow) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        if new:
            fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_FIELDS)
        w.writerow([_fmt(getattr(row, f)) for f in RESULT_FIELDS])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def run_jobs(cfg: ExperimentConfig, jobs: list[Job], verbose: bool = True) -> list[ResultRow]:
    """Run the jobs not already in ``results.csv``; returns every row for these jobs."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    path = out / "results.csv"
    done = {r.key: r for r in read_results(path)}
    todo = [j for j in jobs if j.key not in done]
    if verbose and len(todo) < len(jobs):
        print(f"resuming: {len(jobs) - len(todo)} of {len(jobs)} jobs already done", file=sys.stderr)
    if cfg.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for job, row in zip(todo, pool.map(_run_job_quiet, [(cfg, j) for j in todo])):
                append_result(path, row)
                done[row.key] = row
                _progress(verbose, job, row)
    else:
        for job in todo:
            row = run_job(cfg, job)[0]
            append_result(path, row)
            done[row.key] = row
            _progress(verbose, job, row)
    return [done[j.key] for j in jobs]


def _progress(verbose, job, row):
    if verbose:
        print(f"{job.run_id}: ari {row.ari:.4f} classes {row.effective_classes}", file=sys.stderr)


# ---------------------------------------------------------------------------
# sweeps


def _k_grid(cfg: ExperimentConfig) -> tuple:
    return cfg.k_grid or (n_true_sites(cfg),)


def capacity_jobs(cfg: ExperimentConfig) -> list[Job]:
    k = cfg.model["k_classes"]
    return [Job("jointvae_hinge", k, float(c), cfg.train.anneal_iters, s)
            for s in cfg.seeds for c in cfg.capacities]


def class_jobs(cfg: ExperimentConfig) -> list[Job]:
    return [Job(m, k, float("nan"), cfg.train.anneal_iters, s)
            for s in cfg.seeds for k in _k_grid(cfg) for m in cfg.methods]


def anneal_grid(cfg: ExperimentConfig, n: int) -> list[int]:
    total = cfg.train.total_iters(n)
    return [max(1, int(round(f * total))) for f in cfg.anneal_fractions]


def anneal_jobs(cfg: ExperimentConfig) -> list[Job]:
    n = cfg.synthetic.n_subjects if cfg.data_path is None else load_dataset(cfg, 0).n
    k = cfg.k_grid[0] if cfg.k_grid else n_true_sites(cfg)
    return [Job("jointvae_arch", k, float("nan"), t, s) for s in cfg.seeds for t in anneal_grid(cfg, n)]


def run_capacity_sweep(cfg: ExperimentConfig, verbose: bool = True) -> list[ResultRow]:
    return run_jobs(cfg, capacity_jobs(cfg), verbose)


def run_anneal_sweep(cfg: ExperimentConfig, verbose: bool = True) -> list[ResultRow]:
    return run_jobs(cfg, anneal_jobs(cfg), verbose)


def run_class_sweep(cfg: ExperimentConfig, verbose: bool = True) -> tuple[list[ResultRow], dict]:
    rows = run_jobs(cfg, class_jobs(cfg), verbose)
    tests = welch_tests(cfg, rows)
    (Path(cfg.out) / "ttests.json").write_text(json.dumps(tests, indent=2))
    return rows, tests


def run_single(cfg: ExperimentConfig, verbose: bool = True) -> list[ResultRow]:
    k = cfg.k_grid[0] if cfg.k_grid else n_true_sites(cfg)
    return run_jobs(cfg, [Job("jointvae_arch", k, float("nan"), cfg.train.anneal_iters, s)
                          for s in cfg.seeds], verbose)


def run_experiment(cfg: ExperimentConfig, verbose: bool = True):
    return {
        "capacity_sweep": run_capacity_sweep,
        "class_sweep": run_class_sweep,
        "anneal_sweep": run_anneal_sweep,
        "single_run": run_single,
    }[cfg.experiment](cfg, verbose)


def welch_tests(cfg: ExperimentConfig, rows: list[ResultRow], reference: str = "jointvae_arch") -> dict:
    """Welch tests of the reference method's bootstrap ARIs against each other method at k = S.

    One test per seed; the summary keeps the median t and p over seeds.  A
    test is only emitted when both bootstrap files exist.
    """
    k = n_true_sites(cfg)
    boot_dir = Path(cfg.out) / "bootstrap"
    per_seed = []
    at_k = [r for r in rows if r.k_classes == k]
    for r in at_k:
        if r.method == reference:
            continue
        ref = Job(reference, k, float("nan"), r.anneal_iters, r.seed)
        other = Job(r.method, k, float("nan"), r.anneal_iters, r.seed)
        fa, fb = boot_dir / f"{ref.run_id}.npy", boot_dir / f"{other.run_id}.npy"
        if not (fa.exists() and fb.exists()):
            continue
        t = welch_ttest(np.load(fa), np.load(fb))
        per_seed.append(dict(method=r.method, seed=r.seed, **t.to_dict()))
    summary = {}
    for m in sorted({d["method"] for d in per_seed}):
        ts = [d for d in per_seed if d["method"] == m]
        summary[m] = dict(n_seeds=len(ts), median_t=float(np.median([d["t"] for d in ts])),
                          median_p=float(np.median([d["p"] for d in ts])),
                          frac_p_below_0_05=float(np.mean([d["p"] < 0.05 for d in ts])))
    return dict(reference=reference, k=k, per_seed=per_seed, summary=summary)


# ---------------------------------------------------------------------------
# latents and reports


def export_latents(checkpoint, dataset: ConnectomeDataset, out_dir) -> tuple[Path, Path]:
    """Write ``latents.csv`` (posterior means, assignment, true site) and ``latents_2d.csv``."""
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found")
    model, _, _ = load_checkpoint(checkpoint)
    if model.config.input_dim != dataset.d:
        raise ConfigError(f"checkpoint expects D={model.config.input_dim}, dataset has D={dataset.d}")
    mu, assign = extract_latents(model, dataset)
    if assign is None:
        assign = np.full(dataset.n, -1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full, flat = out / "latents.csv", out / "latents_2d.csv"
    with open(full, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id"] + [f"z{j}" for j in range(mu.shape[1])] + ["assignment", "true_site"])
        for sid, z, a, s in zip(dataset.subject_ids, mu, assign, dataset.site):
            w.writerow([sid] + [repr(float(v)) for v in z] + [int(a), int(s)])
    p = min(2, mu.shape[1], dataset.n)
    proj = pca_fit(mu, p).transform(mu) if p >= 1 else np.zeros((dataset.n, 0))
    proj = np.hstack([proj, np.zeros((dataset.n, 2 - proj.shape[1]))])
    with open(flat, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "dim1", "dim2", "assignment", "true_site"])
        for sid, z, a, s in zip(dataset.subject_ids, proj, assign, dataset.site):
            w.writerow([sid, repr(float(z[0])), repr(float(z[1])), int(a), int(s)])
    return full, flat


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Median over seeds for every (experiment, method, k, C_c, anneal) group."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        cap = None if math.isnan(r.capacity_c) else r.capacity_c
        groups.setdefault((r.experiment, r.method, r.k_classes, cap, r.anneal_iters), []).append(r)
    out = []
    for (exp, method, k, cap, t0), rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        out.append(dict(
            experiment=exp, method=method, k_classes=k, capacity_c=cap, anneal_iters=t0, n_seeds=len(rs),
            median_ari=float(np.median([r.ari for r in rs])),
            median_homogeneity=float(np.median([r.homogeneity for r in rs])),
            median_effective_classes=float(np.median([r.effective_classes for r in rs])),
        ))
    return out


def report(out_dir) -> str:
    out = Path(out_dir)
    path = out / "results.csv"
    if not path.exists():
        raise FileNotFoundError(f"no results.csv in {out}")
    lines = [f"{'experiment':<15}{'method':<16}{'k':>4}{'C_c':>8}{'anneal':>8}{'seeds':>6}"
             f"{'ARI':>9}{'homog':>9}{'classes':>9}"]
    for s in summarize(read_results(path)):
        cap = "-" if s["capacity_c"] is None else f"{s['capacity_c']:g}"
        lines.append(f"{s['experiment']:<15}{s['method']:<16}{s['k_classes']:>4}{cap:>8}{s['anneal_iters']:>8}"
                     f"{s['n_seeds']:>6}{s['median_ari']:>9.4f}{s['median_homogeneity']:>9.4f}"
                     f"{s['median_effective_classes']:>9.1f}")
    tests = out / "ttests.json"
    if tests.exists():
        t = json.loads(tests.read_text())
        lines.append("")
        lines.append(f"Welch tests vs {t['reference']} at k={t['k']} (median over seeds):")
        for m, s in t["summary"].items():
            lines.append(f"  {m:<16} t={s['median_t']:+.3f} p={s['median_p']:.3g} "
                         f"(p<0.05 in {s['frac_p_below_0_05']:.0%} of {s['n_seeds']} seeds)")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))
