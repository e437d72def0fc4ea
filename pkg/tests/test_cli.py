import numpy as np
import pytest

from sitevae.cli import main
from sitevae.data import load_cache

TINY_YAML = """
synthetic: {n_subjects: 60, n_edges: 15, n_sites: 3, site_strength: 10.0}
model: {hidden_dims: [12, 10, 8, 6], z_c_dim: 2, k_classes: 3}
train: {epochs: 2, batch_size: 20, anneal_iters: 4}
seeds: [0]
bootstrap_resamples: 20
capacities: [5.0]
anneal_fractions: [1.0]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY_YAML)
    return str(p)


def test_generate(cfg, tmp_path):
    out = tmp_path / "d.lfds"
    assert main(["generate", "--config", cfg, "--seed", "4", "--out", str(out)]) == 0
    ds = load_cache(out)
    assert ds.x.shape == (60, 15)


def test_ingest(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "mats"
    src.mkdir()
    lines = ["subject_id,site"]
    for i in range(3):
        m = rng.integers(0, 9, size=(4, 4)).astype(float)
        np.savetxt(src / f"s{i}.csv", m + m.T, delimiter=",")
        lines.append(f"s{i},{i % 2}")
    (src / "metadata.csv").write_text("\n".join(lines))
    assert main(["ingest", str(src), "--out", str(tmp_path / "c.lfds")]) == 0
    assert load_cache(tmp_path / "c.lfds").x.shape == (3, 6)


@pytest.mark.parametrize("cmd", ["sweep-classes", "sweep-capacity", "sweep-anneal"])
def test_sweeps(cmd, cfg, tmp_path, capsys):
    out = tmp_path / "res"
    assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    assert (out / "results.csv").exists()
    assert "ARI" in capsys.readouterr().out
    assert main(["report", "--out", str(out)]) == 0


def test_train_and_export(cfg, tmp_path, capsys):
    assert main(["train", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "run")]) == 0
    ckpt = capsys.readouterr().out.strip().splitlines()[-1]
    assert main(["export-latents", "--config", cfg, "--seed", "0", "--checkpoint", ckpt,
                 "--out", str(tmp_path / "lat")]) == 0
    assert (tmp_path / "lat" / "latents_2d.csv").exists()


def test_exit_codes(cfg, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: {k_classes: 1}\n")
    assert main(["sweep-classes", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["sweep-classes", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["ingest", str(tmp_path / "nowhere")]) == 4
    assert main(["train", "--config", cfg, "--method", "jointvae_hinge", "--out", str(tmp_path / "h")]) == 2
    assert main(["export-latents", "--config", cfg, "--checkpoint", str(tmp_path / "no.lfck"),
                 "--out", str(tmp_path / "l")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit(tmp_path):
    p = tmp_path / "hot.yaml"
    p.write_text(TINY_YAML.replace("anneal_iters: 4}", "anneal_iters: 4, lr: 1.0e+6, grad_clip: null}"))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == 3
