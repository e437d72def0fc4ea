"""Arch-anneal against loss-anneal, VAE+k-means and PCA+k-means at the true k.

Writes results.csv, per-run bootstrap ARIs and Welch tests to demo_methods/.
Three seeds take about two minutes.

    python demos/05_method_comparison.py
"""

import json
from pathlib import Path

from sitevae import harness

cfg = harness.ExperimentConfig(experiment="class_sweep", seeds=(0, 1, 2), out="demo_methods")
rows, tests = harness.run_class_sweep(cfg)
print(harness.report(cfg.out))
print(json.dumps(tests["summary"], indent=2))
print("per-run logs and checkpoints under", Path(cfg.out).resolve())
