"""Train a small model through the CLI entry point and export its latent space.

latents.csv holds posterior means, discrete assignments and true sites;
latents_2d.csv is a 2-D PCA projection for plotting.

    python demos/06_export_latents.py
"""

import csv
from pathlib import Path

from sitevae.cli import main

main(["generate", "--seed", "3", "--out", "demo_latents/data.lfds"])
main(["train", "--data", "demo_latents/data.lfds", "--seed", "3", "--out", "demo_latents/run"])
ckpt = next(Path("demo_latents/run/checkpoints").glob("*.lfck"))
main(["export-latents", "--checkpoint", str(ckpt), "--data", "demo_latents/data.lfds",
      "--out", "demo_latents/latents"])

with open("demo_latents/latents/latents_2d.csv") as fh:
    rows = list(csv.DictReader(fh))
print(f"{len(rows)} subjects; first three:")
for r in rows[:3]:
    print(r)
