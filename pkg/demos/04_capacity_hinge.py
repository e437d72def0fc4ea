"""Hinge objective with manual capacities: how the discrete code responds to C_c.

Runs the capacity sweep through the harness (resumable, results in
demo_capacity/).  Pass --quick for 30 epochs instead of 150.

    python demos/04_capacity_hinge.py [--quick]
"""

import sys
from dataclasses import replace

from sitevae import harness

cfg = harness.ExperimentConfig(experiment="capacity_sweep", seeds=(0, 1), out="demo_capacity")
if "--quick" in sys.argv:
    cfg = replace(cfg, train=replace(cfg.train, epochs=30, anneal_iters=43))
harness.run_capacity_sweep(cfg)
print(harness.report(cfg.out))
