"""Experiment 2 at small scale: sixteen heads with diffusion on BUMPY.

Each head decodes the same chromosome differently. The diffusion term,
switched on at random generations, pushes the heads' phenotypes apart.
"""

import numpy as np

from epiga.benchmarks import make_bumpy
from epiga.deepigen import DeepiGenConfig
from epiga.experiments import covered_peaks, peak_report
from epiga.ga import GaConfig, run_epigeal

problem = make_bumpy()
cfg = GaConfig(n_individuals=64, nb_iter=25, seed=1)
dcfg = DeepiGenConfig(n_heads=16, r_diff=0.3, epochs_per_generation=10)
out = run_epigeal(cfg, dcfg, problem)

for r in out.records[::5]:
    n = len(covered_peaks(r.head_points, problem.peaks))
    print(f"generation {r.generation:3d} best {r.best_fitness:.4f} diffusion {int(r.diffusion)} peaks covered {n}")

for row in peak_report(out.records[-1], problem.peaks):
    peak = row["peak"]["position"] if row["peak"] else None
    print(f"head {row['head']:2d} -> {np.round(row['point'], 3)} fitness {row['fitness']:.3f} nearest peak {peak}")
