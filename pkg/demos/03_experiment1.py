"""Experiment 1 at small scale: a single head started near the BUMPY local peak.

The population is pretrained so every chromosome decodes close to (0.031, 1.441),
then EpiGeAl runs and we follow the best value per generation.
"""

import sys

import numpy as np

from epiga.benchmarks import make_bumpy
from epiga.deepigen import DeepiGenConfig, init_model
from epiga.ga import GaConfig, biased_init, decoded_points, init_population, run_epigeal
from epiga.rng import Streams
from epiga.svg import render_population_svg

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
problem = make_bumpy()
cfg = GaConfig(n_individuals=128, p=16, r_mut=0.1, r_c=0.7, nb_iter=40, seed=seed)
dcfg = DeepiGenConfig(d_k=32, embed=False, n_heads=1)

streams = Streams(seed)
population = init_population(cfg, streams["init"])
model = init_model(dcfg, cfg.p, problem.dim, streams["network"])
biased_init(model, population, (0.031, 1.441), 200, problem)
start = decoded_points(model, population.members, problem)[0]
print("initial cloud centre", start.mean(axis=0).round(3), "spread", start.std(axis=0).round(3))

out = run_epigeal(cfg, dcfg, problem, streams, model=model, population=population)
for r in out.records[::5]:
    print(f"generation {r.generation:3d} best {r.best_fitness:.4f} at {np.round(r.best_point, 3)}")
print("final best", round(out.score, 4), "at", np.round(out.point, 3))

render_population_svg(out.records, problem, "experiment1.svg")
print("wrote experiment1.svg")
