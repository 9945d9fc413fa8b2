import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epiga.benchmarks import make_bumpy, make_stalagmite
from epiga.deepigen import DeepiGenConfig, init_model
from epiga.ga import (
    GaConfig,
    Population,
    biased_init,
    crossover,
    crossover_pair,
    decoded_points,
    init_population,
    mutate,
    plain_decode,
    run_epigeal,
    run_plain_ga,
    select,
    update_population,
)
from epiga.rng import Streams, substream

BUMPY = make_bumpy()
bits = arrays(np.int8, st.tuples(st.integers(1, 20).map(lambda n: 2 * n), st.integers(2, 16)), elements=st.integers(0, 1))


def test_init_population():
    cfg = GaConfig(n_individuals=128, p=16)
    pop = init_population(cfg, substream(1, "init"))
    assert pop.members.shape == (128, 16)
    assert set(np.unique(pop.members)) <= {0, 1}
    again = init_population(cfg, substream(1, "init"))
    np.testing.assert_array_equal(pop.members, again.members)
    big = init_population(GaConfig(n_individuals=10_000, p=16), substream(2, "init"))
    assert abs(big.members.mean() - 0.5) < 0.02


def test_select_degenerate_roulette():
    members = np.array([[1, 1], [0, 0], [0, 1]], dtype=np.int8)
    out = select(members, [1.0, 0.0, 0.0], np.random.default_rng(0))
    assert out.shape == (3, 2)
    assert np.all(out == [1, 1])


def test_select_uniform_scores_frequency():
    n = 10
    members = np.arange(n, dtype=np.int8)[:, None]
    rng = np.random.default_rng(4)
    counts = np.zeros(n)
    draws = 0
    while draws < 10_000:
        out = select(members, np.ones(n), rng)[1:, 0]
        np.add.at(counts, out, 1)
        draws += len(out)
    expected = draws / n
    sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - expected) <= 3 * sigma)


def test_select_all_zero_scores_falls_back_to_uniform():
    out = select(np.eye(4, dtype=np.int8), np.zeros(4), np.random.default_rng(0))
    assert out.shape == (4, 4)


def test_crossover_definition():
    a, b = crossover_pair([0, 0, 0, 0], [1, 1, 1, 1], 2)
    np.testing.assert_array_equal(a, [0, 0, 1, 1])
    np.testing.assert_array_equal(b, [1, 1, 0, 0])


@settings(max_examples=100, deadline=None)
@given(parents=bits, seed=st.integers(0, 2**32 - 1))
def test_crossover_laws(parents, seed):
    unchanged = crossover(parents, 0.0, np.random.default_rng(seed))
    np.testing.assert_array_equal(unchanged, parents)
    children = crossover(parents, 1.0, np.random.default_rng(seed))
    assert children.shape == parents.shape
    for i in range(0, len(parents), 2):
        pair_in = np.sort(parents[i : i + 2], axis=0)
        pair_out = np.sort(children[i : i + 2], axis=0)
        np.testing.assert_array_equal(pair_in, pair_out)


def test_crossover_odd_count_keeps_size():
    out = crossover(np.zeros((5, 6), dtype=np.int8), 1.0, np.random.default_rng(0))
    assert out.shape == (5, 6)


@settings(max_examples=100, deadline=None)
@given(children=bits, seed=st.integers(0, 2**32 - 1))
def test_mutation_identity_and_complement(children, seed):
    np.testing.assert_array_equal(mutate(children, 0.0, np.random.default_rng(seed)), children)
    np.testing.assert_array_equal(mutate(children, 1.0, np.random.default_rng(seed)), 1 - children)


def test_mutation_rate():
    kids = np.zeros((10_000, 16), dtype=np.int8)
    flips = mutate(kids, 0.1, np.random.default_rng(0)).sum(axis=1)
    assert abs(flips.mean() - 1.6) <= 0.1


@settings(max_examples=100, deadline=None)
@given(pop=bits, seed=st.integers(0, 2**32 - 1))
def test_update_population_keeps_size_and_elite(pop, seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(len(pop))
    survivors = select(pop, scores, rng)
    nxt = update_population(mutate(crossover(survivors, 0.7, rng), 0.2, rng), survivors)
    assert len(nxt) == len(pop)
    np.testing.assert_array_equal(nxt.members[0], pop[int(np.argmax(scores))])
    same = update_population(mutate(crossover(survivors, 0.0, rng), 0.0, rng), survivors)
    np.testing.assert_array_equal(same.members, survivors)


def test_selection_only_changes_multiset_in_distribution():
    # r_mut = r_c = 0, uniform scores: each member's expected share stays 1/n
    n = 8
    pop = np.arange(n, dtype=np.int8)[:, None]
    rng = np.random.default_rng(7)
    counts = np.zeros(n)
    trials = 2000
    for _ in range(trials):
        survivors = select(pop, np.ones(n), rng)
        nxt = update_population(mutate(crossover(survivors, 0.0, rng), 0.0, rng), survivors)
        np.add.at(counts, nxt.members[1:, 0], 1)
    share = counts / counts.sum()
    assert np.all(np.abs(share - 1 / n) < 0.01)


def test_plain_decode_examples():
    stal = make_stalagmite()
    np.testing.assert_allclose(plain_decode(np.zeros(16, dtype=np.int8), stal), [[0, 0]])
    np.testing.assert_allclose(plain_decode(np.ones(16, dtype=np.int8), stal), [[1, 1]])
    chrom = np.array([1] + [0] * 15, dtype=np.int8)
    x, y = plain_decode(chrom, BUMPY)[0]
    assert x == pytest.approx(128 / 255 * 10, abs=1e-5)
    assert y == pytest.approx(1e-6)


def small_run(seed=3, nb_iter=4, **kw):
    cfg = GaConfig(n_individuals=16, p=8, nb_iter=nb_iter, seed=seed)
    dcfg = DeepiGenConfig(d_k=4, epochs_per_generation=2, head_hidden=8, decoder_hidden=8, **kw)
    return run_epigeal(cfg, dcfg, BUMPY)


def test_run_epigeal_single_generation():
    out = small_run(nb_iter=1)
    assert len(out.records) == 1


def test_run_epigeal_records():
    out = small_run(n_heads=3, embed=True, d_v=4, r_diff=0.5)
    best = [r.best_fitness for r in out.records]
    assert best == sorted(best)
    assert out.score == best[-1]
    assert all(r.points.shape == (3, 16, 2) for r in out.records)
    restored = out.snapshot.restore()
    from epiga.deepigen import evaluate_population

    t = evaluate_population(restored, out.best.chromosome[None, :], BUMPY)[0]
    assert t.points[out.best.head].tobytes() == out.point.tobytes()


def test_run_epigeal_deterministic():
    a, b = small_run(), small_run()
    assert [(r.best_fitness, r.mean_fitness, r.best_point.tobytes()) for r in a.records] == [
        (r.best_fitness, r.mean_fitness, r.best_point.tobytes()) for r in b.records
    ]


def test_target_stops_early():
    cfg = GaConfig(n_individuals=32, p=16, nb_iter=50, seed=0, target_fitness=0.05)
    out = run_plain_ga(cfg, BUMPY)
    assert len(out.records) < 50
    assert out.score >= 0.05 - 1e-3


def test_plain_ga_monotone_and_independent_streams():
    cfg = GaConfig(n_individuals=32, p=16, nb_iter=20, seed=5)
    streams = Streams(5)
    before = streams["selection"].random()
    out = run_plain_ga(cfg, BUMPY, streams)
    best = [r.best_fitness for r in out.records]
    assert best == sorted(best)
    # the baseline draws from its own streams, leaving the epigenetic ones untouched
    fresh = Streams(5)
    fresh["selection"].random()
    assert fresh["selection"].random() == streams["selection"].random()


def test_biased_init():
    cfg = GaConfig(n_individuals=128, p=16, seed=0)
    streams = Streams(0)
    pop = init_population(cfg, streams["init"])
    model = init_model(DeepiGenConfig(), 16, 2, streams["network"])
    untouched = {k: v.copy() for k, v in model.parameters().items()}
    biased_init(model, pop, (0.031, 1.441), 0, BUMPY)
    assert all(untouched[k].tobytes() == v.tobytes() for k, v in model.parameters().items())
    biased_init(model, pop, (0.031, 1.441), 200, BUMPY)
    pts = decoded_points(model, pop.members, BUMPY)[0]
    near = np.max(np.abs(pts - [0.031, 1.441]), axis=1) <= 0.3
    assert near.mean() >= 0.9
    with pytest.raises(ValueError):
        biased_init(model, pop, (11.0, 1.0), 1, BUMPY)


def test_biased_init_deterministic():
    def run():
        streams = Streams(4)
        pop = init_population(GaConfig(n_individuals=16, p=16), streams["init"])
        model = init_model(DeepiGenConfig(d_k=4), 16, 2, streams["network"])
        biased_init(model, pop, (0.031, 1.441), 5, BUMPY)
        return model.parameters()

    a, b = run(), run()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
