"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The experiment tests run full seeded GA runs and take minutes.
"""

import contextlib
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ACCEPTANCE
from gradcheck import numeric_grad, rel_err

from epiga import autodiff as ad
from epiga.attention import attention_weights, init_head, reinforce
from epiga.autodiff import Tape, backward
from epiga.benchmarks import (
    STALAGMITE_PEAKS,
    bumpy,
    bumpy_expr,
    grid_oracle,
    make_bumpy,
    make_stalagmite,
    stalagmite,
    stalagmite_expr,
)
from epiga.deepigen import DeepiGenConfig, find_best, init_model, training_loss, transcribe
from epiga.experiments import (
    BUMPY_LOCAL_PEAK,
    ExperimentConfig,
    covered_peaks,
    loads_config,
    run_experiment1,
    run_experiment2,
    run_sweep,
)
from epiga.ga import GaConfig, Population, crossover, mutate, run_plain_ga, select, update_population
from epiga.rng import Streams

SEEDS = list(range(10))
PUBLISHED_BUMPY = [((1.393, 0.006), 0.675), ((0.031, 1.441), 0.47), ((1.593, 0.471), 0.365), ((0.475, 1.578), 0.274)]


@contextlib.contextmanager
def criterion(number, title):
    note = {"detail": ""}
    try:
        yield note
    except BaseException:
        ACCEPTANCE.append((number, title, False, note["detail"]))
        raise
    ACCEPTANCE.append((number, title, True, note["detail"]))


def param_grad_errors(params, loss):
    """Relative error of tape gradients against central differences, per parameter."""
    with Tape() as tape:
        live = {k: tape.variable(a, k) for k, a in params.items()}
        out = loss(live)
    grads = backward(tape, out)
    errors = {}
    for name, arr in params.items():
        def f(value, arr=arr):
            saved = arr.copy()
            arr[...] = value
            r = loss(None).value
            arr[...] = saved
            return r

        errors[name] = rel_err(grads[name], numeric_grad(f, arr.copy()))
    return errors


# --------------------------------------------------------------------------


def test_criterion_1_benchmark_fidelity():
    with criterion(1, "benchmark values") as note:
        values = {
            "bumpy(1.393, 0.006)": (bumpy(1.393, 0.006), 0.675),
            "bumpy(0.031, 1.441)": (bumpy(0.031, 1.441), 0.47),
            "stalagmite(0.262, 0.067)": (stalagmite(0.262, 0.067), 0.845),
        }
        top = grid_oracle(make_stalagmite(), 0.001)[0]
        values["stalagmite grid max"] = (top.height, 1.0)
        note["detail"] = ", ".join(f"{k}={v:.4f}" for k, (v, _) in values.items()) + f" at {top.position}"
        for name, (got, want) in values.items():
            assert abs(got - want) <= 0.005, name
        assert max(abs(a - b) for a, b in zip(top.position, (0.067, 0.067))) <= 0.005


def test_criterion_2_peak_tables():
    with criterion(2, "grid oracle recovers the published peak tables") as note:
        start = time.perf_counter()
        # all published BUMPY peaks lie in (0, 2]^2; the full box at this step holds 1e8 points
        bumpy_peaks = grid_oracle(make_bumpy(), 0.001, box=((1e-6, 3.0), (1e-6, 3.0)))
        stal_peaks = grid_oracle(make_stalagmite(), 0.001)
        elapsed = time.perf_counter() - start

        def match(peaks, pos, height):
            return any(
                max(abs(a - b) for a, b in zip(p.position, pos)) <= 0.005 and abs(p.height - height) <= 0.005
                for p in peaks
            )

        missing = [f"{h} at {pos}" for pos, h in PUBLISHED_BUMPY if not match(bumpy_peaks, pos, h)]
        missing += [f"{p.height} at {p.position}" for p in STALAGMITE_PEAKS[1:] if not match(stal_peaks, p.position, 0.845)]
        found = ", ".join(f"{p.height:.4f}@({p.position[0]:.3f},{p.position[1]:.3f})" for p in bumpy_peaks[:4])
        note["detail"] = f"bumpy oracle top: {found}; unmatched: {missing or 'none'}; {elapsed:.0f}s"
        assert not missing
        assert elapsed < 60


def test_criterion_3_gradient_correctness():
    with criterion(3, "tape gradients match central differences") as note:
        rng = np.random.default_rng(0)
        worst = {}
        # (a) benchmark functions at 100 interior points each
        for name, expr, lo, hi in (("bumpy", bumpy_expr, 0.05, 10.0), ("stalagmite", stalagmite_expr, 0.0, 1.0)):
            errs = []
            for point in rng.uniform(lo, hi, (100, 2)):
                with Tape() as tape:
                    p = tape.variable(point, "p")
                    out = expr(ad.take(p, 0), ad.take(p, 1))
                g = backward(tape, out)["p"]
                fd = numeric_grad(lambda q: expr(q[0], q[1]).value, point)
                errs.append(rel_err(g, fd))
            worst[name] = max(errs)
        # (b) attention weights and reinforcement on random small nets
        errs = []
        for seed in range(20):
            r = np.random.default_rng(100 + seed)
            head = init_head(4, 3, 2, hidden=5, rng=r, name="h")
            x, v, w = r.normal(size=4), r.normal(size=3), r.normal(size=3)
            params = {**head.parameters(), "v": v}

            def loss(live):
                vals = v if live is None else live["v"]
                return ad.sum(ad.mul(reinforce(attention_weights(head, x, live), vals), w))

            errs.extend(param_grad_errors(params, loss).values())
        worst["attention"] = max(errs)
        # (c) the full training loss on four chromosomes
        pop = np.random.default_rng(5).integers(0, 2, (4, 8))
        cfg = DeepiGenConfig(d_k=4, n_heads=2, embed=True, d_v=4, head_hidden=3, decoder_hidden=3, value_hidden=3)
        model = init_model(cfg, 8, 2, np.random.default_rng(0))
        stal = make_stalagmite()

        def full(live):
            _, fitness = transcribe(model, pop, stal, live)
            return training_loss(ad.max(fitness, axis=0))

        worst["training_loss"] = max(param_grad_errors(model.parameters(), full).values())
        note["detail"] = "worst relative errors " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
        assert worst["bumpy"] <= 1e-4 and worst["stalagmite"] <= 1e-4
        assert worst["attention"] <= 1e-4
        assert worst["training_loss"] <= 1e-3


def exp1_config():
    cfg = loads_config('{"problem": "bumpy", "seeds": [0]}')
    cfg.seeds = list(SEEDS)
    # stop once the threshold is met; records up to that point are unchanged
    cfg.ga.target_fitness = 0.671
    return cfg


@pytest.fixture(scope="module")
def exp1_results(tmp_path_factory):
    return run_experiment1(exp1_config(), tmp_path_factory.mktemp("exp1"))


def test_criterion_4_experiment1(exp1_results):
    with criterion(4, "experiment 1 reaches the BUMPY global peak from a biased start") as note:
        wins = [r for r in exp1_results if r.fitness >= 0.67]
        gens = [r.generations_to_success for r in wins]
        stuck = sorted({(round(float(r.point[0]), 3), round(float(r.point[1]), 3)) for r in exp1_results if r.fitness < 0.67})
        note["detail"] = (
            f"{len(wins)}/10 seeds reached 0.67 (generations {gens}); "
            f"best fitness per seed {[round(r.fitness, 4) for r in exp1_results]}; others end at {stuck}"
        )
        assert len(wins) >= 8


@pytest.fixture(scope="module")
def exp2_results(tmp_path_factory):
    cfg = loads_config('{"problem": "bumpy", "seeds": [0], "deepigen": {"n_heads": 16, "r_diff": 0.3}}')
    cfg.seeds = list(SEEDS)
    return run_experiment2(cfg, tmp_path_factory.mktemp("exp2"))


def test_criterion_5_twins(exp2_results):
    with criterion(5, "experiment 2 heads cover two BUMPY peaks") as note:
        peaks = make_bumpy().peaks
        hits, first = 0, []
        for res in exp2_results:
            gen = next((r.generation for r in res.records if len(covered_peaks(r.head_points, peaks)) >= 2), None)
            hits += gen is not None
            first.append(gen)
        note["detail"] = f"{hits}/10 seeds; first generation with two peaks per seed {first}"
        assert hits >= 5


def test_criterion_6_constrained_stalagmite(tmp_path):
    with criterion(6, "constrained STALAGMITE finds a 0.845 peak") as note:
        cfg = loads_config(
            '{"problem": "stalagmite", "seeds": [0], "constraint": true, "rho": 0.1,'
            ' "deepigen": {"n_heads": 16, "r_diff": 0.3}, "ga": {"target_fitness": 0.801}}'
        )
        cfg.seeds = list(SEEDS)
        results = run_experiment2(cfg, tmp_path)
        good = 0
        rows = []
        for res in results:
            near = any(max(abs(res.point - np.asarray(p.position))) <= 0.1 for p in STALAGMITE_PEAKS[1:])
            good += res.fitness >= 0.80 and near
            rows.append(f"{res.fitness:.3f}@({res.point[0]:.3f},{res.point[1]:.3f})")
        note["detail"] = f"{good}/10 seeds; winners {rows}"
        assert good >= 8


def test_criterion_7_sweep(tmp_path):
    with criterion(7, "20-config sweep on BUMPY") as note:
        rows, summary = run_sweep({}, 20, problem="bumpy", seed=0, out_dir=tmp_path)
        errors = [r.error for r in rows if r.error]
        note["detail"] = f"success rate {summary['success_rate']:.2f} ({summary['successes']}/20), errors {errors or 'none'}"
        assert len(rows) == 20
        assert summary["success_rate"] >= 0.9


# criterion 8: every listed invariant under 100 generated cases

RUNS = settings(max_examples=100, deadline=None)


@RUNS
@given(seed=st.integers(0, 2**32 - 1), gain=st.floats(0.1, 10.0), scale=st.floats(0.01, 100.0))
def _attention_bounded(seed, gain, scale):
    rng = np.random.default_rng(seed)
    head = init_head(5, 4, 3, hidden=6, gain=gain, rng=rng)
    a = attention_weights(head, rng.normal(size=(7, 5)) * scale).value
    assert np.all(a > 0) and np.all(a < gain)


@RUNS
@given(v=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def _attention_reversible(v):
    v = np.array(v)
    assert np.array_equal(reinforce(np.ones_like(v), v).value, v)
    assert np.all(reinforce(np.zeros_like(v), v).value == 0)


@RUNS
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), p=st.integers(1, 24), r_c=st.floats(0, 1))
def _ga_laws(seed, n, p, r_c):
    rng = np.random.default_rng(seed)
    members = rng.integers(0, 2, (n, p)).astype(np.int8)
    assert np.array_equal(mutate(members, 0.0, rng), members)
    kids = crossover(members, r_c, rng)
    assert kids.shape == members.shape
    padded = members if n % 2 == 0 else np.concatenate([members, members[:1]])
    kids_full = crossover(padded, r_c, np.random.default_rng(seed))
    assert np.array_equal(kids_full.sum(axis=0), padded.sum(axis=0))
    scores = rng.uniform(0, 1, n)
    chosen = select(Population(members), scores, rng)
    assert chosen.shape == members.shape
    assert np.array_equal(chosen[0], members[int(np.argmax(scores))])
    nxt = update_population(mutate(kids, 0.3, rng), chosen)
    assert len(nxt) == n and np.array_equal(nxt.members[0], chosen[0])


@RUNS
@given(
    scores=st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=20),
    bumps=st.lists(st.floats(1e-3, 10.0), min_size=20, max_size=20),
)
def _loss_monotone(scores, bumps):
    s = np.array(scores)
    higher = s + np.array(bumps[: len(s)])
    assert training_loss(higher).value < training_loss(s).value


@RUNS
@given(seed=st.integers(0, 2**32 - 1), n_heads=st.integers(1, 5))
def _pooling_argmax(seed, n_heads):
    rng = np.random.default_rng(seed)
    model = init_model(DeepiGenConfig(d_k=2, n_heads=n_heads, head_hidden=3, decoder_hidden=3), 6, 2, rng)
    pop = rng.integers(0, 2, (5, 6))
    a = find_best(model, pop, make_bumpy())
    b = find_best(model, pop, make_bumpy())
    assert (a.index, a.head) == (b.index, b.head)
    t = a.transcription
    assert a.fitness == t.fitness.max() and t.fitness[a.head] == a.fitness


_BEST_SO_FAR = []


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def _determinism_and_monotone(seed):
    import tempfile
    from pathlib import Path

    cfg = loads_config(
        json.dumps(
            {
                "problem": "bumpy",
                "seeds": [seed],
                "ga": {"n_individuals": 6, "p": 6, "nb_iter": 3},
                "deepigen": {"d_k": 2, "epochs_per_generation": 1, "decoder_hidden": 3, "head_hidden": 3},
                "bias": {"steps": 1},
            }
        )
    )
    with tempfile.TemporaryDirectory() as tmp:
        a = run_experiment1(cfg, Path(tmp) / "a")
        run_experiment1(cfg, Path(tmp) / "b")
        left = (Path(tmp) / "a" / f"exp1_seed{seed}.csv").read_bytes()
        right = (Path(tmp) / "b" / f"exp1_seed{seed}.csv").read_bytes()
    assert left == right
    best = [r.best_fitness for r in a[0].records]
    assert all(y >= x for x, y in zip(best, best[1:]))
    _BEST_SO_FAR.append(len(best))


def test_criterion_8_invariants():
    suites = {
        "attention boundedness": _attention_bounded,
        "attention reversibility": _attention_reversible,
        "GA operator laws": _ga_laws,
        "loss monotonicity": _loss_monotone,
        "pooling argmax stability": _pooling_argmax,
        "seed determinism and best-so-far monotonicity": _determinism_and_monotone,
    }
    with criterion(8, "invariant suites under property-based testing") as note:
        failed = []
        for name, prop in suites.items():
            try:
                prop()
            except Exception as err:
                failed.append(f"{name}: {type(err).__name__}")
        note["detail"] = f"{len(suites) - len(failed)}/{len(suites)} suites held at 100 cases each; failed: {failed or 'none'}"
        assert not failed


def biased_plain_population(cfg: GaConfig, problem, target, radius, rng):
    """Chromosomes whose fixed binary decoding lands within ``radius`` of ``target``."""
    bits = cfg.p // 2
    top = 2**bits - 1
    lo = np.maximum(np.asarray(target) - radius, problem.lower)
    hi = np.minimum(np.asarray(target) + radius, problem.upper)
    pts = rng.uniform(lo, hi, (cfg.n_individuals, 2))
    ints = np.round((pts - problem.lower) / (problem.upper - problem.lower) * top).astype(np.int64)
    shifts = np.arange(bits - 1, -1, -1)
    return ((ints[:, :, None] >> shifts) & 1).reshape(cfg.n_individuals, cfg.p).astype(np.int8)


def test_criterion_9_baseline_contrast(exp1_results):
    with criterion(9, "plain GA baseline from the same biased region (reported, not gated)") as note:
        problem = make_bumpy()
        plain = []
        for seed in SEEDS:
            cfg = GaConfig(seed=seed, target_fitness=0.671)
            streams = Streams(seed)
            pop = biased_plain_population(cfg, problem, BUMPY_LOCAL_PEAK, 0.3, streams["plain_ga.bias"])
            plain.append(run_plain_ga(cfg, problem, streams, population=pop).score >= 0.67)
        epi = sum(r.fitness >= 0.67 for r in exp1_results)
        holds = sum(plain) <= epi
        note["detail"] = f"plain GA {sum(plain)}/10, EpiGeAl {epi}/10; plain no better than EpiGeAl: {'yes' if holds else 'no'}"
        assert len(plain) == len(SEEDS)
