import json

import numpy as np
import pytest

from camosearch.checkpoint import pool_to_list, read_checkpoint, trace_to_dict
from camosearch.metrics import CameraTransform
from camosearch.oracles import ConstantOracle, DetectionOracle, PlantedWeaknessOracle
from camosearch.search import (
    Candidate,
    OracleFailure,
    ResumeMismatchError,
    Scorer,
    SearchConfig,
    SolidPool,
    clip,
    directed_delta,
    global_explore,
    inner_search,
    mutate_scatter,
    pattern_digest,
    random_delta,
    random_pattern,
    run_search,
)
from camosearch.textures import ErConfig, Pattern

SINGLE = (CameraTransform(5.0, 0.0),)

SMALL_CFG = SearchConfig(init_count=10, pool_size=4, start_count=2,
                         mutants_per_step=3, inner_steps=2, outer_loops=2,
                         global_mutants=3, seed=0)
SMALL_ER = ErConfig(pattern_exponent=2, enlarge_exponent=5, repeat_exponent=4)


def make_candidate(pattern, score, cid=0):
    return Candidate(pattern=pattern, score=score, id=cid,
                     content_hash=pattern_digest(pattern))


def planted(seed=0, exponent=2, **kw):
    return PlantedWeaknessOracle(seed=seed, pattern_exponent=exponent, **kw)


class CountingOracle(DetectionOracle):
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def evaluate(self, query):
        self.calls += 1
        return self.inner.evaluate(query)


class FailingOracle(DetectionOracle):
    """Succeeds for the first ``succeed`` queries, then raises."""

    def __init__(self, inner, succeed):
        self.inner = inner
        self.remaining = succeed

    def evaluate(self, query):
        if self.remaining <= 0:
            raise ConnectionError("simulated oracle outage")
        self.remaining -= 1
        return self.inner.evaluate(query)


# --- config -------------------------------------------------------------------


def test_config_validation():
    SearchConfig()  # defaults are valid
    with pytest.raises(ValueError):
        SearchConfig(start_count=20, pool_size=20)  # need start < pool
    with pytest.raises(ValueError):
        SearchConfig(pool_size=200)  # pool must fit in init set
    with pytest.raises(ValueError):
        SearchConfig(inner_radius=12.0, global_radius=5.0)
    with pytest.raises(ValueError):
        SearchConfig(mutants_per_step=0)
    with pytest.raises(ValueError):
        SearchConfig(parallelism=0)
    SearchConfig(global_mutants=0)  # global phase may be disabled


def test_planned_queries_formula():
    cfg = SearchConfig()  # standard defaults
    assert cfg.planned_queries() == 100 + 5 * (5 * 3 * 20 + 20 * 20) == 3600
    assert SMALL_CFG.planned_queries() == 10 + 2 * (2 * 2 * 3 + 4 * 3)


# --- primitives ---------------------------------------------------------------


def test_random_pattern_determinism():
    a = random_pattern(np.random.default_rng(123), 1)
    b = random_pattern(np.random.default_rng(123), 1)
    c = random_pattern(np.random.default_rng(124), 1)
    assert a == b
    assert a != c
    assert a.pixels.shape == (2, 2, 3)


def test_random_pattern_uniform_mean():
    rng = np.random.default_rng(0)
    channels = np.concatenate([
        random_pattern(rng, 9).pixels.ravel() for _ in range(2)
    ]).astype(np.float64)
    assert channels.size > 1_000_000
    assert abs(channels.mean() - 127.5) < 1.0


def test_clip_examples():
    assert clip(255.7) == 255
    assert clip(-3.2) == 0
    assert clip(4.5) == 5
    assert clip(4.4) == 4
    out = clip(np.array([[-1.0, 0.5, 300.0]]))
    assert out.tolist() == [[0, 1, 255]]


def test_mutate_scatter_zero_direction_is_identity():
    rng = np.random.default_rng(0)
    pat = random_pattern(rng, 2)
    cand = make_candidate(pat, 0.5)
    delta = np.zeros((4, 4, 3), dtype=np.int8)
    assert mutate_scatter(cand, delta, 5.0, rng) == pat


def test_mutate_scatter_step_bound_and_clamp():
    pat = Pattern(np.full((4, 4, 3), 253, dtype=np.uint8))
    cand = make_candidate(pat, 0.5)
    delta = np.ones((4, 4, 3), dtype=np.int8)
    rng = np.random.default_rng(1)
    for _ in range(20):
        out = mutate_scatter(cand, delta, 5.0, rng)
        assert out.pixels.min() >= 253
    down = mutate_scatter(make_candidate(Pattern(np.full((4, 4, 3), 2, dtype=np.uint8)), 0.5),
                          -delta, 5.0, rng)
    assert down.pixels.max() <= 2


def test_mutate_scatter_expected_step():
    # mean of round(100 + 5u) over u~U[0,1) is exactly 102.5
    pat = Pattern(np.full((8, 8, 3), 100, dtype=np.uint8))
    cand = make_candidate(pat, 0.5)
    delta = np.ones((8, 8, 3), dtype=np.int8)
    rng = np.random.default_rng(2)
    total = np.zeros((), dtype=np.float64)
    draws = 400
    for _ in range(draws):
        total += mutate_scatter(cand, delta, 5.0, rng).pixels.astype(np.float64).mean()
    assert total / draws == pytest.approx(102.5, abs=0.05)


def test_mutate_scatter_rejects_bad_args():
    rng = np.random.default_rng(0)
    cand = make_candidate(random_pattern(rng, 2), 0.5)
    with pytest.raises(ValueError):
        mutate_scatter(cand, np.ones((2, 2, 3), dtype=np.int8), 5.0, rng)
    with pytest.raises(ValueError):
        mutate_scatter(cand, np.ones((4, 4, 3), dtype=np.int8), 0.0, rng)


def test_directed_delta():
    rng = np.random.default_rng(3)
    pat = random_pattern(rng, 2)
    same = directed_delta(make_candidate(pat, 0.1), make_candidate(pat, 0.1, 1))
    assert np.all(same == 0)

    up = Pattern(np.clip(pat.pixels.astype(int) + 1, 0, 255).astype(np.uint8))
    ones = directed_delta(make_candidate(pat, 0.1),
                          make_candidate(up, 0.1, 1))
    clipped = pat.pixels == 255  # +1 saturates there, so the sign is 0
    assert np.all(ones[~clipped] == 1)
    assert np.all(ones[clipped] == 0)

    mixed = random_pattern(rng, 2)
    delta = directed_delta(make_candidate(pat, 0.1), make_candidate(mixed, 0.1, 1))
    expected = np.sign(mixed.pixels.astype(int) - pat.pixels.astype(int))
    assert np.array_equal(delta, expected)

    with pytest.raises(ValueError):
        directed_delta(make_candidate(pat, 0.1),
                       make_candidate(random_pattern(rng, 3), 0.1, 1))


def test_random_delta_support_and_balance():
    a = random_delta(np.random.default_rng(7), 2)
    b = random_delta(np.random.default_rng(7), 2)
    assert np.array_equal(a, b)
    big = random_delta(np.random.default_rng(8), 8)
    values = np.unique(big)
    assert set(values.tolist()) == {-1, 1}
    frac_pos = float(np.mean(big == 1))
    assert abs(frac_pos - 0.5) < 0.01
    assert big.size >= 100_000


# --- pool ---------------------------------------------------------------------


def test_pool_orders_and_dedups():
    rng = np.random.default_rng(4)
    pool = SolidPool(capacity=3)
    pats = [random_pattern(rng, 1) for _ in range(4)]
    pool.update([
        make_candidate(pats[0], 0.5, 0),
        make_candidate(pats[1], 0.2, 1),
        make_candidate(pats[2], 0.5, 2),
        make_candidate(pats[3], 0.9, 3),
    ])
    assert [c.id for c in pool.members] == [1, 0, 2]  # ascending score, ties by id
    assert pool.best_score == 0.2

    # same content under a new id must not displace the original
    pool.update([make_candidate(pats[1], 0.2, 9)])
    assert [c.id for c in pool.members] == [1, 0, 2]

    with pytest.raises(ValueError):
        pool.update([Candidate(pattern=pats[0], score=None, id=10,
                               content_hash=pattern_digest(pats[0]))])


# --- scorer -------------------------------------------------------------------


def test_scorer_caches_duplicates():
    oracle = CountingOracle(ConstantOracle(0.3))
    scorer = Scorer(oracle, SINGLE)
    rng = np.random.default_rng(5)
    pat = random_pattern(rng, 1)
    other = random_pattern(rng, 1)
    cands = scorer.score_batch([pat, pat, other], "init")
    assert oracle.calls == 2
    assert scorer.trace.query_count == 2
    assert scorer.trace.cache_hits == 1
    assert [c.id for c in cands] == [0, 1, 2]
    # a later batch with known content costs nothing
    scorer.score_batch([other], "scatter")
    assert oracle.calls == 2
    assert scorer.trace.cache_hits == 2


def test_scorer_wraps_failures_with_hash():
    oracle = FailingOracle(ConstantOracle(0.3), succeed=1)
    scorer = Scorer(oracle, SINGLE)
    rng = np.random.default_rng(6)
    pats = [random_pattern(rng, 1) for _ in range(3)]
    with pytest.raises(OracleFailure) as info:
        scorer.score_batch(pats, "init")
    assert info.value.candidate_hash == pattern_digest(pats[1])
    assert scorer.trace.query_count == 1  # the successful query is kept


# --- inner search -------------------------------------------------------------


def test_inner_search_flat_objective_keeps_start():
    oracle = ConstantOracle(0.5)
    rng = np.random.default_rng(0)
    start_pat = random_pattern(rng, 2)
    start = make_candidate(start_pat, 0.5)
    cfg = SearchConfig(init_count=4, pool_size=3, start_count=1,
                       mutants_per_step=4, inner_steps=3, seed=0)
    final, trace = inner_search(start, cfg, oracle, np.random.default_rng(1),
                                transforms=SINGLE)
    assert final.score == 0.5
    assert final.pattern == start_pat
    assert trace.query_count == 12


def test_inner_search_two_point_adoption():
    cfg = SearchConfig(init_count=4, pool_size=3, start_count=1,
                       mutants_per_step=1, inner_steps=1, seed=0)
    target = Pattern(np.full((4, 4, 3), 200, dtype=np.uint8))
    oracle = planted(exponent=2, offset_scale=0.0, target=target)

    def score_of(pattern):
        from camosearch.oracles import OracleQuery
        return oracle.evaluate(
            OracleQuery(transforms=SINGLE, pattern=pattern)).scores[0]

    for seed in range(20):
        rng = np.random.default_rng(seed)
        start_pat = random_pattern(rng, 2)
        start = make_candidate(start_pat, score_of(start_pat))

        # enumerate what the search will see by replaying the RNG stream
        replay = np.random.default_rng(1000 + seed)
        delta = random_delta(replay, 2)
        mutant = mutate_scatter(start, delta, cfg.inner_radius, replay)
        expected = mutant if score_of(mutant) < start.score else start_pat

        final, _ = inner_search(start, cfg, oracle,
                                np.random.default_rng(1000 + seed),
                                transforms=SINGLE)
        assert final.pattern == expected


def test_inner_search_elitism():
    oracle = planted(seed=2, exponent=2)
    from camosearch.oracles import OracleQuery
    cfg = SearchConfig(init_count=4, pool_size=3, start_count=1,
                       mutants_per_step=5, inner_steps=3, seed=0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pat = random_pattern(rng, 2)
        score = float(np.mean(
            oracle.evaluate(OracleQuery(transforms=SINGLE, pattern=pat)).scores))
        start = make_candidate(pat, score)
        final, _ = inner_search(start, cfg, oracle, rng, transforms=SINGLE)
        assert final.score <= start.score


def test_inner_search_requires_scored_start():
    cfg = SMALL_CFG
    pat = random_pattern(np.random.default_rng(0), 2)
    unscored = Candidate(pattern=pat, score=None, id=0,
                         content_hash=pattern_digest(pat))
    with pytest.raises(ValueError):
        inner_search(unscored, cfg, ConstantOracle(0.5), np.random.default_rng(0))


# --- global exploration ---------------------------------------------------------


def seeded_pool(oracle, capacity=4, count=6, exponent=2, seed=0):
    from camosearch.oracles import OracleQuery
    rng = np.random.default_rng(seed)
    pool = SolidPool(capacity=capacity)
    cands = []
    for i in range(count):
        pat = random_pattern(rng, exponent)
        score = float(np.mean(
            oracle.evaluate(OracleQuery(transforms=SINGLE, pattern=pat)).scores))
        cands.append(make_candidate(pat, score, i))
    pool.update(cands)
    return pool, rng


def test_global_explore_disabled_leaves_pool():
    oracle = planted(seed=1)
    pool, rng = seeded_pool(oracle)
    before = [c.content_hash for c in pool.members]
    cfg = SearchConfig(init_count=6, pool_size=4, start_count=1, global_mutants=0, seed=0)
    counting = CountingOracle(oracle)
    out = global_explore(pool, cfg, counting, rng, transforms=SINGLE)
    assert [c.content_hash for c in out.members] == before
    assert counting.calls == 0


def test_global_explore_budget_and_improvement():
    oracle = planted(seed=3)
    pool, rng = seeded_pool(oracle)
    best_before = pool.best_score
    cfg = SearchConfig(init_count=6, pool_size=4, start_count=1, global_mutants=5, seed=0)
    counting = CountingOracle(oracle)
    out = global_explore(pool, cfg, counting, rng, transforms=SINGLE)
    assert counting.calls == 4 * 5
    assert out.best_score <= best_before


# --- full run -------------------------------------------------------------------


def test_run_search_budget_exactness():
    counting = CountingOracle(ConstantOracle(0.5))
    pool, trace = run_search(SMALL_CFG, SMALL_ER, counting, transforms=SINGLE)
    planned = SMALL_CFG.planned_queries()
    assert trace.query_count + trace.cache_hits == planned
    assert counting.calls == trace.query_count
    assert [r.index for r in trace.records] == list(range(trace.query_count))


def test_run_search_flat_objective_is_stationary():
    pool, trace = run_search(SMALL_CFG, SMALL_ER, ConstantOracle(0.5), transforms=SINGLE)
    assert pool.best_score == 0.5
    assert all(b.score == 0.5 for b in trace.pool_best)
    assert len(trace.pool_best) == 1 + 2 * SMALL_CFG.outer_loops


def test_run_search_pool_discipline_and_bounds():
    oracle = planted(seed=4)
    pool, trace = run_search(SMALL_CFG, SMALL_ER, oracle, transforms=SINGLE)
    scores = [c.score for c in pool.members]
    assert scores == sorted(scores)
    assert len(pool.members) <= SMALL_CFG.pool_size
    hashes = [c.content_hash for c in pool.members]
    assert len(set(hashes)) == len(hashes)
    for c in pool.members:
        assert c.pattern.pixels.dtype == np.uint8  # bounds are structural


def test_run_search_pool_best_monotone():
    for seed in range(5):
        cfg = SearchConfig(init_count=10, pool_size=4, start_count=2,
                           mutants_per_step=3, inner_steps=2, outer_loops=3,
                           global_mutants=2, seed=seed)
        oracle = planted(seed=seed)
        _, trace = run_search(cfg, SMALL_ER, oracle, transforms=SINGLE)
        bests = [b.score for b in trace.pool_best]
        assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(bests, bests[1:]))


def test_run_search_improves_on_planted_objective():
    oracle = planted(seed=5)
    cfg = SearchConfig(init_count=20, pool_size=6, start_count=2,
                       mutants_per_step=6, inner_steps=3, outer_loops=3,
                       global_mutants=4, seed=7)
    _, trace = run_search(cfg, SMALL_ER, oracle, transforms=SINGLE)
    assert trace.pool_best[-1].score < trace.pool_best[0].score


def test_run_search_deterministic_across_parallelism():
    results = []
    for workers in (1, 4):
        cfg = SearchConfig(init_count=10, pool_size=4, start_count=2,
                           mutants_per_step=3, inner_steps=2, outer_loops=2,
                           global_mutants=3, seed=3, parallelism=workers)
        oracle = planted(seed=6)
        pool, trace = run_search(cfg, SMALL_ER, oracle)
        results.append((json.dumps(pool_to_list(pool)),
                        json.dumps(trace_to_dict(trace))))
    assert results[0] == results[1]


def test_run_search_failure_writes_checkpoint(tmp_path):
    oracle = FailingOracle(planted(seed=8), succeed=15)
    path = tmp_path / "ckpt.json"
    with pytest.raises(OracleFailure) as info:
        run_search(SMALL_CFG, SMALL_ER, oracle, transforms=SINGLE, checkpoint_path=path)
    assert info.value.checkpoint_path == str(path)
    assert path.exists()
    saved = read_checkpoint(path)
    assert saved.trace.query_count == 15
    assert saved.config == SMALL_CFG


def test_run_search_resume_matches_uninterrupted(tmp_path):
    uninterrupted_pool, uninterrupted_trace = run_search(
        SMALL_CFG, SMALL_ER, planted(seed=9), transforms=SINGLE)

    path = tmp_path / "ckpt.json"
    with pytest.raises(OracleFailure):
        run_search(SMALL_CFG, SMALL_ER, FailingOracle(planted(seed=9), succeed=21),
                   transforms=SINGLE, checkpoint_path=path)
    saved = read_checkpoint(path)
    resumed_pool, resumed_trace = run_search(
        saved.config, saved.er, planted(seed=9), transforms=SINGLE,
        replay=saved.replay_records)

    assert json.dumps(pool_to_list(resumed_pool)) == json.dumps(pool_to_list(uninterrupted_pool))
    assert json.dumps(trace_to_dict(resumed_trace)) == json.dumps(trace_to_dict(uninterrupted_trace))


def test_resume_with_wrong_seed_is_detected():
    _, trace = run_search(SMALL_CFG, SMALL_ER, planted(seed=9), transforms=SINGLE)
    other = SearchConfig(**{**SMALL_CFG.__dict__, "seed": 12345})
    with pytest.raises(ResumeMismatchError):
        run_search(other, SMALL_ER, planted(seed=9), transforms=SINGLE,
                   replay=trace.records[:20])
