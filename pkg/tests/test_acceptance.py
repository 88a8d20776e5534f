"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary at the end of
the session lists every criterion, including ones whose check crashed.
"""

import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from acceptance_log import report
from pipeline import write_config
from rlminer.agent import Agent, AgentTrainConfig, CurriculumStage, train_agent
from rlminer.agent.curriculum import PAPER_CURRICULUM, sample_seed_rules, scaled_curriculum
from rlminer.agent.network import NetworkShape, ValueNetwork
from rlminer.agent.training import train_on_kg
from rlminer.cli import main
from rlminer.embedding import EmbedTrainConfig, EmbeddingModel, rho, train_transe
from rlminer.inference import (EvalSplit, SCORE_CAP, filtered_rank, link_prediction, noisy_or,
                               rank_queries, value_quality_correlation)
from rlminer.kg import KnowledgeGraph
from rlminer.rules import Rule, evaluate
from rlminer.search import SearchConfig, mine, mine_lengths
from rlminer.synthetic import generate_planted_kg, planted_benchmark, random_kg, toy_kg

pytestmark = pytest.mark.acceptance


# -- shared training on the planted graph -------------------------------------------

EMBED = EmbedTrainConfig(dim=50, eta=6.0, epochs=200)
AGENT = dict(learning_rate=1e-2)
CURRICULUM_BUDGET = (300, 300, 300, 1000)        # last stage >= the 1000 compared episodes
SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def planted():
    kg, rules = generate_planted_kg(planted_benchmark(dropout=0.1, noise=0.1), 0)
    model = train_transe(kg, EMBED)
    seeds = sample_seed_rules(kg, model, 1000, np.random.default_rng(0))
    return kg, rules, model, seeds


@pytest.fixture(scope="module")
def trained(planted):
    """Curriculum and stage-3-only agents for every seed, with equal episode totals."""
    kg, _, model, seeds = planted
    total = sum(CURRICULUM_BUDGET)
    out = {}
    for seed in SEEDS:
        cfg = AgentTrainConfig(seed=seed, **AGENT)
        cur, cur_log = train_on_kg(kg, model, scaled_curriculum(CURRICULUM_BUDGET), cfg, seeds)
        flat, flat_log = train_on_kg(kg, model, [PAPER_CURRICULUM[3].with_episodes(total)], cfg, seeds)
        out[seed] = (cur, cur_log, flat, flat_log)
    return out


# -- 1 ------------------------------------------------------------------------------

def test_01_statistics_match_oracle():
    started = time.perf_counter()
    mismatches = checked = 0
    for seed in range(5):
        kg = random_kg(25, 3, 200, seed)
        vocab = kg.predicate_vocabulary()
        bodies = [(p,) for p in vocab] + list(itertools.product(vocab, repeat=2))
        for head in kg.original_predicates():
            for body in bodies:
                st_ = evaluate(kg, Rule(head, body))
                supp, n_body, conf, hc, pca = oracles.stats(kg, head, body)
                checked += 1
                if (st_.supp, st_.body_count, st_.conf, st_.hc, st_.pca_conf) != (supp, n_body, conf, hc, pca):
                    mismatches += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 30
    report(1, ok, f"{checked} rules over 5 graphs, {mismatches} mismatches, {elapsed:.1f}s (limit 30s)")
    assert ok


# -- 2 ------------------------------------------------------------------------------

def test_02_search_complete_without_pruning():
    kg, _ = toy_kg()
    model = EmbeddingModel(np.zeros((1, 4)), np.random.default_rng(0).normal(size=(len(kg.predicates), 4)), 3.0)
    net = Agent(ValueNetwork(NetworkShape(kg.num_predicates + 2, 8, 8), seed=0), kg.predicate_vocabulary())
    started = time.perf_counter()
    differing = []
    total = 0
    for head in kg.original_predicates():
        cfg = SearchConfig(head=head, length=3, min_value=0.0)
        got = {m.rule.body for m in mine(kg, cfg, net.values, model)}
        want = set(oracles.enumerate_rules(kg, head, 2, cfg.min_conf, cfg.min_hc))
        total += len(want)
        if got != want:
            differing.append(kg.predicate_name(head))
    elapsed = time.perf_counter() - started
    ok = not differing and elapsed < 60
    report(2, ok, f"{total} rules over {len(kg.original_predicates())} heads, "
                  f"differing heads {differing or 'none'}, {elapsed:.1f}s (limit 60s)")
    assert ok


# -- 3 ------------------------------------------------------------------------------

def test_03_planted_rules_recovered(planted, trained):
    kg, rules, model, _ = planted
    agent = trained[0][0]
    budget = 300.0
    per_head = budget / len(rules)
    started = time.perf_counter()
    found = {}
    for r in rules:
        # every length up to 4 (three body atoms) for this head, in its share of the budget
        cfg = SearchConfig(head=r.head, length=4, time_limit=per_head)
        res = mine_lengths(kg, cfg, agent.values, model)
        found[r] = next((m for m in res if m.rule == r), None)
    elapsed = time.perf_counter() - started
    recovered = [r for r, m in found.items() if m is not None and m.stats.conf >= 0.8]
    ok = len(recovered) == len(rules) and elapsed <= budget
    confs = ", ".join(f"{m.stats.conf:.2f}" if m else "missing" for m in found.values())
    report(3, ok, f"{len(recovered)}/{len(rules)} recovered (conf {confs}), mining took {elapsed:.1f}s "
                  f"of {budget:.0f}s")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_04_rho_analytics():
    eta = 7.25
    # head vector 0, body vector d: distance exactly d
    def score(d):
        m = EmbeddingModel(np.zeros((1, 1)), np.array([[0.0], [d]]), eta)
        return rho(m, Rule(0, (2,)))

    at_margin = score(eta)
    sweep = [score(d) for d in np.linspace(0, 3 * eta, 200)]
    decreasing = all(a > b for a, b in zip(sweep, sweep[1:]))
    rng = np.random.default_rng(0)
    permutation_exact = True
    for _ in range(200):
        m = EmbeddingModel(np.zeros((1, 8)), rng.normal(size=(5, 8)), eta)
        body = tuple(rng.integers(0, 10, size=int(rng.integers(2, 6))).tolist())
        ref = rho(m, Rule(0, body))
        permutation_exact &= all(rho(m, Rule(0, p)) == ref for p in itertools.permutations(body))
    ok = abs(at_margin - 0.5) <= 1e-12 and decreasing and permutation_exact
    report(4, ok, f"rho(d=eta)-0.5 = {at_margin - 0.5:.1e}, strictly decreasing: {decreasing}, "
                  f"permutation invariant: {permutation_exact}")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def test_05_gradient_check():
    worst = 0.0
    for instance in range(20):
        rng = np.random.default_rng(100 + instance)
        shape = NetworkShape(vocab_size=8, token_dim=4, hidden=3, layers=1 + instance % 2)
        net = ValueNetwork(shape, seed=instance, dtype=np.float64)
        for p in net.params.values():
            p += rng.normal(0, 0.3, p.shape)
        tokens = rng.integers(0, 8, size=(4, int(rng.integers(3, 7))))
        weights = rng.normal(size=4)
        _, cache = net.forward(tokens, keep_cache=True)
        grads = net.backward(cache, weights)
        for name, param in net.params.items():
            num = oracles.numeric_grad(lambda: float(weights @ net.forward(tokens)), param)
            err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(grads[name]) + np.linalg.norm(num), 1e-12)
            worst = max(worst, err)
    ok = worst < 1e-4
    report(5, ok, f"worst relative error {worst:.2e} over 20 instances (limit 1e-4)")
    assert ok


# -- 6 ------------------------------------------------------------------------------

def test_06_td_matches_value_iteration():
    vocab, heads, length, gamma = [0, 1], [0, 1], 2, 0.9
    table = {(h, a, b): 0.1 + 0.8 * ((h * 4 + a * 2 + b) * 37 % 11) / 10
             for h in heads for a in vocab for b in vocab}
    reward_fn = lambda rule: table[(rule.head,) + rule.body]
    exact = oracles.toy_mdp_values(vocab, heads, length, reward_fn, gamma)
    updates = 8000
    cfg = AgentTrainConfig(gamma=gamma, token_dim=8, hidden=16, batch_size=32, learning_rate=3e-3)
    seeds = [Rule(h, b) for h in heads for b in itertools.product(vocab, repeat=length)]
    agent, log = train_agent([CurriculumStage({length: 1.0}, 0.5, updates)], cfg, reward_fn=reward_fn,
                             vocabulary=vocab, heads=heads, seeds=seeds)
    states = sorted(exact, key=lambda s: (s.head, s.body))
    err = np.abs(agent.values(states) - np.array([exact[s] for s in states]))
    ok = err.max() <= 0.05 and len(log.records) <= 20_000
    report(6, ok, f"max |V - V*| = {err.max():.4f} over {len(states)} states after {len(log.records)} updates "
                  f"(limit 0.05, 20000)")
    assert ok


# -- 7 ------------------------------------------------------------------------------

def test_07_curriculum_not_worse(trained):
    wins = []
    details = []
    for seed, (_, cur_log, _, flat_log) in trained.items():
        cur = cur_log.rewards()[-1000:].mean()
        flat = flat_log.rewards()[-1000:].mean()
        wins.append(cur >= flat)
        details.append(f"seed {seed}: {cur:.3f} vs {flat:.3f}")
    ok = sum(wins) >= 2
    report(7, ok, f"mean reward of last 1000 stage-3 episodes, curriculum vs none: {'; '.join(details)}")
    assert ok


# -- 8 ------------------------------------------------------------------------------

def test_08_value_quality_correlation(planted, trained):
    kg, _, _, _ = planted
    agent = trained[0][0]
    r, values, _ = value_quality_correlation(kg, agent.values, length=(3, 4), sample_size=2000, rng=0)
    ok = r > 0.3 and len(values) >= 2000
    report(8, ok, f"Pearson r = {r:.3f} over {len(values)} states from length-3 and length-4 searches (need > 0.3)")
    assert ok


# -- 9 ------------------------------------------------------------------------------

def test_09_noisy_or():
    failures = []

    @settings(max_examples=1000, database=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=15), st.randoms(use_true_random=False),
           st.floats(0, 1))
    def check(scores, rnd, extra):
        cd = noisy_or(scores)
        shuffled = list(scores)
        rnd.shuffle(shuffled)
        if noisy_or(shuffled) != cd:
            failures.append(("permutation", scores))
        if noisy_or(scores + [extra]) < cd:
            failures.append(("monotone", scores, extra))
        if not min(max(scores), SCORE_CAP) <= cd < 1:
            failures.append(("bounds", scores))

    check()
    exact = noisy_or([0.5, 0.5]) == 0.75
    ok = exact and not failures
    report(9, ok, f"cd(0.5, 0.5) = {noisy_or([0.5, 0.5])!r}; 1000 property cases, {len(failures)} violations")
    assert ok


# -- 10 -----------------------------------------------------------------------------

def test_10_ranking_hand_scenarios():
    outcomes = []
    # A: four entities, a tie with one competitor and a filtered true answer: rank 1.5
    a = rank_queries([(0.6, {0: 0.6, 1: 0.9, 2: 0.6}, 0, {0, 1})], 4)
    outcomes.append(("tie", a.mrr == 1 / 1.5 and a.hits10 == 1.0))
    # B: nothing fires for a query over 4 entities: rank (4 + 1) / 2
    b = rank_queries([(0.0, {}, 3, {3})], 4)
    outcomes.append(("no-fire", b.mrr == 1 / 2.5 and filtered_rank(0.0, {}, 3, 4) == 2.5))
    # C: end to end on a 4-entity graph, two held-out facts, both directions
    kg = KnowledgeGraph("abcd", ["p", "q", "h"], [(0, 0, 1), (1, 2, 2), (0, 0, 3), (3, 2, 2), (0, 4, 1)])
    split = EvalSplit(kg, frozenset({(0, 4, 2), (1, 4, 3)}), 0.3, 0)
    c = link_prediction(split, [(Rule(4, (0, 2)), 0.8), (Rule(4, (0,)), 0.9)])
    # ranks 2, 1, 2.5, 3
    mrr = (1 / 2 + 1 + 1 / 2.5 + 1 / 3) / 4
    outcomes.append(("graph", abs(c.mrr - mrr) <= 1e-15 and c.hits10 == 1.0 and c.queries == 4))
    # D: Hits@10 boundary with 12 entities: average rank 10.5 is a miss
    better = {e: 0.9 for e in range(1, 10)}
    d = rank_queries([(0.5, {**better, 10: 0.5, 0: 0.5}, 0, ())], 12)
    outcomes.append(("hits-boundary", d.hits10 == 0.0 and d.mrr == 1 / 10.5))
    ok = all(flag for _, flag in outcomes)
    report(10, ok, ", ".join(f"{name}: {'ok' if flag else 'wrong'}" for name, flag in outcomes))
    assert ok


# -- 11 -----------------------------------------------------------------------------

def test_11_pipeline_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    outs = [tmp_path / "first", tmp_path / "second"]
    codes = [main(["run", "--config", str(cfg), "--out", str(o), "--seed", "3"]) for o in outs]
    names = ["rules.txt", "rules.jsonl", "predictions.tsv", "metrics.txt", "metrics.json", "seeds.txt",
             "agent.bin", "embedding.bin"]
    names += sorted(str(p.relative_to(outs[0])) for p in (outs[0] / "rules").iterdir())
    different = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    nonempty = (outs[0] / "rules.txt").stat().st_size > 0
    ok = codes == [0, 0] and not different and nonempty
    report(11, ok, f"{len(names)} files compared, differing: {different or 'none'}")
    assert ok
