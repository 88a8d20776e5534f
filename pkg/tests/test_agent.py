import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sstats

import oracles
from rlminer.agent.curriculum import (PAPER_CURRICULUM, CurriculumError, CurriculumStage,
                                      curriculum_init, sample_seed_rules, scaled_curriculum)
from rlminer.agent.mdp import (MASK, Action, InvalidAction, ReplayMemory, State, Transition,
                               reward, successor_tokens, transition, valid_actions)
from rlminer.agent.network import RMSprop
from rlminer.agent.training import (Agent, AgentTrainConfig, TrainingLog, epsilon_at,
                                    epsilon_greedy, run_episode, td_targets, td_update,
                                    train_agent)
from rlminer.embedding import EmbeddingModel, rho_batch
from rlminer.rules import Rule

VOCAB = [0, 1, 2, 3]


def small_agent(seed=0, **kw):
    cfg = AgentTrainConfig(token_dim=4, hidden=5, seed=seed, **kw)
    return Agent.create(VOCAB, cfg), cfg


# -- decision process ----------------------------------------------------------

def test_transition_fills_slot_and_rejects_filled():
    s = State.masked(0, 3)
    t = transition(s, Action(1, 2))
    assert t.body == (MASK, 2, MASK) and not t.terminal
    with pytest.raises(InvalidAction):
        transition(t, Action(1, 3))
    with pytest.raises(InvalidAction):
        transition(t, Action(5, 0))


def test_reward_only_on_completion():
    fn = lambda rule: 0.25 + rule.body[0]
    assert reward(State(0, (MASK, MASK)), Action(1, 2), fn) == 0.0
    assert reward(State(0, (3, MASK)), Action(1, 2), fn) == 3.25


def test_valid_actions_order_and_count():
    s = State(0, (MASK, 1, MASK))
    acts = valid_actions(s, [3, 1, 0])
    assert acts == [Action(0, 0), Action(0, 1), Action(0, 3), Action(2, 0), Action(2, 1), Action(2, 3)]
    assert valid_actions(State(0, (1, 2)), VOCAB) == []


@given(st.integers(1, 4), st.integers(0, 3), st.data())
def test_any_action_sequence_reaches_terminal_in_length_steps(length, head, data):
    s = State.masked(head, length)
    steps = 0
    while not s.terminal:
        acts = valid_actions(s, VOCAB)
        s = transition(s, data.draw(st.sampled_from(acts)))
        steps += 1
    assert steps == length and s.rule() == Rule(head, s.body)


def test_tokens_layout():
    assert State(2, (MASK, 1)).tokens(4) == (2, 4, 5, 1)


def test_successor_tokens_match_transitions():
    states = [State(0, (MASK, 1)), State(1, (MASK, MASK))]
    seqs, owner = successor_tokens(states, VOCAB, 4)
    expected = [transition(s, a).tokens(4) for k, s in enumerate(states) for a in valid_actions(s, VOCAB)]
    assert seqs == expected
    assert owner.tolist() == [0] * 4 + [1] * 8


def test_replay_memory_is_fifo_and_bounded():
    mem = ReplayMemory(3)
    items = [Transition(State(0, (i,)), Action(0, i), State(0, (i,)), 0.0) for i in range(5)]
    for t in items:
        mem.push(t)
    assert len(mem) == 3 and list(mem) == items[2:]
    batch = mem.sample(10, np.random.default_rng(0))
    assert sorted(batch, key=lambda t: t.action.predicate) == items[2:]
    with pytest.raises(ValueError):
        ReplayMemory(0)


# -- exploration ------------------------------------------------------------------

def test_epsilon_schedule_endpoints():
    cfg = AgentTrainConfig()
    assert epsilon_at(0, 100, cfg) == 0.95
    assert epsilon_at(99, 100, cfg) == pytest.approx(0.05)
    eps = [epsilon_at(i, 100, cfg) for i in range(100)]
    assert all(a > b for a, b in zip(eps, eps[1:]))


def test_greedy_picks_best_successor_lowest_on_ties():
    agent, _ = small_agent()
    s = State(0, (MASK, MASK))
    # flat network: every successor ties, so the first action in order wins
    agent.net.params["W"][:] = 0
    assert epsilon_greedy(agent, s, 0.0, np.random.default_rng(0)) == Action(0, 0)
    agent2, _ = small_agent(seed=4)
    seqs, _ = successor_tokens([s], VOCAB, 4)
    best = int(np.argmax(agent2.net.value(seqs)))
    assert epsilon_greedy(agent2, s, 0.0, np.random.default_rng(0)) == valid_actions(s, VOCAB)[best]


def test_full_exploration_is_uniform():
    agent, _ = small_agent()
    s = State(0, (MASK, MASK))
    rng = np.random.default_rng(0)
    acts = valid_actions(s, VOCAB)
    counts = np.zeros(len(acts))
    for _ in range(4000):
        counts[acts.index(epsilon_greedy(agent, s, 1.0, rng))] += 1
    assert sstats.chisquare(counts).pvalue > 0.001


def test_greedy_rejects_terminal():
    agent, _ = small_agent()
    with pytest.raises(InvalidAction):
        epsilon_greedy(agent, State(0, (1, 2)), 0.0, np.random.default_rng(0))


# -- temporal difference --------------------------------------------------------

def test_td_targets_terminal_and_bootstrap():
    agent, _ = small_agent()
    s0 = State(0, (MASK, MASK))
    mid = State(0, (1, MASK))
    end = State(0, (1, 2))
    batch = [Transition(s0, Action(0, 1), mid, 0.0), Transition(mid, Action(1, 2), end, 0.7)]
    q = td_targets(agent, batch, 0.5)
    assert q[1] == 0.7
    assert q[0] == pytest.approx(0.5 * agent.best_successor_values([mid])[0])


def test_td_update_moves_towards_target():
    agent, cfg = small_agent()
    opt = RMSprop(agent.net.params, 1e-2)
    mid = State(0, (1, MASK))
    end = State(0, (1, 2))
    batch = [Transition(mid, Action(1, 2), end, 0.95)]
    errs = [td_update(agent, opt, batch, 0.9) for _ in range(200)]
    assert errs[-1] < 0.05 < errs[0]


def test_td_fixed_point_on_tiny_mdp():
    """Every state's value approaches the exact optimum computed by backward induction."""
    vocab = [0, 1]
    table = {(0, 0): 0.9, (0, 1): 0.2, (1, 0): 0.1, (1, 1): 0.4}
    fn = lambda rule: table[rule.body]
    exact = oracles.toy_mdp_values(vocab, [0], 2, fn, 0.9)
    cfg = AgentTrainConfig(token_dim=6, hidden=8, gamma=0.9, learning_rate=3e-3, seed=0)
    agent = Agent.create(vocab, cfg)
    stages = [CurriculumStage({2: 1.0}, 1.0, 3000)]
    agent, _ = train_agent(stages, cfg, reward_fn=fn, vocabulary=vocab, heads=[0], agent=agent)
    states = list(exact)
    err = np.abs(agent.values(states) - np.array([exact[s] for s in states]))
    assert err.max() < 0.1


def test_train_agent_deterministic_and_logged():
    vocab = [0, 1, 2, 3]
    fn = lambda rule: 1.0 if rule.body == (0, 2) else 0.1
    cfg = AgentTrainConfig(token_dim=4, hidden=4, seed=3, batch_size=8)
    stages = [CurriculumStage({2: 1.0}, 1.0, 30), CurriculumStage({2: 0.5, 3: 0.5}, 1.0, 20)]
    a1, log1 = train_agent(stages, cfg, reward_fn=fn, vocabulary=vocab, heads=[0, 2])
    a2, log2 = train_agent(stages, cfg, reward_fn=fn, vocabulary=vocab, heads=[0, 2])
    assert log1.records == log2.records
    for k in a1.net.params:
        np.testing.assert_array_equal(a1.net.params[k], a2.net.params[k])
    assert len(log1.records) == 50
    assert [r["stage"] for r in log1.records] == [0] * 30 + [1] * 20
    assert log1.records[0]["epsilon"] == 0.95 and log1.records[-1]["epsilon"] == 0.05
    assert len(log1.rewards(1)) == 20


def test_updates_per_episode(monkeypatch):
    import rlminer.agent.training as training
    calls = []
    real = training.td_update
    monkeypatch.setattr(training, "td_update", lambda *a, **k: calls.append(1) or real(*a, **k))
    cfg = AgentTrainConfig(token_dim=4, hidden=4, batch_size=4, updates_per_episode=3)
    train_agent([CurriculumStage({2: 1.0}, 1.0, 5)], cfg, reward_fn=lambda r: 0.5,
                vocabulary=[0, 1], heads=[0])
    assert len(calls) == 15


def test_training_log_round_trip(tmp_path):
    log = TrainingLog({"seed": 1}, [{"episode": 0, "stage": 0, "reward": 0.5}])
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        log.write(fh)
    with open(path) as fh:
        back = TrainingLog.read(fh)
    assert back.header == log.header and back.records == log.records


def test_run_episode_marks_first_transition():
    agent, _ = small_agent()
    mem = ReplayMemory(10)
    r = run_episode(agent, State.masked(0, 3), 0.5, lambda rule: 0.3, np.random.default_rng(0), mem)
    items = list(mem)
    assert r == 0.3 and len(items) == 3
    assert [t.first for t in items] == [True, False, False]
    assert [t.reward for t in items] == [0.0, 0.0, 0.3]


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentTrainConfig(gamma=0)
    with pytest.raises(ValueError):
        AgentTrainConfig(eps_start=0.1, eps_end=0.5)
    with pytest.raises(ValueError):
        AgentTrainConfig(precision="float16")
    with pytest.raises(ValueError):
        AgentTrainConfig(updates_per_episode=0)
    assert AgentTrainConfig.paper().hidden == 512


# -- curriculum --------------------------------------------------------------------

def test_paper_table_rows_are_distributions():
    assert [s.q for s in PAPER_CURRICULUM] == [0.0, 0.3, 0.6, 0.8]
    for s in PAPER_CURRICULUM:
        assert sum(s.phi.values()) == pytest.approx(1.0)
    assert [s.episodes for s in scaled_curriculum([1, 2, 3, 4])] == [1, 2, 3, 4]
    with pytest.raises(CurriculumError):
        scaled_curriculum([1, 2])


def test_stage_validation():
    with pytest.raises(CurriculumError):
        CurriculumStage({2: 0.5}, 0.5, 1)
    with pytest.raises(CurriculumError):
        CurriculumStage({2: 1.0}, 1.5, 1)


def test_q_zero_always_starts_from_seed():
    seeds = [Rule(0, (1, 2)), Rule(2, (0, 3, 1))]
    rng = np.random.default_rng(0)
    stage = CurriculumStage({2: 1.0}, 0.0, 1)
    for _ in range(200):
        s = curriculum_init(stage, seeds, [0, 2], rng)
        rule = next(r for r in seeds if r.head == s.head and len(r.body) == len(s.body))
        filled = [p for p in s.body if p != MASK]
        assert 1 <= len(s.masked_slots()) <= len(s.body)
        assert all(b == MASK or b == rb for b, rb in zip(s.body, rule.body))
        assert len(filled) < len(rule.body)
    with pytest.raises(CurriculumError):
        curriculum_init(stage, [], [0], rng)


def test_q_one_follows_length_distribution():
    stage = CurriculumStage({2: 0.2, 3: 0.3, 4: 0.5}, 1.0, 1)
    rng = np.random.default_rng(1)
    lengths = [len(curriculum_init(stage, [], [0, 2], rng).body) for _ in range(3000)]
    counts = np.array([lengths.count(n) for n in (2, 3, 4)])
    assert sstats.chisquare(counts, 3000 * np.array([0.2, 0.3, 0.5])).pvalue > 0.001


def test_seed_rules_come_from_top_of_score_distribution(hand_kg):
    rng = np.random.default_rng(0)
    n = hand_kg.num_predicates
    model = EmbeddingModel(np.zeros((1, 3)), rng.normal(size=(n, 3)), 2.0)
    seeds = sample_seed_rules(hand_kg, model, count=20, rng=0, pool=2000, top_fraction=0.1)
    assert len(seeds) == 20 and len(set(seeds)) == 20
    vocab = np.array(hand_kg.predicate_vocabulary())
    ref = rho_batch(model, rng.choice(hand_kg.original_predicates(), 5000),
                    rng.choice(vocab, size=(5000, 2)))
    seed_scores = [float(rho_batch(model, [r.head], [r.body])[0]) for r in seeds if len(r.body) == 2]
    assert np.mean(seed_scores) > np.quantile(ref, 0.8)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_seed_rules_use_vocabulary_and_original_heads(seed):
    from rlminer.synthetic import random_kg
    kg = random_kg(10, 3, 30, seed)
    model = EmbeddingModel(np.zeros((1, 2)), np.random.default_rng(seed).normal(size=(3, 2)), 1.0)
    for r in sample_seed_rules(kg, model, count=10, rng=seed, pool=500):
        assert r.head in kg.original_predicates()
        assert set(r.body) <= set(kg.predicate_vocabulary()) and len(r.body) in (2, 3)
