#!/usr/bin/env python
# coding: utf-8
# How well does a translational embedding separate planted rules from random ones?
# python3 notebooks/02_embedding_scores.py   (about a minute)

# %%
import numpy as np

from rlminer.embedding import EmbedTrainConfig, rho, rho_batch, train_transe
from rlminer.rules import evaluate, format_rule
from rlminer.synthetic import generate_planted_kg, planted_benchmark, sample_rules

kg, planted = generate_planted_kg(planted_benchmark(dropout=0.1, noise=0.1), seed=0)
print(kg.num_entities, "entities,", len(kg.facts), "facts,", kg.num_predicates, "predicates")

# %%
model = train_transe(kg, EmbedTrainConfig(dim=50, eta=6.0, epochs=200))

# %%
# Planted rules: score from the embedding alone vs. confidence counted on the graph.
for rule in planted:
    print(f"rho={rho(model, rule):.3f} conf={evaluate(kg, rule).conf:.2f}  {format_rule(rule, kg)}")

# %%
# The same score for random rules of the same lengths, vectorised.
rng = np.random.default_rng(0)
heads = kg.original_predicates()
for length in (2, 3):
    rules = sample_rules(kg.predicate_vocabulary(), heads, length, 2000, rng)
    h = np.array([r.head for r in rules])
    b = np.array([r.body for r in rules])
    scores = rho_batch(model, h, b)
    print(f"{length}-atom bodies: random rho mean {scores.mean():.3f}, 95th pct {np.percentile(scores, 95):.3f}")

# %%
# Body order does not matter to a translational score: the body vectors are summed.
r = planted[3]
print(rho(model, r), rho(model, type(r)(r.head, r.body[::-1])))
