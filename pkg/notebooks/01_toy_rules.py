#!/usr/bin/env python
# coding: utf-8
# A first look at rule statistics on the small bundled graph.
# Run from the repository root:  python3 notebooks/01_toy_rules.py

# %%
import itertools

from rlminer.rules import Rule, evaluate, format_rule, refine
from rlminer.synthetic import toy_kg

kg, planted = toy_kg()
print(kg.num_entities, "entities,", len(kg.facts), "facts")
print("predicates:", [kg.predicate_name(p) for p in kg.original_predicates()])

# %%
# The rules that generated the derived predicates. Dropout removed ~10% of their
# consequences and some random facts were added, so confidence is high but not 1.
for rule in planted:
    st = evaluate(kg, rule)
    print(f"{format_rule(rule, kg):60s} supp={st.supp:3d} conf={st.conf:.2f} hc={st.hc:.2f} pca={st.pca_conf:.2f}")

# %%
# Brute force over every two-atom body for the first head: the planted chain
# should be at or near the top.
head = planted[0].head
vocab = kg.predicate_vocabulary()
scored = []
for body in itertools.product(vocab, repeat=2):
    st = evaluate(kg, Rule(head, body))
    if st.supp:
        scored.append((st.conf, st.hc, format_rule(Rule(head, body), kg)))
for conf, hc, text in sorted(scored, reverse=True)[:5]:
    print(f"{conf:.2f} {hc:.2f}  {text}")

# %%
# refine() extends a prefix by one atom, dropping extensions with no grounding.
# Here every one of the 10 predicates (inverses included) can follow bornIn;
# only the planted continuation has high confidence.
prefix = (planted[0].body[0],)
children = refine(kg, prefix)
print(len(children), "of", len(vocab), "extensions of", kg.predicate_name(prefix[0]), "survive")
for body in children:
    print("  ", format_rule(Rule(head, body), kg), round(evaluate(kg, Rule(head, body)).conf, 3))
