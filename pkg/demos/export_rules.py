"""
Exporting a model as rules and source code
==========================================

A model can be flattened into one rule per leaf, or printed as nested
conditionals.  Both give exactly the ratings of the tree walk.
"""

import numpy as np

from tailor.codegen import (
    PseudocodeProgram,
    canonical_values,
    emit_conditional_source,
    emit_rules,
    evaluate_rules,
    rules_to_csv,
)
from tailor.recommender import rate
from tailor.reference import BASE_QUERY, load_reference
from tailor.synthetic import random_query

model = load_reference()

rules = emit_rules(model)
print(rules_to_csv(rules)[:600], "...")

###############################################################################
# The pseudocode for the rank-1 tree.

source = emit_conditional_source(model)
print(source.split("FUNCTION rank2")[0])

###############################################################################
# Check agreement on a batch of random queries.

rng = np.random.default_rng(1)
program = PseudocodeProgram(source)
agree = 0
for _ in range(2000):
    q = random_query(rng, model.schema)
    expected = rate(model, q)
    values = canonical_values(model.schema, q, policy=model.policy)
    agree += evaluate_rules(rules, q) == expected and program.rate(values) == expected
print(f"{agree}/2000 queries agree")

###############################################################################
# The same tree in Python, ready to paste elsewhere.

namespace = {}
exec(emit_conditional_source(model, "python"), namespace)
print(namespace["rank1"](canonical_values(model.schema, BASE_QUERY, policy=model.policy)))
