"""
Ratings from the bundled reference model
========================================

The package ships a small hand-authored model.  Its leaf counts are
illustrative rather than fitted, but it has the same shape as a trained
model: three trees, one per preference rank, each ending in a histogram
over the 21 game elements.

Here we ask it about one player and look at the full rating table.
"""

import numpy as np

from tailor.recommender import feature_importance, format_importance, rate, recommend_set
from tailor.reference import ACTION_QUERY, load_reference

model = load_reference()

###############################################################################
# A query lists every covariate the trees may look at.

query = dict(ACTION_QUERY, country="Netherlands")
for key, value in query.items():
    print(f"{key:>28}: {value}")

###############################################################################
# Each column of the table is a leaf histogram divided by its total,
# so every column sums to one.

table = rate(model, query)
print(table.format())
print("column sums:", np.round(table.values.sum(axis=0), 12))

###############################################################################
# "raw" picks the best element per rank and may repeat one.
# "distinct" walks down the merged ranking and skips repeats.

print("raw:     ", recommend_set(model, query))
print("distinct:", recommend_set(model, query, mode="distinct"))

###############################################################################
# Only a few of the LATs (learning activity types) move the answer
# when the country is left unremarkable.

for lat in range(1, 7):
    picks = recommend_set(model, dict(query, country="United States", preferred_genre="Other Genre", lat=lat))
    print(f"LAT{lat}: {', '.join(picks)}")

###############################################################################
# Depth at which each covariate first splits, per rank tree.

print(format_importance(feature_importance(model)))
