"""Hand-authored reference model shaped like a published three-tree recommender.

The leaf reached by (country=Netherlands, preferred_genre=Action) carries
integer counts whose frequencies round to a published rating table:

    rank 1: 12 observations, topped by Objectives 4/12
    rank 2: 188 observations, topped by Competition 28/188
    rank 3: 102 observations, topped by Competition 18/102

Every other leaf is filler whose argmax reproduces the published LAT-only
and country-by-LAT recommendation rows. Split statistics and p-values are
placeholders; the model was never fitted to data.

``reference_model()`` builds the object; ``load_reference()`` reads the copy
shipped in ``tailor/data``. A test keeps the two in sync.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .cit import CitConfig, Decision, Leaf, SplitRule
from .model_io import loads
from .recommender import RecommenderModel, make_schema
from .survey import ELEMENTS, N_ELEMENTS

FILENAME = "reference_model.tfmodel.json"
TRAINED_AT = "2021-01-01T00:00:00Z"

# countries in the reference schema (sorted, as build_schema would freeze them)
COUNTRIES = tuple(sorted((
    "Albania", "Australia", "Austria", "Belize", "Brazil", "Canada", "France",
    "Germany", "India", "Ireland", "Italy", "Jamaica", "Netherlands", "Nigeria",
    "Poland", "Spain", "Turkey", "United Kingdom", "United States",
)))

TABLE_COUNTS = {
    1: (3, 0, 1, 0, 0, 0, 0, 0, 0, 4, 2, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0),
    2: (15, 27, 28, 22, 6, 15, 15, 8, 1, 12, 5, 12, 7, 0, 1, 1, 1, 2, 2, 3, 5),
    3: (8, 6, 18, 8, 5, 6, 6, 2, 4, 7, 4, 5, 2, 0, 1, 2, 2, 1, 6, 6, 3),
}

# background mix for filler leaves, roughly the overall selection shares
_BACKGROUND = np.array((
    15, 6, 10, 11, 6, 7, 8, 8, 2, 13, 4, 8, 7, 1, 2, 2, 3, 1, 6, 6, 4,
))

# query profiles used by the published recommendation rows
BASE_QUERY = {
    "gender": "male",
    "age": 30,
    "country": "United States",
    "education": "High School",
    "researched_gamification": "no",
    "weekly_playing_hours": 10,
    "preferred_genre": "Other Genre",
    "preferred_setting": "Singleplayer",
    "lat": "LAT1",
}
ACTION_QUERY = dict(BASE_QUERY, preferred_genre="Action")

# expected raw top-3 per LAT for BASE_QUERY
LAT_ONLY = {
    "LAT1": ("Acknowledgment", "Objectives", "Objectives"),
    "LAT2": ("Narrative", "Objectives", "Objectives"),
    "LAT3": ("Acknowledgment", "Objectives", "Objectives"),
    "LAT4": ("Acknowledgment", "Objectives", "Acknowledgment"),
    "LAT5": ("Acknowledgment", "Level", "Point"),
    "LAT6": ("Objectives", "Objectives", "Progression"),
}
# expected raw top-3 for ACTION_QUERY by (lat, country)
COUNTRY_LAT = {
    ("LAT1", "United States"): ("Acknowledgment", "Competition", "Competition"),
    ("LAT1", "Brazil"): ("Competition", "Competition", "Time Pressure"),
    ("LAT5", "United States"): ("Acknowledgment", "Level", "Point"),
    ("LAT5", "Brazil"): ("Competition", "Level", "Point"),
}


def _filler(top: str, seed: int) -> tuple[int, ...]:
    rng = np.random.default_rng(seed)
    counts = _BACKGROUND + rng.integers(0, 4, N_ELEMENTS)
    counts[ELEMENTS.index(top)] = counts.max() + 6
    return tuple(int(c) for c in counts)


class _Builder:
    def __init__(self, schema):
        self.schema = schema
        self.seed = 0

    def leaf(self, top_or_counts):
        def make(depth):
            if isinstance(top_or_counts, str):
                self.seed += 1
                counts = _filler(top_or_counts, self.seed)
            else:
                counts = top_or_counts
            return Leaf(counts, sum(counts), depth)
        return make

    def split(self, covariate, levels, left, right, p=0.001, statistic=40.0):
        def make(depth):
            j = self.schema.index(covariate)
            codes = tuple(self.schema[j].levels.index(v) for v in levels)
            return Decision(SplitRule(j, left_levels=codes), p, statistic, left(depth + 1), right(depth + 1))
        return make


def reference_model() -> RecommenderModel:
    schema = make_schema(COUNTRIES)
    b = _Builder(schema)
    lats = lambda *names: tuple(f"LAT{i}" for i in names)  # noqa: E731

    rank1 = b.split(
        "preferred_genre", ("Action",),
        b.split(
            "country", ("Netherlands", "Spain"),
            b.leaf(TABLE_COUNTS[1]),
            b.split("country", ("Brazil",), b.leaf("Competition"), b.leaf("Acknowledgment"), p=0.012, statistic=31.5),
            p=0.004, statistic=52.1,
        ),
        b.split(
            "lat", lats(2),
            b.leaf("Narrative"),
            b.split("lat", lats(6), b.leaf("Objectives"), b.leaf("Acknowledgment"), p=0.021, statistic=36.2),
            p=0.008, statistic=44.7,
        ),
        p=1e-6, statistic=118.3,
    )
    rank2 = b.split(
        "country", ("Netherlands",),
        b.leaf(TABLE_COUNTS[2]),
        b.split(
            "lat", lats(5),
            b.leaf("Level"),
            b.split("preferred_genre", ("Action",), b.leaf("Competition"), b.leaf("Objectives"), p=0.017, statistic=33.9),
            p=0.002, statistic=61.4,
        ),
        p=3e-5, statistic=92.6,
    )
    lat123 = b.split(
        "preferred_genre", ("Action",),
        b.split("country", ("Brazil",), b.leaf("Time Pressure"), b.leaf("Competition"), p=0.031, statistic=34.0),
        b.leaf("Objectives"),
        p=0.006, statistic=47.8,
    )
    rank3 = b.split(
        "country", ("Netherlands",),
        b.leaf(TABLE_COUNTS[3]),
        b.split(
            "lat", lats(5),
            b.leaf("Point"),
            b.split(
                "lat", lats(6),
                b.leaf("Progression"),
                b.split("lat", lats(4), b.leaf("Acknowledgment"), lat123, p=0.027, statistic=35.5),
                p=0.011, statistic=39.0,
            ),
            p=0.003, statistic=55.2,
        ),
        p=8e-5, statistic=84.1,
    )
    trees = tuple(make(0) for make in (rank1, rank2, rank3))
    metadata = {
        "trained_at": TRAINED_AT,
        "config": CitConfig().to_dict(),
        "n_records": 361,
        "n_observations": [2166, 2166, 2166],
        "policy": "majority-branch",
        "lat_ordinal": False,
        "description": "hand-authored reference model; leaf counts illustrative, not fitted",
    }
    return RecommenderModel(trees, schema, metadata)


def load_reference() -> RecommenderModel:
    data = resources.files("tailor").joinpath("data", FILENAME).read_bytes()
    return loads(data)
