"""Synthetic survey respondents, random trees and random queries.

Demographic marginals default to the shape of a typical crowdsourced sample
(mostly US respondents, a long tail of countries). They are only used to make
simulated data look realistic; nothing downstream depends on them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .cit import CitConfig, CovariateSchema, Decision, Leaf, SplitRule, TreeNode
from .recommender import RecommenderModel, make_schema
from .survey import (
    BASE_GENRES,
    EDUCATION_LEVELS,
    ELEMENTS,
    GENDERS,
    N_ELEMENTS,
    SETTINGS,
    Lat,
    PreferenceTriple,
    RespondentRecord,
)

COUNTRIES = {
    "United States": 259, "India": 22, "United Kingdom": 20, "Canada": 18, "Brazil": 16,
    "Italy": 6, "Germany": 5, "Spain": 3, "Australia": 2, "Netherlands": 1, "Albania": 1,
    "France": 1, "Ireland": 1, "Poland": 1, "Turkey": 1, "Austria": 1, "Nigeria": 1,
    "Belize": 1, "Jamaica": 1,
}
GENDER_WEIGHTS = (186, 171, 4)
EDUCATION_WEIGHTS = (81, 30, 161, 63, 12, 14)
GENRE_WEIGHTS = (75, 61, 60, 50, 115)
SETTING_WEIGHTS = (214, 147)
# overall selection counts per element, canonical order
ELEMENT_WEIGHTS = (
    740, 314, 507, 545, 327, 363, 381, 420, 106, 654, 213,
    405, 352, 64, 117, 76, 126, 37, 281, 290, 180,
)

RankRule = Callable[[dict, Lat], str | None]


def _choice(rng, options: Sequence, weights: Sequence[float]):
    p = np.asarray(weights, dtype=float)
    return options[rng.choice(len(options), p=p / p.sum())]


def _triple(rng, first: str | None = None) -> PreferenceTriple:
    p = np.asarray(ELEMENT_WEIGHTS, dtype=float)
    chosen = []
    if first is not None:
        chosen.append(ELEMENTS.index(first))
    while len(chosen) < 3:
        q = p.copy()
        q[chosen] = 0
        chosen.append(int(rng.choice(N_ELEMENTS, p=q / q.sum())))
    return PreferenceTriple(*(ELEMENTS[i] for i in chosen))


def simulate_respondents(
    n: int,
    rng: np.random.Generator | int | None = None,
    *,
    rank1_rule: RankRule | None = None,
    signal: float = 0.9,
    inconsistent_rate: float = 0.0,
) -> list[RespondentRecord]:
    """Draw ``n`` survey respondents.

    Without ``rank1_rule`` preferences are independent of every covariate.
    With it, the rank-1 element equals ``rank1_rule(profile, lat)`` with
    probability ``signal``; other ranks stay random. A fraction
    ``inconsistent_rate`` answer the repeated item with at most one match.
    """
    rng = np.random.default_rng(rng)
    countries = list(COUNTRIES)
    out = []
    for i in range(n):
        profile = {
            "gender": _choice(rng, GENDERS, GENDER_WEIGHTS),
            "country": _choice(rng, countries, list(COUNTRIES.values())),
            "education": _choice(rng, EDUCATION_LEVELS, EDUCATION_WEIGHTS),
            "preferred_genre": _choice(rng, BASE_GENRES, GENRE_WEIGHTS),
            "preferred_setting": _choice(rng, SETTINGS, SETTING_WEIGHTS),
        }
        age = int(np.clip(round(rng.normal(32.6, 11.3)), 18, 75))
        hours = float(np.clip(round(rng.gamma(0.9, 14.0)), 0, 112))
        years = int(rng.random() < 0.089) * int(rng.integers(1, 6))
        prefs = {}
        for lat in Lat:
            first = None
            if rank1_rule is not None and rng.random() < signal:
                first = rank1_rule(profile, lat)
            prefs[lat] = _triple(rng, first)
        attention_lat = Lat(int(rng.integers(1, 7)))
        original = prefs[attention_lat]
        if rng.random() < inconsistent_rate:
            keep = [original.first] if rng.random() < 0.5 else []
            pool = [e for e in ELEMENTS if e not in original]
            extra = list(rng.choice(pool, size=3 - len(keep), replace=False))
            attention = PreferenceTriple(*(keep + extra))
        else:
            attention = PreferenceTriple(*rng.permutation(list(original)))
        out.append(RespondentRecord(
            respondent_id=f"R{i + 1:05d}",
            age=age,
            gamification_research_years=years,
            weekly_playing_hours=hours,
            preferences=prefs,
            attention_lat=attention_lat,
            attention_triple=attention,
            **profile,
        ))
    return out


def genre_lat_rule(profile: dict, lat: Lat) -> str:
    """Planted rank-1 preference determined jointly by genre and LAT."""
    g = BASE_GENRES.index(profile["preferred_genre"])
    return ELEMENTS[(4 * g + 3 * (int(lat) - 1)) % N_ELEMENTS]


def survey_schema(countries: Sequence[str] | None = None) -> CovariateSchema:
    """Schema as :func:`tailor.recommender.build_schema` would freeze it for these countries."""
    return make_schema(sorted(countries or COUNTRIES))


# -- random structures --------------------------------------------------------


def random_query(rng: np.random.Generator, schema: CovariateSchema) -> dict:
    out = {}
    for cov in schema:
        if cov.nominal:
            out[cov.name] = cov.levels[int(rng.integers(len(cov.levels)))]
        elif cov.name == "age":
            out[cov.name] = int(rng.integers(18, 76))
        elif cov.name == "lat":
            out[cov.name] = int(rng.integers(1, 7))
        else:
            out[cov.name] = float(rng.integers(0, 60))
    return out


def random_tree(
    rng: np.random.Generator,
    schema: CovariateSchema,
    max_depth: int = 4,
    split_prob: float = 0.7,
    depth: int = 0,
) -> TreeNode:
    """Random tree with valid splits and random integer leaf counts."""
    if depth >= max_depth or rng.random() > split_prob:
        counts = rng.integers(0, 20, size=N_ELEMENTS) * (rng.random(N_ELEMENTS) < 0.6)
        if counts.sum() == 0:
            counts[int(rng.integers(N_ELEMENTS))] = 1
        return Leaf(tuple(int(c) for c in counts), int(counts.sum()), depth)
    j = int(rng.integers(len(schema)))
    cov = schema[j]
    if cov.nominal:
        L = len(cov.levels)
        size = int(rng.integers(1, L))
        rule = SplitRule(j, left_levels=tuple(rng.choice(L, size=size, replace=False)))
    elif cov.name == "lat":
        rule = SplitRule(j, threshold=float(rng.integers(1, 6)) + 0.5)
    else:
        rule = SplitRule(j, threshold=float(rng.integers(10, 60)) + 0.5)
    return Decision(
        rule,
        float(rng.uniform(0, 0.05)),
        float(rng.uniform(5, 200)),
        random_tree(rng, schema, max_depth, split_prob, depth + 1),
        random_tree(rng, schema, max_depth, split_prob, depth + 1),
    )


def random_model(
    rng: np.random.Generator,
    schema: CovariateSchema | None = None,
    max_depth: int = 4,
    policy: str = "error",
) -> RecommenderModel:
    schema = schema or survey_schema()
    trees = tuple(random_tree(rng, schema, max_depth) for _ in range(3))
    metadata = {
        "trained_at": "2020-01-01T00:00:00Z",
        "config": CitConfig().to_dict(),
        "n_records": 0,
        "n_observations": [0, 0, 0],
        "policy": policy,
        "lat_ordinal": False,
    }
    return RecommenderModel(trees, schema, metadata)
