"""Three-tree recommender: per-rank ratings, top-k assembly and importance reports."""

from __future__ import annotations

import datetime as _dt
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import cit
from .cit import CitConfig, Covariate, CovariateSchema, Leaf, TreeNode
from .survey import (
    BASE_GENRES,
    COVARIATES,
    EDUCATION_LEVELS,
    ELEMENTS,
    GENDER_ALIASES,
    GENDERS,
    N_ELEMENTS,
    RESEARCHED_LEVELS,
    SETTINGS,
    Lat,
    RespondentRecord,
    SurveyError,
    to_long,
)

FORMAT_VERSION = "1"
RANKS = (1, 2, 3)

# alternative spellings accepted for query fields
FIELD_ALIASES = {
    "genre": "preferred_genre",
    "setting": "preferred_setting",
    "weekly_hours": "weekly_playing_hours",
    "hours": "weekly_playing_hours",
    "researched": "researched_gamification",
}


class QueryError(ValueError):
    """Invalid query; ``field`` names the offending field and ``status`` hints 400 vs 422."""

    def __init__(self, message: str, field: str | None = None, status: int = 422):
        self.field = field
        self.status = status
        super().__init__(message)


def _yes_no(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value < 0:
            raise QueryError(f"researched_gamification must be non-negative, got {value!r}", "researched_gamification", 400)
        return "yes" if value > 0 else "no"
    text = str(value).strip().casefold()
    if text in ("yes", "y", "true", "1"):
        return "yes"
    if text in ("no", "n", "false", "0"):
        return "no"
    try:
        return _yes_no(float(text))
    except ValueError:
        raise QueryError(f"researched_gamification must be yes/no, got {value!r}", "researched_gamification", 400) from None


def _number(name: str, value) -> float:
    if isinstance(value, bool):
        raise QueryError(f"{name} must be a number, got {value!r}", name, 400)
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise QueryError(f"{name} must be a number, got {value!r}", name, 400) from None
    if not np.isfinite(x) or x < 0:
        raise QueryError(f"{name} must be a finite non-negative number, got {value!r}", name, 400)
    return x


@dataclass(frozen=True)
class Query:
    gender: str
    age: float
    country: str
    education: str
    researched_gamification: str
    weekly_playing_hours: float
    preferred_genre: str
    preferred_setting: str
    lat: str

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], *, allow_unknown: bool = False) -> "Query":
        """Build a query from loosely typed values (CLI flags, JSON bodies).

        LAT accepts 1-6 or "LAT1".."LAT6"; research experience accepts a boolean,
        yes/no, or a number of years.
        """
        data = {}
        for key, value in values.items():
            name = FIELD_ALIASES.get(key, key)
            if name not in COVARIATES:
                if allow_unknown:
                    continue
                raise QueryError(f"unknown field {key!r}", key, 400)
            if name in data:
                raise QueryError(f"field {name!r} given twice", key, 400)
            data[name] = value
        missing = [c for c in COVARIATES if c not in data or data[c] is None]
        if missing:
            raise QueryError(f"missing field(s): {', '.join(missing)}", missing[0], 422)
        try:
            lat = Lat.parse(data["lat"]).name
        except SurveyError as exc:
            raise QueryError(str(exc), "lat", 400) from None
        return cls(
            gender=GENDER_ALIASES.get(str(data["gender"]).strip().casefold(), str(data["gender"]).strip()),
            age=_number("age", data["age"]),
            country=str(data["country"]).strip(),
            education=str(data["education"]).strip(),
            researched_gamification=_yes_no(data["researched_gamification"]),
            weekly_playing_hours=_number("weekly_playing_hours", data["weekly_playing_hours"]),
            preferred_genre=str(data["preferred_genre"]).strip(),
            preferred_setting=str(data["preferred_setting"]).strip(),
            lat=lat,
        )

    def covariates(self) -> dict:
        return {name: getattr(self, name) for name in COVARIATES}


@dataclass(frozen=True)
class RatingTable:
    """Ratings (selection frequencies) of each element as first/second/third choice."""

    values: np.ndarray  # shape (21, 3)
    elements: tuple[str, ...] = ELEMENTS

    def column(self, rank: int) -> np.ndarray:
        return self.values[:, rank - 1]

    def rating(self, element: str, rank: int) -> float:
        return float(self.values[self.elements.index(element), rank - 1])

    def as_dict(self) -> dict[str, list[float]]:
        return {e: [float(v) for v in row] for e, row in zip(self.elements, self.values)}

    def __eq__(self, other):
        if not isinstance(other, RatingTable):
            return NotImplemented
        return self.elements == other.elements and np.array_equal(self.values, other.values)

    def format(self) -> str:
        width = max(len(e) for e in self.elements)
        lines = [f"{'Game element':<{width}}  {'First':>6}  {'Second':>6}  {'Third':>6}"]
        for e, row in zip(self.elements, self.values):
            lines.append(f"{e:<{width}}  {row[0]:6.3f}  {row[1]:6.3f}  {row[2]:6.3f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["element,first,second,third"]
        for e, row in zip(self.elements, self.values):
            lines.append(",".join([e] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RecommenderModel:
    trees: tuple[TreeNode, TreeNode, TreeNode]
    schema: CovariateSchema
    metadata: dict = field(default_factory=dict)
    elements: tuple[str, ...] = ELEMENTS

    def __post_init__(self):
        if len(self.trees) != 3:
            raise ValueError("a recommender model holds exactly three rank trees")
        if tuple(self.elements) != ELEMENTS:
            raise ValueError("element vocabulary does not match the canonical 21 elements")

    @property
    def policy(self) -> str:
        return self.metadata.get("policy", "error")


def make_schema(
    countries: Sequence[str],
    genres: Sequence[str] = BASE_GENRES,
    *,
    lat_ordinal: bool = False,
) -> CovariateSchema:
    """Covariate schema over the fixed vocabularies plus the given open-vocabulary levels."""
    lat = Covariate("lat", "numeric") if lat_ordinal else Covariate("lat", "nominal", tuple(l.name for l in Lat))
    return CovariateSchema((
        Covariate("gender", "nominal", GENDERS),
        Covariate("age", "numeric"),
        Covariate("country", "nominal", tuple(countries)),
        Covariate("education", "nominal", EDUCATION_LEVELS),
        Covariate("researched_gamification", "nominal", RESEARCHED_LEVELS),
        Covariate("weekly_playing_hours", "numeric"),
        Covariate("preferred_genre", "nominal", tuple(genres)),
        Covariate("preferred_setting", "nominal", SETTINGS),
        lat,
    ))


def build_schema(records: Sequence[RespondentRecord], *, lat_ordinal: bool = False) -> CovariateSchema:
    """Freeze the covariate schema: fixed vocabularies plus levels observed in ``records``.

    Open vocabularies (country, extra genres) are sorted so the schema does not
    depend on record order.
    """
    countries = sorted({r.country for r in records})
    extra_genres = sorted({r.preferred_genre for r in records} - set(BASE_GENRES))
    return make_schema(countries, BASE_GENRES + tuple(extra_genres), lat_ordinal=lat_ordinal)


def _timestamp(explicit: str | None) -> str:
    if explicit:
        return explicit
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
    )
    return moment.isoformat().replace("+00:00", "Z")


def _covariate_rows(observations, lat_ordinal: bool):
    rows = []
    for o in observations:
        cov = dict(o.covariates)
        if lat_ordinal:
            cov["lat"] = int(Lat.parse(cov["lat"]))
        rows.append(cov)
    return rows


def train(
    records: Sequence[RespondentRecord],
    config: CitConfig = CitConfig(),
    *,
    policy: str = "error",
    lat_ordinal: bool = False,
    timestamp: str | None = None,
) -> RecommenderModel:
    """Fit one conditional inference tree per preference rank.

    ``timestamp`` defaults to ``SOURCE_DATE_EPOCH`` when set, else the current UTC time.
    """
    if not records:
        raise ValueError("cannot train on an empty record list")
    if policy not in cit.POLICIES:
        raise ValueError(f"unknown unseen-level policy {policy!r}")
    schema = build_schema(records, lat_ordinal=lat_ordinal)
    long = to_long(records)
    trees = []
    counts = []
    for rank in RANKS:
        obs = [o for o in long if o.rank == rank]
        X = schema.encode(_covariate_rows(obs, lat_ordinal))
        y = np.array([ELEMENTS.index(o.response) for o in obs], dtype=np.intp)
        w = np.array([o.weight for o in obs])
        trees.append(cit.grow_tree_arrays(X, y, schema, config, w))
        counts.append(len(obs))
    metadata = {
        "trained_at": _timestamp(timestamp),
        "config": config.to_dict(),
        "n_records": len(records),
        "n_observations": counts,
        "policy": policy,
        "lat_ordinal": lat_ordinal,
    }
    return RecommenderModel(tuple(trees), schema, metadata)


def _query_codes(model: RecommenderModel, query) -> np.ndarray:
    if not isinstance(query, Query):
        query = Query.from_mapping(query)
    cov = query.covariates()
    if model.metadata.get("lat_ordinal"):
        cov["lat"] = int(Lat.parse(cov["lat"]))
    try:
        return model.schema.encode_one(cov, model.policy)
    except cit.UnseenLevelError as exc:
        raise QueryError(str(exc), exc.covariate, 422) from None
    except ValueError as exc:
        raise QueryError(str(exc), None, 400) from None


def rate(model: RecommenderModel, query) -> RatingTable:
    """Rating table for a query (a :class:`Query` or a mapping of its fields)."""
    codes = _query_codes(model, query)
    columns = [cit.route(tree, codes).distribution() for tree in model.trees]
    return RatingTable(np.column_stack(columns))


def _ranked(column: np.ndarray) -> list[int]:
    # descending rating, ties by canonical element index
    return sorted(range(len(column)), key=lambda i: (-column[i], i))


def recommend_from_table(table: RatingTable, k: int = 3, mode: str = "raw") -> list[str]:
    if not 1 <= k <= N_ELEMENTS:
        raise ValueError(f"k must lie in 1..{N_ELEMENTS}")
    if mode not in ("raw", "distinct"):
        raise ValueError(f"unknown mode {mode!r}")
    picks: list[int] = []
    if mode == "raw":
        for rank in RANKS[: min(k, 3)]:
            picks.append(_ranked(table.column(rank))[0])
        # beyond three ranks, continue down the third-choice ordering
        picks.extend(_ranked(table.column(3))[1 : k - 2] if k > 3 else [])
    else:
        for slot in range(k):
            order = _ranked(table.column(min(slot + 1, 3)))
            picks.append(next(i for i in order if i not in picks))
    return [table.elements[i] for i in picks]


def recommend_set(model: RecommenderModel, query, k: int = 3, mode: str = "raw") -> list[str]:
    """Top-k elements: per-rank argmax (``raw``) or greedy without repeats (``distinct``)."""
    return recommend_from_table(rate(model, query), k, mode)


def recommended_ratings(table: RatingTable, picks: Sequence[str]) -> list[float]:
    """Rating of each pick in the rank column it was drawn from."""
    return [table.rating(e, min(i + 1, 3)) for i, e in enumerate(picks)]


def feature_importance(model: RecommenderModel) -> dict[str, tuple[int | None, int | None, int | None]]:
    """Shallowest level (root = 1) at which each covariate splits, per rank tree; None if unused."""
    levels = {name: [None, None, None] for name in model.schema.names}
    for r, tree in enumerate(model.trees):
        for node, depth in cit.iter_decisions(tree):
            name = model.schema[node.split.covariate].name
            if levels[name][r] is None or depth + 1 < levels[name][r]:
                levels[name][r] = depth + 1
    return {k: tuple(v) for k, v in levels.items()}


def covariates_used(model: RecommenderModel) -> list[list[str]]:
    importance = feature_importance(model)
    return [
        sorted((n for n, lv in importance.items() if lv[r] is not None), key=lambda n: (importance[n][r], n))
        for r in range(3)
    ]


def format_importance(importance: Mapping[str, Sequence[int | None]]) -> str:
    width = max(len(n) for n in importance)
    lines = [f"{'covariate':<{width}}  first  second  third"]
    for name, lv in importance.items():
        cells = ["-" if v is None else str(v) for v in lv]
        lines.append(f"{name:<{width}}  {cells[0]:>5}  {cells[1]:>6}  {cells[2]:>5}")
    return "\n".join(lines)


def leaf_for(model: RecommenderModel, query, rank: int) -> Leaf:
    return cit.route(model.trees[rank - 1], _query_codes(model, query))
