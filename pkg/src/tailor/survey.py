"""Survey data model, wide-format CSV ingestion, attention filtering and reshaping.

A respondent ranks their top three game elements for each of six learning
activity types (LATs), plus one repeated item used as an attention check.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ELEMENTS: tuple[str, ...] = (
    "Acknowledgment",
    "Chance",
    "Competition",
    "Cooperation",
    "Economy",
    "Imposed Choice",
    "Level",
    "Narrative",
    "Novelty",
    "Objectives",
    "Point",
    "Progression",
    "Puzzles",
    "Rarity",
    "Renovation",
    "Reputation",
    "Sensation",
    "Social Pressure",
    "Stats",
    "Storytelling",
    "Time Pressure",
)
N_ELEMENTS = len(ELEMENTS)
_ELEMENT_LOOKUP = {name.casefold(): i for i, name in enumerate(ELEMENTS)}

GENDERS = ("female", "male", "other")
EDUCATION_LEVELS = (
    "High School",
    "Technical education",
    "Undergraduate",
    "MsC",
    "Ph.D",
    "Other Education",
)
BASE_GENRES = ("Role Playing Game", "Adventure", "Action", "Strategy", "Other Genre")
SETTINGS = ("Singleplayer", "Multiplayer")
RESEARCHED_LEVELS = ("no", "yes")

# covariate order used everywhere a covariate vector is built
COVARIATES = (
    "gender",
    "age",
    "country",
    "education",
    "researched_gamification",
    "weekly_playing_hours",
    "preferred_genre",
    "preferred_setting",
    "lat",
)

GENDER_ALIASES = {"other gender": "other"}


class SurveyError(ValueError):
    """Malformed survey input; carries the offending row/column when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"line {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def element_index(name: str) -> int:
    """Zero-based canonical index of a game element (case-insensitive)."""
    try:
        return _ELEMENT_LOOKUP[str(name).strip().casefold()]
    except KeyError:
        raise SurveyError(f"unknown game element {name!r}") from None


def element_name(name: str) -> str:
    return ELEMENTS[element_index(name)]


class Lat(enum.IntEnum):
    """Learning activity types, ordered by cognitive process."""

    LAT1 = 1
    LAT2 = 2
    LAT3 = 3
    LAT4 = 4
    LAT5 = 5
    LAT6 = 6

    @property
    def process(self) -> str:
        return ("remember", "understand", "apply", "analyze", "evaluate", "create")[self - 1]

    @classmethod
    def parse(cls, value) -> "Lat":
        if isinstance(value, Lat):
            return value
        if isinstance(value, bool):
            raise SurveyError(f"invalid LAT {value!r}")
        if isinstance(value, (int, np.integer)):
            if 1 <= value <= 6:
                return cls(int(value))
            raise SurveyError(f"invalid LAT {value!r}; expected 1-6")
        text = str(value).strip()
        if text.upper().startswith("LAT"):
            text = text[3:]
        try:
            return cls.parse(int(text))
        except ValueError:
            pass
        for lat in cls:
            if lat.process == text.casefold():
                return lat
        raise SurveyError(f"invalid LAT {value!r}; expected 1-6")


@dataclass(frozen=True)
class PreferenceTriple:
    first: str
    second: str
    third: str

    def __post_init__(self):
        names = tuple(element_name(e) for e in (self.first, self.second, self.third))
        if len(set(names)) != 3:
            raise SurveyError(f"duplicate element in triple {names}")
        object.__setattr__(self, "first", names[0])
        object.__setattr__(self, "second", names[1])
        object.__setattr__(self, "third", names[2])

    def __iter__(self):
        return iter((self.first, self.second, self.third))

    def __getitem__(self, rank: int) -> str:
        """Element at 1-based ``rank``."""
        return (self.first, self.second, self.third)[rank - 1]


@dataclass(frozen=True)
class RespondentRecord:
    respondent_id: str
    gender: str
    age: int
    country: str
    education: str
    gamification_research_years: int
    weekly_playing_hours: float
    preferred_genre: str
    preferred_setting: str
    preferences: Mapping[Lat, PreferenceTriple]
    attention_lat: Lat
    attention_triple: PreferenceTriple

    def __post_init__(self):
        missing = [lat.name for lat in Lat if lat not in self.preferences]
        if missing:
            raise SurveyError(f"respondent {self.respondent_id}: missing preferences for {missing}")
        if self.age < 0 or self.gamification_research_years < 0:
            raise SurveyError(f"respondent {self.respondent_id}: negative age or research years")
        if not (self.weekly_playing_hours >= 0 and math.isfinite(self.weekly_playing_hours)):
            raise SurveyError(f"respondent {self.respondent_id}: invalid weekly hours")

    @property
    def researched_gamification(self) -> bool:
        return self.gamification_research_years > 0

    def covariates(self, lat: Lat) -> dict:
        """Covariate mapping for one LAT row of the long format."""
        return {
            "gender": self.gender,
            "age": self.age,
            "country": self.country,
            "education": self.education,
            "researched_gamification": "yes" if self.researched_gamification else "no",
            "weekly_playing_hours": self.weekly_playing_hours,
            "preferred_genre": self.preferred_genre,
            "preferred_setting": self.preferred_setting,
            "lat": Lat(lat).name,
        }


@dataclass(frozen=True)
class Observation:
    """One long-format training row: covariates plus the element chosen at ``rank``."""

    respondent_id: str
    covariates: Mapping[str, object]
    response: str
    rank: int
    weight: float = 1.0

    def __post_init__(self):
        if self.rank not in (1, 2, 3):
            raise ValueError(f"rank must be 1, 2 or 3, got {self.rank}")
        if not self.weight >= 0:
            raise ValueError(f"weight must be non-negative, got {self.weight}")


# -- vocabulary normalisation -------------------------------------------------


def _closed(value: str, vocabulary: Sequence[str], what: str, aliases=None) -> str:
    key = str(value).strip().casefold()
    if aliases and key in aliases:
        key = aliases[key]
    for v in vocabulary:
        if v.casefold() == key:
            return v
    raise SurveyError(f"unknown {what} {value!r}; expected one of {list(vocabulary)}")


def normalize_gender(value: str) -> str:
    return _closed(value, GENDERS, "gender", GENDER_ALIASES)


def normalize_education(value: str) -> str:
    return _closed(value, EDUCATION_LEVELS, "education level")


def normalize_setting(value: str) -> str:
    return _closed(value, SETTINGS, "playing setting")


def _open(value: str, what: str) -> str:
    text = str(value).strip()
    if not text:
        raise SurveyError(f"empty {what}")
    return text


# -- CSV ----------------------------------------------------------------------

DEMOGRAPHIC_COLUMNS = (
    "id",
    "gender",
    "age",
    "country",
    "education",
    "gamification_years",
    "weekly_hours",
    "genre",
    "setting",
)
PREFERENCE_COLUMNS = tuple(f"rank{r}_lat{lat}" for lat in range(1, 7) for r in (1, 2, 3))
ATTENTION_COLUMNS = ("attention_lat", "attention_rank1", "attention_rank2", "attention_rank3")
WIDE_COLUMNS = DEMOGRAPHIC_COLUMNS + PREFERENCE_COLUMNS + ATTENTION_COLUMNS


def _parse_row(row: Mapping[str, str], line: int) -> RespondentRecord:
    def get(col):
        value = row.get(col)
        if value is None:
            raise SurveyError("missing value", line, col)
        return value.strip()

    def number(col, kind):
        text = get(col)
        try:
            value = kind(text)
        except ValueError:
            raise SurveyError(f"non-numeric value {text!r}", line, col) from None
        if kind is float and not math.isfinite(value):
            raise SurveyError(f"non-finite value {text!r}", line, col)
        if value < 0:
            raise SurveyError(f"negative value {text!r}", line, col)
        return value

    def vocab(col, fn):
        try:
            return fn(get(col))
        except SurveyError as exc:
            raise SurveyError(str(exc), line, col) from None

    def triple(cols):
        names = []
        for col in cols:
            names.append(vocab(col, element_name))
        if len(set(names)) != 3:
            raise SurveyError(f"duplicate element in triple {names}", line, cols[0])
        return PreferenceTriple(*names)

    preferences = {
        lat: triple([f"rank{r}_lat{int(lat)}" for r in (1, 2, 3)]) for lat in Lat
    }
    return RespondentRecord(
        respondent_id=get("id"),
        gender=vocab("gender", normalize_gender),
        age=number("age", int),
        country=vocab("country", lambda v: _open(v, "country")),
        education=vocab("education", normalize_education),
        gamification_research_years=number("gamification_years", int),
        weekly_playing_hours=number("weekly_hours", float),
        preferred_genre=vocab("genre", lambda v: _open(v, "genre")),
        preferred_setting=vocab("setting", normalize_setting),
        preferences=preferences,
        attention_lat=vocab("attention_lat", Lat.parse),
        attention_triple=triple(list(ATTENTION_COLUMNS[1:])),
    )


def read_wide_csv(stream: Iterable[str]) -> list[RespondentRecord]:
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    missing = [c for c in WIDE_COLUMNS if c not in header]
    if missing:
        raise SurveyError(f"missing column(s) {missing}", 1)
    records = []
    for row in reader:
        records.append(_parse_row(row, reader.line_num))
    return records


def parse_wide_csv(path: str | Path) -> list[RespondentRecord]:
    """Read a wide-format survey export; one record per data row."""
    with open(path, newline="", encoding="utf-8") as fh:
        return read_wide_csv(fh)


def _format_number(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def record_to_row(record: RespondentRecord) -> dict:
    row = {
        "id": record.respondent_id,
        "gender": record.gender,
        "age": str(record.age),
        "country": record.country,
        "education": record.education,
        "gamification_years": str(record.gamification_research_years),
        "weekly_hours": _format_number(record.weekly_playing_hours),
        "genre": record.preferred_genre,
        "setting": record.preferred_setting,
        "attention_lat": str(int(record.attention_lat)),
    }
    for lat in Lat:
        for r, element in enumerate(record.preferences[lat], start=1):
            row[f"rank{r}_lat{int(lat)}"] = element
    for r, element in enumerate(record.attention_triple, start=1):
        row[f"attention_rank{r}"] = element
    return row


def write_wide_csv(records: Iterable[RespondentRecord], path: str | Path | None = None) -> str:
    """Serialize records in the wide column layout; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=WIDE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record_to_row(record))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# -- filtering ----------------------------------------------------------------


def match_count(a: Iterable[str], b: Iterable[str]) -> int:
    """Number of elements two triples share, ignoring rank order."""
    return len(set(a) & set(b))


@dataclass(frozen=True)
class FilterReport:
    respondent_id: str
    attention_lat: Lat
    match_count: int
    kept: bool


@dataclass
class FilterResult:
    kept: list[RespondentRecord]
    discarded: list[RespondentRecord]
    report: list[FilterReport] = field(default_factory=list)

    def __iter__(self):
        return iter((self.kept, self.discarded, self.report))


def consistency_filter(records: Sequence[RespondentRecord], min_matches: int = 2) -> FilterResult:
    """Keep respondents whose repeated item shares at least ``min_matches`` elements
    with their original answer for the same LAT."""
    if min_matches not in (0, 1, 2, 3):
        raise ValueError(f"min_matches must be in 0..3, got {min_matches}")
    result = FilterResult([], [], [])
    for record in records:
        n = match_count(record.attention_triple, record.preferences[record.attention_lat])
        keep = n >= min_matches
        (result.kept if keep else result.discarded).append(record)
        result.report.append(FilterReport(record.respondent_id, record.attention_lat, n, keep))
    return result


def to_long(records: Iterable[RespondentRecord]) -> list[Observation]:
    """Six LAT rows per respondent, each expanded to its three ranked choices."""
    out = []
    for record in records:
        for lat in Lat:
            cov = record.covariates(lat)
            for rank, element in enumerate(record.preferences[lat], start=1):
                out.append(Observation(record.respondent_id, cov, element, rank))
    return out


# -- summary ------------------------------------------------------------------

CATEGORICAL_FIELDS = (
    "gender",
    "country",
    "education",
    "preferred_genre",
    "preferred_setting",
    "researched_gamification",
)
NUMERIC_FIELDS = ("age", "weekly_playing_hours")


@dataclass
class SurveySummary:
    n: int
    categorical: dict[str, dict[str, tuple[int, float]]]
    numeric: dict[str, dict[str, float]]

    def format(self) -> str:
        lines = [f"respondents: {self.n}"]
        for name, levels in self.categorical.items():
            lines.append(f"\n{name}")
            width = max(len(k) for k in levels)
            for level, (count, share) in levels.items():
                lines.append(f"  {level:<{width}}  {count:>6d} ({share:.3f})")
        for name, stats in self.numeric.items():
            lines.append(f"\n{name}")
            for key, value in stats.items():
                lines.append(f"  {key:<5} {value:10.3f}")
        return "\n".join(lines)

    def rows(self) -> list[tuple[str, str, str, str]]:
        """Flat (field, level/statistic, count, value) rows for CSV output."""
        out = []
        for name, levels in self.categorical.items():
            for level, (count, share) in levels.items():
                out.append((name, level, str(count), repr(share)))
        for name, stats in self.numeric.items():
            for key, value in stats.items():
                out.append((name, key, "", repr(value)))
        return out


def summarize(records: Sequence[RespondentRecord]) -> SurveySummary:
    if not records:
        raise ValueError("cannot summarize an empty record list")
    n = len(records)
    categorical = {}
    for name in CATEGORICAL_FIELDS:
        counts: dict[str, int] = {}
        for r in records:
            value = ("yes" if r.researched_gamification else "no") if name == "researched_gamification" else getattr(r, name)
            counts[value] = counts.get(value, 0) + 1
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        categorical[name] = {k: (c, c / n) for k, c in ordered}
    numeric = {}
    for name in NUMERIC_FIELDS:
        x = np.array([float(getattr(r, name)) for r in records])
        q1, q2, q3 = np.percentile(x, [25, 50, 75])
        numeric[name] = {
            "mean": float(x.mean()),
            "sd": float(x.std(ddof=1)) if n > 1 else 0.0,
            "min": float(x.min()),
            "25%": float(q1),
            "50%": float(q2),
            "75%": float(q3),
            "max": float(x.max()),
        }
    return SurveySummary(n, categorical, numeric)
