import numpy as np
import pytest

from tailor.reference import load_reference
from tailor.survey import ELEMENTS, Lat, PreferenceTriple, RespondentRecord


def make_record(rid="R1", *, prefs=None, attention_lat=Lat.LAT1, attention=None, **overrides):
    """Record with simple defaults; ``prefs`` maps Lat -> 3 element names."""
    base_prefs = {lat: PreferenceTriple(*ELEMENTS[3 * (lat - 1): 3 * lat]) for lat in Lat}
    for lat, triple in (prefs or {}).items():
        base_prefs[Lat(lat)] = PreferenceTriple(*triple)
    fields = dict(
        respondent_id=rid,
        gender="female",
        age=30,
        country="Brazil",
        education="Undergraduate",
        gamification_research_years=0,
        weekly_playing_hours=10.0,
        preferred_genre="Action",
        preferred_setting="Singleplayer",
        preferences=base_prefs,
        attention_lat=Lat(attention_lat),
        attention_triple=PreferenceTriple(*(attention or base_prefs[Lat(attention_lat)])),
    )
    fields.update(overrides)
    return RespondentRecord(**fields)


# (original triple, repeated triple, intersection size) for the 10-row filter fixture
FILTER_CASES = [
    (("Acknowledgment", "Chance", "Competition"), ("Acknowledgment", "Chance", "Competition"), 3),
    (("Acknowledgment", "Chance", "Competition"), ("Competition", "Acknowledgment", "Chance"), 3),
    (("Acknowledgment", "Chance", "Competition"), ("Chance", "Acknowledgment", "Economy"), 2),
    (("Level", "Point", "Stats"), ("Stats", "Level", "Narrative"), 2),
    (("Objectives", "Puzzles", "Rarity"), ("Objectives", "Rarity", "Novelty"), 2),
    (("Sensation", "Storytelling", "Time Pressure"), ("Time Pressure", "Storytelling", "Sensation"), 3),
    (("Acknowledgment", "Chance", "Competition"), ("Acknowledgment", "Cooperation", "Economy"), 1),
    (("Level", "Point", "Stats"), ("Narrative", "Novelty", "Objectives"), 0),
    (("Objectives", "Puzzles", "Rarity"), ("Puzzles", "Level", "Chance"), 1),
    (("Sensation", "Storytelling", "Time Pressure"), ("Economy", "Reputation", "Renovation"), 0),
]


def filter_fixture():
    records = []
    for i, (original, repeated, _) in enumerate(FILTER_CASES):
        lat = Lat(i % 6 + 1)
        records.append(make_record(f"F{i + 1:02d}", prefs={lat: original}, attention_lat=lat, attention=repeated))
    return records


@pytest.fixture
def reference():
    return load_reference()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append (number, passed, detail) here; printed in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
