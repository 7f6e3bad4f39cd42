import io
import json

import numpy as np
import pytest

from tailor import model_io
from tailor.model_io import CorruptModelError, ModelFormatError, VersionError, dumps, load, loads, save
from tailor.recommender import RecommenderModel, rate, train
from tailor.reference import BASE_QUERY, FILENAME, reference_model
from tailor.synthetic import genre_lat_rule, random_model, random_query, simulate_respondents


def _doc(model):
    return json.loads(dumps(model))


def test_shipped_reference_matches_builder(reference):
    assert dumps(reference) == dumps(reference_model())
    assert FILENAME.endswith(model_io.SUFFIX)


def test_round_trip_bytes_and_ratings(tmp_path):
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = random_model(rng)
        path = tmp_path / "m.tfmodel.json"
        n = save(m, path)
        assert n == path.stat().st_size
        m2 = load(path)
        assert dumps(m2) == dumps(m)
        for _ in range(20):
            q = random_query(rng, m.schema)
            assert rate(m2, q) == rate(m, q)


def test_canonical_layout(reference):
    data = dumps(reference)
    assert data.endswith(b"\n")
    doc = json.loads(data)
    assert list(doc) == sorted(doc)
    assert doc["format_version"] == "1"
    assert data == (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode()


def test_save_to_stream(reference):
    buf = io.BytesIO()
    save(reference, buf)
    assert buf.getvalue() == dumps(reference)
    assert dumps(load(io.BytesIO(buf.getvalue()))) == buf.getvalue()


def test_training_twice_gives_identical_bytes():
    records = simulate_respondents(120, 5, rank1_rule=genre_lat_rule)
    a = train(records, timestamp="2024-01-01T00:00:00Z")
    b = train(list(reversed(records)), timestamp="2024-01-01T00:00:00Z")
    assert dumps(a) == dumps(b)


def test_empty_timestamp_is_incomplete_metadata(reference):
    m = RecommenderModel(reference.trees, reference.schema, dict(reference.metadata, trained_at=""))
    with pytest.raises(ModelFormatError, match="incomplete metadata"):
        dumps(m)
    doc = _doc(reference)
    del doc["metadata"]["policy"]
    with pytest.raises(ModelFormatError, match="incomplete metadata"):
        model_io.from_document(doc)


def test_truncated_file_reports_byte_offset(reference):
    data = dumps(reference)
    with pytest.raises(ModelFormatError, match=r"byte offset \d+"):
        loads(data[: len(data) // 2])


def test_counts_not_summing_is_corrupt(reference):
    doc = _doc(reference)
    doc["trees"][0]["left"]["left"]["total"] += 1
    with pytest.raises(CorruptModelError, match="corrupt model"):
        model_io.from_document(doc)


@pytest.mark.parametrize("version", ["2", "2.0", 1])
def test_newer_or_bad_version_refused(reference, version):
    doc = _doc(reference)
    doc["format_version"] = version
    with pytest.raises(VersionError):
        model_io.from_document(doc)


def test_minor_version_accepted(reference):
    doc = _doc(reference)
    doc["format_version"] = "1.3"
    assert rate(model_io.from_document(doc), BASE_QUERY) == rate(reference, BASE_QUERY)


def test_unknown_keys_and_elements_rejected(reference):
    doc = _doc(reference)
    doc["extra"] = 1
    with pytest.raises(ModelFormatError, match="unknown field"):
        model_io.from_document(doc)
    doc = _doc(reference)
    doc["elements"][0] = "Badges"
    with pytest.raises(CorruptModelError, match="Badges"):
        model_io.from_document(doc)
    doc = _doc(reference)
    doc["trees"][0]["split"]["levels"] = ["Action", "Racing"]
    with pytest.raises(CorruptModelError):
        model_io.from_document(doc)


def test_wrong_leaf_depth_rejected(reference):
    doc = _doc(reference)
    doc["trees"][1]["left"]["depth"] = 5
    with pytest.raises(CorruptModelError):
        model_io.from_document(doc)


def test_nan_never_written(reference):
    m = RecommenderModel(reference.trees, reference.schema, dict(reference.metadata, n_records=float("nan")))
    with pytest.raises(ValueError):
        dumps(m)
