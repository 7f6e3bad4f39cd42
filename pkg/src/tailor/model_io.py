"""Canonical JSON persistence of recommender models (``*.tfmodel.json``).

Document layout (keys are written sorted, two-space indented, UTF-8)::

    {
      "elements": [21 element names, canonical order],
      "format_version": "1",
      "metadata": {"config": {...}, "lat_ordinal": false, "n_observations": [n1, n2, n3],
                   "n_records": n, "policy": "error", "trained_at": "...",
                   "description": "..." (optional)},
      "schema": [{"kind": "nominal", "levels": [...], "name": "gender"},
                 {"kind": "numeric", "name": "age"}, ...],
      "trees": [node, node, node]
    }

    node := {"kind": "leaf", "counts": [21 ints], "depth": d, "total": n}
          | {"kind": "decision", "left": node, "right": node, "p_adjusted": p,
             "split": {"covariate": name, "op": "<=", "threshold": t}
                    | {"covariate": name, "op": "in", "levels": [...]},
             "statistic": s}

Only integer counts are stored; ratings are always recomputed from them.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Any, Mapping

from .cit import CitConfig, Covariate, CovariateSchema, Decision, Leaf, SplitRule, TreeNode
from .recommender import FORMAT_VERSION, RecommenderModel
from .survey import ELEMENTS, N_ELEMENTS

SUFFIX = ".tfmodel.json"

_TOP_KEYS = {"format_version", "elements", "schema", "metadata", "trees"}
_META_REQUIRED = {"trained_at", "config", "n_records", "n_observations", "policy", "lat_ordinal"}
_META_OPTIONAL = {"description"}


class ModelFormatError(ValueError):
    pass


class VersionError(ModelFormatError):
    pass


class CorruptModelError(ModelFormatError):
    def __init__(self, message: str):
        super().__init__(f"corrupt model: {message}")


# -- encoding -----------------------------------------------------------------


def _check_metadata(meta: Mapping[str, Any]):
    missing = sorted(_META_REQUIRED - set(meta))
    if missing:
        raise ModelFormatError(f"incomplete metadata: missing {missing}")
    if not isinstance(meta["trained_at"], str) or not meta["trained_at"].strip():
        raise ModelFormatError("incomplete metadata: empty trained_at timestamp")
    unknown = sorted(set(meta) - _META_REQUIRED - _META_OPTIONAL)
    if unknown:
        raise ModelFormatError(f"unknown metadata field(s) {unknown}")


def _node_doc(node: TreeNode, schema: CovariateSchema) -> dict:
    if isinstance(node, Leaf):
        return {"kind": "leaf", "counts": list(node.counts), "total": node.total, "depth": node.depth}
    cov = schema[node.split.covariate]
    if node.split.nominal:
        split = {"covariate": cov.name, "op": "in", "levels": [cov.levels[i] for i in node.split.left_levels]}
    else:
        split = {"covariate": cov.name, "op": "<=", "threshold": float(node.split.threshold)}
    return {
        "kind": "decision",
        "split": split,
        "p_adjusted": float(node.p_adjusted),
        "statistic": float(node.statistic),
        "left": _node_doc(node.left, schema),
        "right": _node_doc(node.right, schema),
    }


def to_document(model: RecommenderModel) -> dict:
    _check_metadata(model.metadata)
    schema_doc = []
    for cov in model.schema:
        entry = {"name": cov.name, "kind": cov.kind}
        if cov.nominal:
            entry["levels"] = list(cov.levels)
        schema_doc.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "elements": list(model.elements),
        "schema": schema_doc,
        "metadata": dict(model.metadata),
        "trees": [_node_doc(t, model.schema) for t in model.trees],
    }


def dumps(model: RecommenderModel) -> bytes:
    """Canonical bytes: sorted keys, shortest round-trip float repr, trailing newline."""
    text = json.dumps(to_document(model), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def save(model: RecommenderModel, destination: str | Path | IO[bytes]) -> int:
    data = dumps(model)
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        Path(destination).write_bytes(data)
    return len(data)


# -- decoding -----------------------------------------------------------------


def _keys(obj, required: set, optional: set = frozenset(), where: str = "document"):
    if not isinstance(obj, dict):
        raise CorruptModelError(f"{where} must be an object")
    missing = sorted(required - set(obj))
    if missing:
        raise CorruptModelError(f"{where}: missing field(s) {missing}")
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise ModelFormatError(f"{where}: unknown field(s) {unknown}; written by a newer format?")


def _int(value, where) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CorruptModelError(f"{where} must be an integer")
    return value


def _real(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise CorruptModelError(f"{where} must be a finite number")
    return float(value)


def _node_from(doc, schema: CovariateSchema, depth: int, where: str) -> TreeNode:
    if not isinstance(doc, dict) or doc.get("kind") not in ("leaf", "decision"):
        raise CorruptModelError(f"{where}: node kind must be 'leaf' or 'decision'")
    if doc["kind"] == "leaf":
        _keys(doc, {"kind", "counts", "total", "depth"}, where=where)
        counts = doc["counts"]
        if not isinstance(counts, list) or len(counts) != N_ELEMENTS:
            raise CorruptModelError(f"{where}: leaf needs {N_ELEMENTS} counts")
        counts = [_int(c, f"{where}.counts") for c in counts]
        total = _int(doc["total"], f"{where}.total")
        if any(c < 0 for c in counts) or sum(counts) != total or total <= 0:
            raise CorruptModelError(f"{where}: leaf counts do not sum to total {total}")
        if _int(doc["depth"], f"{where}.depth") != depth:
            raise CorruptModelError(f"{where}: leaf depth {doc['depth']} != actual depth {depth}")
        return Leaf(tuple(counts), total, depth)
    _keys(doc, {"kind", "split", "p_adjusted", "statistic", "left", "right"}, where=where)
    split = doc["split"]
    if not isinstance(split, dict) or split.get("op") not in ("<=", "in"):
        raise CorruptModelError(f"{where}.split: op must be '<=' or 'in'")
    try:
        j = schema.index(split.get("covariate"))
    except KeyError:
        raise CorruptModelError(f"{where}.split: unknown covariate {split.get('covariate')!r}") from None
    cov = schema[j]
    if split["op"] == "<=":
        _keys(split, {"covariate", "op", "threshold"}, where=f"{where}.split")
        if cov.nominal:
            raise CorruptModelError(f"{where}.split: threshold split on nominal covariate {cov.name!r}")
        rule = SplitRule(j, threshold=_real(split["threshold"], f"{where}.split.threshold"))
    else:
        _keys(split, {"covariate", "op", "levels"}, where=f"{where}.split")
        if not cov.nominal:
            raise CorruptModelError(f"{where}.split: subset split on numeric covariate {cov.name!r}")
        levels = split["levels"]
        if not isinstance(levels, list) or any(l not in cov.levels for l in levels):
            raise CorruptModelError(f"{where}.split: levels must come from {list(cov.levels)}")
        if len(set(levels)) != len(levels) or not 0 < len(levels) < len(cov.levels):
            raise CorruptModelError(f"{where}.split: level subset must be a proper nonempty set")
        rule = SplitRule(j, left_levels=tuple(cov.levels.index(l) for l in levels))
    p = _real(doc["p_adjusted"], f"{where}.p_adjusted")
    if not 0 <= p <= 1:
        raise CorruptModelError(f"{where}.p_adjusted outside [0, 1]")
    return Decision(
        rule,
        p,
        _real(doc["statistic"], f"{where}.statistic"),
        _node_from(doc["left"], schema, depth + 1, f"{where}.left"),
        _node_from(doc["right"], schema, depth + 1, f"{where}.right"),
    )


def _check_version(version):
    if not isinstance(version, str):
        raise VersionError(f"format_version must be a string, got {version!r}")
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise VersionError(f"unreadable format_version {version!r}") from None
    if major != int(FORMAT_VERSION):
        raise VersionError(f"unsupported format_version {version!r}; this reader handles {FORMAT_VERSION}")


def from_document(doc: Mapping[str, Any]) -> RecommenderModel:
    if not isinstance(doc, dict):
        raise CorruptModelError("document must be a JSON object")
    if "format_version" in doc:
        _check_version(doc["format_version"])
    _keys(doc, _TOP_KEYS)
    if doc["elements"] != list(ELEMENTS):
        unknown = [e for e in doc["elements"] if e not in ELEMENTS] if isinstance(doc["elements"], list) else []
        raise CorruptModelError(
            f"unknown element name(s) {unknown}" if unknown else "element vocabulary must list the 21 elements in canonical order"
        )
    covariates = []
    if not isinstance(doc["schema"], list):
        raise CorruptModelError("schema must be a list")
    for i, entry in enumerate(doc["schema"]):
        where = f"schema[{i}]"
        if not isinstance(entry, dict):
            raise CorruptModelError(f"{where} must be an object")
        if entry.get("kind") == "nominal":
            _keys(entry, {"name", "kind", "levels"}, where=where)
        else:
            _keys(entry, {"name", "kind"}, where=where)
        try:
            covariates.append(Covariate(entry["name"], entry["kind"], entry.get("levels")))
        except (ValueError, TypeError) as exc:
            raise CorruptModelError(f"{where}: {exc}") from None
    try:
        schema = CovariateSchema(tuple(covariates))
    except ValueError as exc:
        raise CorruptModelError(str(exc)) from None
    meta = doc["metadata"]
    if not isinstance(meta, dict):
        raise CorruptModelError("metadata must be an object")
    _check_metadata(meta)
    try:
        CitConfig.from_dict(meta["config"])
    except (TypeError, ValueError) as exc:
        raise CorruptModelError(f"metadata.config: {exc}") from None
    if not isinstance(doc["trees"], list) or len(doc["trees"]) != 3:
        raise CorruptModelError("trees must hold exactly three rank trees")
    trees = tuple(_node_from(t, schema, 0, f"trees[{r}]") for r, t in enumerate(doc["trees"]))
    return RecommenderModel(trees, schema, dict(meta))


def loads(data: bytes | str) -> RecommenderModel:
    raw = data if isinstance(data, bytes) else data.encode("utf-8")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model is not UTF-8 (byte offset {exc.start})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"model parse error at byte offset {offset}: {exc.msg}") from None
    return from_document(doc)


def load(source: str | Path | IO[bytes]) -> RecommenderModel:
    if hasattr(source, "read"):
        return loads(source.read())
    return loads(Path(source).read_bytes())
