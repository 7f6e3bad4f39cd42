"""Export trained trees as flat rule tables or as nested if/else source text.

Nominal predicates are emitted so that the *heavier* child of a split is the
``not in`` side. A level unknown to the schema therefore lands in the same
branch as under the ``majority-branch`` routing policy, and every rule can be
checked on its own without relying on else-ordering.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import cit
from .cit import CovariateSchema, Decision, Leaf, TreeNode
from .recommender import RANKS, Query, QueryError, RatingTable, RecommenderModel
from .survey import ELEMENTS, N_ELEMENTS, Lat

OPERATORS = ("<=", ">", "in", "not in")


class RuleMatchError(LookupError):
    pass


class DialectError(ValueError):
    pass


@dataclass(frozen=True)
class Predicate:
    covariate: str
    op: str
    operand: float | tuple[str, ...]

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}")

    def holds(self, value) -> bool:
        if self.op == "<=":
            return value <= self.operand
        if self.op == ">":
            return value > self.operand
        if self.op == "in":
            return value in self.operand
        return value not in self.operand

    def __str__(self):
        if self.op in ("in", "not in"):
            return f"{self.covariate} {self.op} {{{', '.join(self.operand)}}}"
        return f"{self.covariate} {self.op} {self.operand!r}"


@dataclass(frozen=True)
class Rule:
    rule_id: int
    rank: int
    predicates: tuple[Predicate, ...]
    counts: tuple[int, ...]
    total: int

    def matches(self, values: Mapping[str, object]) -> bool:
        return all(p.holds(values[p.covariate]) for p in self.predicates)


@dataclass(frozen=True)
class RuleTable:
    rules: tuple[Rule, ...]
    schema: CovariateSchema
    policy: str = "error"
    lat_ordinal: bool = False
    elements: tuple[str, ...] = ELEMENTS

    def for_rank(self, rank: int) -> list[Rule]:
        return [r for r in self.rules if r.rank == rank]


def _split_predicates(node: Decision, schema: CovariateSchema) -> tuple[Predicate, Predicate]:
    cov = schema[node.split.covariate]
    if not node.split.nominal:
        t = float(node.split.threshold)
        return Predicate(cov.name, "<=", t), Predicate(cov.name, ">", t)
    left = tuple(cov.levels[i] for i in node.split.left_levels)
    right = tuple(l for l in cov.levels if l not in left)
    if node.majority_goes_left():
        return Predicate(cov.name, "not in", right), Predicate(cov.name, "in", right)
    return Predicate(cov.name, "in", left), Predicate(cov.name, "not in", left)


def emit_rules(model: RecommenderModel) -> RuleTable:
    """One rule per (leaf, rank), collected depth-first, left to right."""
    rules: list[Rule] = []

    def walk(node: TreeNode, rank: int, path: tuple[Predicate, ...]):
        if isinstance(node, Leaf):
            rules.append(Rule(len(rules) + 1, rank, path, node.counts, node.total))
            return
        lp, rp = _split_predicates(node, model.schema)
        walk(node.left, rank, path + (lp,))
        walk(node.right, rank, path + (rp,))

    for rank, tree in zip(RANKS, model.trees):
        walk(tree, rank, ())
    return RuleTable(tuple(rules), model.schema, model.policy, bool(model.metadata.get("lat_ordinal")))


def canonical_values(schema: CovariateSchema, query, policy: str = "error", lat_ordinal: bool = False) -> dict:
    """Query covariates spelled as in the schema (nominal) or as floats (numeric)."""
    if not isinstance(query, Query):
        query = Query.from_mapping(query)
    raw = query.covariates()
    if lat_ordinal:
        raw["lat"] = int(Lat.parse(raw["lat"]))
    out = {}
    for cov in schema:
        try:
            out[cov.name] = cov.canonical(raw[cov.name], policy)
        except cit.UnseenLevelError as exc:
            raise QueryError(str(exc), exc.covariate, 422) from None
    return out


def evaluate_rules(table: RuleTable, query) -> RatingTable:
    values = canonical_values(table.schema, query, table.policy, table.lat_ordinal)
    columns = []
    for rank in RANKS:
        hits = [r for r in table.for_rank(rank) if r.matches(values)]
        if len(hits) != 1:
            raise RuleMatchError(f"rank {rank}: {len(hits)} rules match; expected exactly one")
        columns.append(np.asarray(hits[0].counts, dtype=float) / hits[0].total)
    return RatingTable(np.column_stack(columns))


def rules_to_csv(table: RuleTable) -> str:
    """One row per rule predicate (a single blank-predicate row for unconditional rules)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rule_id", "rank", "total", "counts", "predicate", "covariate", "operator", "operand"])
    for rule in table.rules:
        counts = " ".join(str(c) for c in rule.counts)
        preds = rule.predicates or (None,)
        for i, p in enumerate(preds, start=1):
            if p is None:
                writer.writerow([rule.rule_id, rule.rank, rule.total, counts, 0, "", "", ""])
                continue
            operand = "|".join(p.operand) if isinstance(p.operand, tuple) else repr(p.operand)
            writer.writerow([rule.rule_id, rule.rank, rule.total, counts, i, p.covariate, p.op, operand])
    return buf.getvalue()


# -- conditional source -------------------------------------------------------

REQUIRED_TOKENS = (
    "function_open",
    "function_close",
    "if_open",
    "elif_open",
    "else_open",
    "block_close",
    "le",
    "gt",
    "member_in",
    "member_not_in",
    "var",
    "return_vector",
)


@dataclass(frozen=True)
class Dialect:
    """Template descriptor for emitted source.

    ``tokens`` maps each name in :data:`REQUIRED_TOKENS` to a ``str.format``
    template. Placeholders: ``{name}`` (function), ``{cond}``, ``{var}``,
    ``{value}``, ``{values}``, ``{key}``, ``{counts}``, ``{total}``. An empty
    template suppresses the line (e.g. Python has no block terminators).
    """

    name: str
    extension: str
    tokens: Mapping[str, str]
    indent: str = "    "
    prologue: str = ""
    epilogue: str = ""

    def __post_init__(self):
        missing = [t for t in REQUIRED_TOKENS if t not in self.tokens]
        if missing:
            raise DialectError(f"dialect {self.name!r} is missing token(s) {missing}")

    @property
    def filename(self) -> str:
        return f"recommender.{self.extension}"


def _literal(value) -> str:
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    return repr(float(value))


PSEUDOCODE = Dialect(
    name="pseudocode",
    extension="pseudo",
    tokens={
        "function_open": "FUNCTION {name}(q)",
        "function_close": "END FUNCTION",
        "if_open": "IF {cond} THEN",
        "elif_open": "ELSE IF {cond} THEN",
        "else_open": "ELSE",
        "block_close": "END IF",
        "le": "{var} <= {value}",
        "gt": "{var} > {value}",
        "member_in": "{var} IN {{{values}}}",
        "member_not_in": "{var} NOT IN {{{values}}}",
        "var": "q.{key}",
        "return_vector": "RETURN COUNTS [{counts}] TOTAL {total}",
    },
    indent="  ",
)

PYTHON = Dialect(
    name="python",
    extension="py",
    tokens={
        "function_open": "def {name}(q):",
        "function_close": "",
        "if_open": "if {cond}:",
        "elif_open": "elif {cond}:",
        "else_open": "else:",
        "block_close": "",
        "le": "{var} <= {value}",
        "gt": "{var} > {value}",
        "member_in": "{var} in ({values},)",
        "member_not_in": "{var} not in ({values},)",
        "var": "q[{key}]",
        "return_vector": "return [{counts}], {total}",
    },
)

JAVASCRIPT = Dialect(
    name="javascript",
    extension="js",
    tokens={
        "function_open": "function {name}(q) {{",
        "function_close": "}}",
        "if_open": "if ({cond}) {{",
        "elif_open": "}} else if ({cond}) {{",
        "else_open": "}} else {{",
        "block_close": "}}",
        "le": "{var} <= {value}",
        "gt": "{var} > {value}",
        "member_in": "[{values}].includes({var})",
        "member_not_in": "![{values}].includes({var})",
        "var": "q[{key}]",
        "return_vector": "return {{counts: [{counts}], total: {total}}};",
    },
    indent="  ",
    prologue='"use strict";',
    epilogue="module.exports = {{rank1, rank2, rank3}};",
)

DIALECTS = {d.name: d for d in (PSEUDOCODE, PYTHON, JAVASCRIPT)}


def _condition(pred: Predicate, dialect: Dialect) -> str:
    t = dialect.tokens
    var = t["var"].format(key=json.dumps(pred.covariate) if "[" in t["var"] else pred.covariate)
    if pred.op == "<=":
        return t["le"].format(var=var, value=_literal(pred.operand))
    if pred.op == ">":
        return t["gt"].format(var=var, value=_literal(pred.operand))
    values = ", ".join(_literal(v) for v in pred.operand)
    return t["member_in" if pred.op == "in" else "member_not_in"].format(var=var, values=values)


def _emit_node(node: TreeNode, schema, dialect: Dialect, depth: int, out: list[str]):
    t = dialect.tokens

    def line(template: str, d: int = depth, **kw):
        text = template.format(**kw)
        if text:
            out.append(dialect.indent * d + text)

    if isinstance(node, Leaf):
        line(t["return_vector"], counts=", ".join(str(c) for c in node.counts), total=node.total)
        return
    # flatten the right spine into an if / else-if / else chain
    lp, _ = _split_predicates(node, schema)
    line(t["if_open"], cond=_condition(lp, dialect))
    _emit_node(node.left, schema, dialect, depth + 1, out)
    rest = node.right
    while isinstance(rest, Decision):
        lp, _ = _split_predicates(rest, schema)
        line(t["elif_open"], cond=_condition(lp, dialect))
        _emit_node(rest.left, schema, dialect, depth + 1, out)
        rest = rest.right
    line(t["else_open"])
    _emit_node(rest, schema, dialect, depth + 1, out)
    line(t["block_close"])


def emit_conditional_source(model: RecommenderModel, dialect: Dialect | str = PSEUDOCODE) -> str:
    """Source text defining ``rank1``/``rank2``/``rank3`` functions, each returning
    the integer counts and total of the matching leaf.

    Else-if branches fall through in order, so the chain reproduces the tree's
    routing; the query must hold schema-spelled values (see :func:`canonical_values`).
    """
    if isinstance(dialect, str):
        try:
            dialect = DIALECTS[dialect]
        except KeyError:
            raise DialectError(f"unknown dialect {dialect!r}; choose from {sorted(DIALECTS)}") from None
    elif isinstance(dialect, Mapping):
        dialect = Dialect(**dialect)
    out: list[str] = []
    if dialect.prologue:
        out.append(dialect.prologue.format())
    for rank, tree in zip(RANKS, model.trees):
        if out:
            out.append("")
        out.append(dialect.tokens["function_open"].format(name=f"rank{rank}"))
        _emit_node(tree, model.schema, dialect, 1, out)
        close = dialect.tokens["function_close"].format()
        if close:
            out.append(close)
    if dialect.epilogue:
        out.append("")
        out.append(dialect.epilogue.format())
    return "\n".join(out) + "\n"


# -- pseudocode interpreter ---------------------------------------------------

_FUNC = re.compile(r"^FUNCTION (rank[123])\(q\)$")
_IF = re.compile(r"^(IF|ELSE IF) (.+) THEN$")
_RET = re.compile(r"^RETURN COUNTS \[([0-9, ]*)\] TOTAL ([0-9]+)$")
_CMP = re.compile(r"^q\.(\w+) (<=|>) (\S+)$")
_MEM = re.compile(r"^q\.(\w+) (IN|NOT IN) \{(.*)\}$")


class PseudocodeError(ValueError):
    pass


def _parse_condition(text: str) -> Predicate:
    m = _CMP.match(text)
    if m:
        return Predicate(m.group(1), m.group(2), float(m.group(3)))
    m = _MEM.match(text)
    if m:
        try:
            values = tuple(json.loads(f"[{m.group(3)}]"))
        except json.JSONDecodeError as exc:
            raise PseudocodeError(f"bad set literal in {text!r}: {exc}") from None
        return Predicate(m.group(1), "in" if m.group(2) == "IN" else "not in", values)
    raise PseudocodeError(f"unrecognised condition {text!r}")


def _parse_block(lines: list[str], pos: int):
    """Parse one statement starting at ``pos``; return ``(node, next_pos)``.

    node := ("return", counts, total) | ("if", [(predicate, node), ...], else_node)
    """
    text = lines[pos]
    m = _RET.match(text)
    if m:
        counts = tuple(int(c) for c in m.group(1).split(",")) if m.group(1).strip() else ()
        return ("return", counts, int(m.group(2))), pos + 1
    m = _IF.match(text)
    if not m or m.group(1) != "IF":
        raise PseudocodeError(f"line {pos + 1}: expected IF or RETURN, got {text!r}")
    branches = []
    cond = _parse_condition(m.group(2))
    body, pos = _parse_block(lines, pos + 1)
    branches.append((cond, body))
    while True:
        text = lines[pos]
        m = _IF.match(text)
        if m and m.group(1) == "ELSE IF":
            cond = _parse_condition(m.group(2))
            body, pos = _parse_block(lines, pos + 1)
            branches.append((cond, body))
            continue
        if text == "ELSE":
            other, pos = _parse_block(lines, pos + 1)
            if lines[pos] != "END IF":
                raise PseudocodeError(f"line {pos + 1}: expected END IF")
            return ("if", branches, other), pos + 1
        raise PseudocodeError(f"line {pos + 1}: expected ELSE IF or ELSE, got {text!r}")


def parse_pseudocode(source: str) -> dict[str, tuple]:
    lines = [l.strip() for l in source.splitlines()]
    lines = [l for l in lines if l and not l.startswith("#")]
    functions = {}
    pos = 0
    try:
        while pos < len(lines):
            m = _FUNC.match(lines[pos])
            if not m:
                raise PseudocodeError(f"line {pos + 1}: expected FUNCTION, got {lines[pos]!r}")
            body, pos = _parse_block(lines, pos + 1)
            if lines[pos] != "END FUNCTION":
                raise PseudocodeError(f"line {pos + 1}: expected END FUNCTION")
            functions[m.group(1)] = body
            pos += 1
    except IndexError:
        raise PseudocodeError("unexpected end of source") from None
    return functions


def _run(node, values):
    while node[0] == "if":
        _, branches, other = node
        for pred, body in branches:
            if pred.holds(values[pred.covariate]):
                node = body
                break
        else:
            node = other
    return node[1], node[2]


class PseudocodeProgram:
    """Interpreter for the reference pseudocode dialect."""

    def __init__(self, source: str):
        self.functions = parse_pseudocode(source)
        missing = [f"rank{r}" for r in RANKS if f"rank{r}" not in self.functions]
        if missing:
            raise PseudocodeError(f"missing function(s) {missing}")

    def call(self, name: str, values: Mapping[str, object]) -> tuple[tuple[int, ...], int]:
        return _run(self.functions[name], values)

    def rate(self, values: Mapping[str, object]) -> RatingTable:
        columns = []
        for rank in RANKS:
            counts, total = self.call(f"rank{rank}", values)
            if len(counts) != N_ELEMENTS:
                raise PseudocodeError(f"rank{rank} returned {len(counts)} counts")
            columns.append(np.asarray(counts, dtype=float) / total)
        return RatingTable(np.column_stack(columns))


def interpret_pseudocode(source: str, model_or_schema, query) -> RatingTable:
    """Run emitted pseudocode for a query, validating it against the model schema first."""
    if isinstance(model_or_schema, RecommenderModel):
        schema, policy = model_or_schema.schema, model_or_schema.policy
        lat_ordinal = bool(model_or_schema.metadata.get("lat_ordinal"))
    else:
        schema, policy, lat_ordinal = model_or_schema, "error", False
    values = canonical_values(schema, query, policy, lat_ordinal)
    return PseudocodeProgram(source).rate(values)
