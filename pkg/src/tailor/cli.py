"""Command-line entry point: filter, stats, train, rate, recommend, export, serve.

Exit status is 0 on success, 1 on a usage error (bad flags, missing model
path) and 2 on a data error (malformed CSV, corrupt model, invalid query).
Query fields are passed as repeated ``--set key=value`` flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

from . import codegen, model_io
from .cit import POLICIES, CitConfig, n_leaves
from .recommender import (
    Query,
    QueryError,
    feature_importance,
    format_importance,
    rate,
    recommend_from_table,
    recommended_ratings,
    train,
)
from .survey import SurveyError, consistency_filter, parse_wide_csv, summarize, write_wide_csv

MODEL_ENV = "TAILOR_MODEL"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _aligned(rows) -> str:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _model_path(args) -> Path:
    path = args.model or os.environ.get(MODEL_ENV)
    if not path:
        raise UsageError(f"no model given: pass --model or set {MODEL_ENV}")
    return Path(path)


def _load_model(args):
    path = _model_path(args)
    try:
        return model_io.load(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    except model_io.ModelFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_records(path: str):
    try:
        return parse_wide_csv(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    except SurveyError as exc:
        raise DataError(f"{path}: {exc}") from None


def _query(pairs) -> Query:
    values = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        if key in values:
            raise UsageError(f"--set {key} given twice")
        values[key] = value.strip()
    try:
        return Query.from_mapping(values)
    except QueryError as exc:
        raise DataError(f"query: {exc}") from None


# -- subcommands --------------------------------------------------------------


def cmd_filter(args, out):
    records = _read_records(args.input)
    try:
        result = consistency_filter(records, args.min_matches)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_wide_csv(result.kept, args.output)
    rows = [("respondent_id", "attention_lat", "match_count", "kept")]
    rows += [(r.respondent_id, r.attention_lat.name, r.match_count, "yes" if r.kept else "no") for r in result.report]
    if args.report:
        Path(args.report).write_text(_csv_text(rows), encoding="utf-8")
    if args.format == "csv":
        out.write(_csv_text(rows))
    else:
        out.write(_aligned(rows))
        out.write(f"kept {len(result.kept)}, discarded {len(result.discarded)}\n")


def cmd_stats(args, out):
    summary = summarize(_read_records(args.input))
    if args.format == "csv":
        out.write(_csv_text([("field", "level", "count", "value")] + summary.rows()))
    else:
        out.write(summary.format() + "\n")


def cmd_train(args, out):
    try:
        config = CitConfig(
            alpha=args.alpha,
            test_statistic=args.test,
            p_value_method=args.pvalues,
            n_permutations=args.permutations,
            min_split=args.min_split,
            min_bucket=args.min_bucket,
            max_depth=args.max_depth,
            rng_seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = _read_records(args.input)
    try:
        model = train(records, config, policy=args.policy, lat_ordinal=args.lat_ordinal, timestamp=args.timestamp)
    except ValueError as exc:
        raise DataError(f"{args.input}: {exc}") from None
    size = model_io.save(model, args.output)
    leaves = [n_leaves(t) for t in model.trees]
    out.write(f"wrote {args.output} ({size} bytes); leaves per rank tree: {leaves[0]}, {leaves[1]}, {leaves[2]}\n")
    out.write(format_importance(feature_importance(model)) + "\n")


def cmd_rate(args, out):
    model = _load_model(args)
    table = _rate(model, _query(args.set))
    out.write(table.to_csv() if args.format == "csv" else table.format() + "\n")


def _rate(model, query):
    try:
        return rate(model, query)
    except QueryError as exc:
        raise DataError(f"query: {exc}") from None


def cmd_recommend(args, out):
    model = _load_model(args)
    table = _rate(model, _query(args.set))
    picks = recommend_from_table(table, args.k, args.mode)
    ratings = recommended_ratings(table, picks)
    rows = [(i + 1, e, min(i + 1, 3), f"{r:.3f}") for i, (e, r) in enumerate(zip(picks, ratings))]
    if args.format == "csv":
        out.write(_csv_text([("position", "element", "rank", "rating")] + [(p, e, k, repr(r)) for (p, e, k, _), r in zip(rows, ratings)]))
    else:
        out.write(", ".join(picks) + "\n")
        out.write(_aligned([("position", "element", "rank", "rating")] + rows))


def cmd_export(args, out):
    model = _load_model(args)
    dest = Path(args.output)
    dest.mkdir(parents=True, exist_ok=True)
    if args.dialect == "rules":
        written = [dest / "rules.csv", dest / f"model{model_io.SUFFIX}"]
        written[0].write_text(codegen.rules_to_csv(codegen.emit_rules(model)), encoding="utf-8")
        model_io.save(model, written[1])
    else:
        dialect = codegen.DIALECTS[args.dialect]
        written = [dest / dialect.filename]
        written[0].write_text(codegen.emit_conditional_source(model, dialect), encoding="utf-8")
    for path in written:
        out.write(f"{path}\n")


def cmd_serve(args, out):
    from .service import make_server

    model = _load_model(args)
    try:
        server = make_server(model, args.host, args.port)
    except OSError as exc:
        raise DataError(f"cannot bind {args.host}:{args.port}: {exc.strerror or exc}") from None
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailor", description="Personalized game-element recommendations from survey data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def fmt(p):
        p.add_argument("--format", choices=("text", "csv"), default="text")

    def model(p):
        p.add_argument("--model", help=f"model file (default: ${MODEL_ENV})")

    p = sub.add_parser("filter", help="drop respondents failing the repeated-item check")
    p.add_argument("input")
    p.add_argument("--min-matches", type=int, default=2)
    p.add_argument("--output", required=True, help="CSV of kept respondents")
    p.add_argument("--report", help="also write the per-respondent report as CSV")
    fmt(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stats", help="descriptive summary of a survey file")
    p.add_argument("input")
    fmt(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="grow the three rank trees and save the model")
    p.add_argument("input")
    p.add_argument("--output", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-split", type=int, default=20)
    p.add_argument("--min-bucket", type=int, default=7)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--test", choices=("quadratic", "maximum"), default="quadratic")
    p.add_argument("--pvalues", choices=("asymptotic", "monte_carlo"), default="asymptotic")
    p.add_argument("--permutations", type=int, default=9999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=POLICIES, default="error")
    p.add_argument("--lat-ordinal", action="store_true", help="treat LAT as ordered 1..6")
    p.add_argument("--timestamp", help="trained_at value (default: $SOURCE_DATE_EPOCH or now)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rate", help="21x3 rating table for one query")
    model(p)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="query field (repeatable)")
    fmt(p)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("recommend", help="top-k elements for one query")
    model(p)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="query field (repeatable)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--mode", choices=("raw", "distinct"), default="raw")
    fmt(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("export", help="rule table CSV or conditional source")
    model(p)
    p.add_argument("--dialect", choices=("rules",) + tuple(codegen.DIALECTS), default="rules")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="HTTP/JSON recommendation service")
    model(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="default: $TAILOR_PORT or 8080")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "k", None) is not None and not 1 <= args.k <= 21:
            raise UsageError("--k must lie in 1..21")
        args.func(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    sys.exit(main())
