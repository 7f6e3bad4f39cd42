"""HTTP/JSON facade over a loaded recommender model.

Endpoints:
    POST /v1/recommendations   query fields (+ optional k, mode) -> ratings and top picks
    GET  /v1/model/meta        model metadata and feature importance

The model is read-only after startup; handlers share it without locking.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import cit
from .recommender import (
    FORMAT_VERSION,
    Query,
    QueryError,
    RecommenderModel,
    covariates_used,
    feature_importance,
    rate,
    recommend_from_table,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 8080
MAX_BODY = 1 << 20


def _num(x: float) -> float:
    """Round to 9 significant digits for the wire."""
    return float(f"{x:.9g}")


class RecommenderService:
    """Request handling independent of the HTTP transport."""

    def __init__(self, model: RecommenderModel | None):
        self.model = model

    def recommend(self, body: bytes) -> tuple[int, dict]:
        if self.model is None:
            return 503, {"error": "model not loaded"}
        try:
            payload = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return 400, {"error": f"malformed JSON body: {exc}"}
        if not isinstance(payload, dict):
            return 400, {"error": "request body must be a JSON object"}
        payload = dict(payload)
        k = payload.pop("k", 3)
        mode = payload.pop("mode", "raw")
        if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= 21:
            return 400, {"error": "k must be an integer in 1..21", "field": "k"}
        if mode not in ("raw", "distinct"):
            return 400, {"error": "mode must be 'raw' or 'distinct'", "field": "mode"}
        try:
            query = Query.from_mapping(payload)
            table = rate(self.model, query)
        except QueryError as exc:
            return exc.status, {"error": str(exc), "field": exc.field}
        top = recommend_from_table(table, k, mode)
        return 200, {
            "ratings": {e: [_num(v) for v in row] for e, row in table.as_dict().items()},
            "top": top,
            "k": k,
            "mode": mode,
            "model_version": FORMAT_VERSION,
            "policy_applied": self.model.policy,
        }

    def meta(self) -> tuple[int, dict]:
        if self.model is None:
            return 503, {"error": "model not loaded"}
        m = self.model
        importance = feature_importance(m)
        return 200, {
            "format_version": FORMAT_VERSION,
            "trained_at": m.metadata.get("trained_at"),
            "n_records": m.metadata.get("n_records"),
            "n_observations": m.metadata.get("n_observations"),
            "policy": m.policy,
            "config": m.metadata.get("config"),
            "covariates": list(m.schema.names),
            "covariates_used": {f"rank{r + 1}": used for r, used in enumerate(covariates_used(m))},
            "importance": {name: list(levels) for name, levels in importance.items()},
            "n_leaves": [cit.n_leaves(t) for t in m.trees],
        }


def _encode(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")


def make_handler(service: RecommenderService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "tailor/1"

        def _send(self, status: int, payload: dict):
            body = _encode(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            if self.path != "/v1/recommendations":
                self._send(404, {"error": f"no route for POST {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if not 0 <= length <= MAX_BODY:
                self._send(400, {"error": "invalid Content-Length"})
                return
            self._send(*service.recommend(self.rfile.read(length)))

        def do_GET(self):
            if self.path != "/v1/model/meta":
                self._send(404, {"error": f"no route for GET {self.path}"})
                return
            self._send(*service.meta())

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(model: RecommenderModel | None, host: str = "127.0.0.1", port: int | None = None) -> ThreadingHTTPServer:
    """Bind a server for ``model``; port defaults to ``TAILOR_PORT`` or 8080. Port 0 picks a free one."""
    if port is None:
        port = int(os.environ.get("TAILOR_PORT", DEFAULT_PORT))
    server = ThreadingHTTPServer((host, port), make_handler(RecommenderService(model)))
    server.daemon_threads = True
    return server


def serve_in_background(model: RecommenderModel | None, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns ``(server, base_url)``. Call ``server.shutdown()`` to stop."""
    server = make_server(model, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"

