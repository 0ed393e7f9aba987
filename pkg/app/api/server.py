# app/api/server.py
import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional, Tuple

from app.core.config import ServiceConfig
from app.core.errors import InputValidationError
from app.services.prediction_service import MODEL_VERSION, Predictor

logger = logging.getLogger(__name__)

Response = Tuple[int, Any]


def _series_of(body: Any, position: Optional[int] = None) -> Any:
    where = "" if position is None else f" (item {position})"
    if not isinstance(body, dict) or "series" not in body:
        raise InputValidationError(f"Body must be an object with a 'series' array{where}")
    return body["series"]


def handle_request(predictor: Optional[Predictor], method: str, path: str, body: bytes = b"") -> Response:
    """
    Routes one request to a (status, JSON payload) pair without touching sockets.

    Args:
        predictor (Optional[Predictor]): The loaded model, or None when loading failed.
        method (str): 'GET' or 'POST'.
        path (str): Request path.
        body (bytes): Raw request body.

    Returns:
        Response: HTTP status code and a JSON-serializable payload.
    """
    route = path.split("?", 1)[0].rstrip("/") or "/"
    if (method, route) == ("GET", "/health"):
        if predictor is None:
            return HTTPStatus.SERVICE_UNAVAILABLE, {"status": "unavailable"}
        return HTTPStatus.OK, {
            "status": "ok",
            "model_version": MODEL_VERSION,
            "num_classes": predictor.loaded.num_classes,
            "series_length": predictor.loaded.series_length,
        }
    if route not in ("/classify", "/classify_batch") or method != "POST":
        return HTTPStatus.NOT_FOUND, {"error": f"No route for {method} {route}"}
    if predictor is None:
        return HTTPStatus.SERVICE_UNAVAILABLE, {"error": "Model not loaded"}

    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        return HTTPStatus.BAD_REQUEST, {"error": f"Malformed JSON: {exc}"}

    try:
        if route == "/classify":
            return HTTPStatus.OK, predictor.predict(_series_of(payload)).to_json()
        if not isinstance(payload, list):
            raise InputValidationError("Batch body must be an array of {'series': [...]} objects")
        results = []
        for position, item in enumerate(payload):
            try:
                results.append(predictor.predict(_series_of(item, position)).to_json())
            except InputValidationError as exc:
                raise InputValidationError(f"Item {position}: {exc}") from exc
        return HTTPStatus.OK, results
    except InputValidationError as exc:
        logger.warning("Rejected %s: %s", route, exc)
        return HTTPStatus.BAD_REQUEST, {"error": str(exc)}


class ClassificationHandler(BaseHTTPRequestHandler):
    server: "ClassificationServer"
    protocol_version = "HTTP/1.1"

    def do_GET(self):
        self._reply(*handle_request(self.server.predictor, "GET", self.path))

    def do_POST(self):
        raw_length = self.headers.get("Content-Length") or "0"
        try:
            length = int(raw_length)
        except ValueError:
            length = -1
        if length < 0:
            logger.warning("Rejected %s: bad Content-Length %r", self.path, raw_length)
            self.close_connection = True
            self._reply(HTTPStatus.BAD_REQUEST, {"error": f"Invalid Content-Length '{raw_length}'"})
            return
        if length > self.server.max_body:
            logger.warning("Rejected %s: body of %d bytes exceeds %d", self.path, length, self.server.max_body)
            self.close_connection = True
            self._reply(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": f"Body exceeds {self.server.max_body} bytes"})
            return
        body = self.rfile.read(length) if length else b""
        self._reply(*handle_request(self.server.predictor, "POST", self.path, body))

    def _reply(self, status: int, payload: Any):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format, *args):
        logger.debug("%s - %s", self.address_string(), format % args)


class ClassificationServer(ThreadingHTTPServer):
    """One read-only model shared by a thread per connection."""
    daemon_threads = True

    def __init__(self, predictor: Optional[Predictor], settings: ServiceConfig):
        super().__init__((settings.host, settings.port), ClassificationHandler)
        self.predictor = predictor
        self.max_body = settings.max_body


def serve(predictor: Optional[Predictor], settings: ServiceConfig):
    server = ClassificationServer(predictor, settings)
    host, port = server.server_address[:2]
    logger.info("Serving classification on http://%s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        logger.info("Shutting down")
    finally:
        server.server_close()
