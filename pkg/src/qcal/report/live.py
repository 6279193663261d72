"""Watch-only live view of a run directory.

Each request re-renders the report from whatever is on disk. The body is
exactly what :func:`qcal.report.html.render_report` produces; refreshing is
driven by an HTTP ``Refresh`` header so the page itself stays identical to
the static report once the run has finished.
"""

from __future__ import annotations

import logging
import mimetypes
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from qcal.errors import LayoutError
from qcal.report.html import page, render_report

log = logging.getLogger(__name__)


def waiting_page(output_dir) -> bytes:
    return page("qcal live", ["<h1>Waiting for run</h1>",
                              f'<p class="note">no run data in {output_dir} yet</p>'])


class LiveHandler(BaseHTTPRequestHandler):
    output_dir: Path
    refresh: float
    server_version = "qcal-live"

    def log_message(self, format, *args):
        log.debug("%s - " + format, self.address_string(), *args)

    def do_GET(self):
        rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
        try:
            files = render_report(self.output_dir, live=True)
        except LayoutError:
            files = {"index.html": waiting_page(self.output_dir)}
        body = files.get(rel)
        if body is None:
            self.send_response(HTTPStatus.NOT_FOUND)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self.send_response(HTTPStatus.OK)
        self.send_header("Content-Type", mimetypes.guess_type(rel)[0] or "application/octet-stream")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Cache-Control", "no-store")
        if rel == "index.html":
            self.send_header("Refresh", f"{self.refresh:g}")
        self.end_headers()
        self.wfile.write(body)


def make_live_server(output_dir, port: int = 8001, refresh: float = 2.0, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    attrs = {"output_dir": Path(output_dir), "refresh": refresh}
    handler = type("BoundLiveHandler", (LiveHandler,), attrs)
    return ThreadingHTTPServer((host, port), handler)


def serve_live(output_dir, port: int = 8001, refresh: float = 2.0, host: str = "127.0.0.1") -> None:
    server = make_live_server(output_dir, port, refresh, host)
    log.info("live view of %s on http://%s:%d", output_dir, host, server.server_address[1])
    server.serve_forever()
