"""Content-addressed report archive: a tiny HTTP server plus its upload client.

Endpoints::

    POST /upload            body: tar.gz of a run directory -> {"id": <sha256 hex>}
    GET  /reports           -> [{"id", "uploaded", "platform"}, ...]
    GET  /reports/<id>/...  static files of the unpacked report

The id is the SHA-256 of the uploaded bytes and ``pack_report`` produces
identical bytes for identical directory contents, so re-uploads are no-ops.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import mimetypes
import tarfile
import threading
import urllib.error
import urllib.request
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path, PurePosixPath

from qcal.errors import LayoutError, NetworkError, ServerRejected

log = logging.getLogger(__name__)

MAX_UPLOAD = 512 * 1024 * 1024


def pack_report(output_dir) -> bytes:
    """Deterministic tar.gz: sorted entries, zeroed owners and mtimes."""
    root = Path(output_dir)
    if not (root / "meta.json").is_file():
        raise LayoutError(f"{root} is not a run directory (no meta.json)")
    raw = io.BytesIO()
    with tarfile.open(fileobj=raw, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for path in sorted(p for p in root.rglob("*") if p.is_file() and not p.name.endswith(".tmp")):
            rel = path.relative_to(root).as_posix()
            info = tarfile.TarInfo(rel)
            data = path.read_bytes()
            info.size = len(data)
            info.mode = 0o644
            info.mtime = 0
            tar.addfile(info, io.BytesIO(data))
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0, filename="") as gz:
        gz.write(raw.getvalue())
    return buf.getvalue()


def content_id(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def upload_report(output_dir, archive_url: str, timeout: float = 30.0) -> str:
    blob = pack_report(output_dir)
    url = archive_url.rstrip("/") + "/upload"
    req = urllib.request.Request(url, data=blob, method="POST", headers={"Content-Type": "application/gzip"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = resp.read()
    except urllib.error.HTTPError as exc:
        raise ServerRejected(exc.code, exc.read().decode(errors="replace")) from None
    except (urllib.error.URLError, OSError) as exc:
        raise NetworkError(f"cannot reach {url}: {getattr(exc, 'reason', exc)}") from None
    try:
        return json.loads(body)["id"]
    except (ValueError, KeyError, TypeError):
        raise ServerRejected(200, body.decode(errors="replace")) from None


class ArchiveStore:
    """Filesystem storage: ``<root>/<id>/`` per report and ``<root>/index.json``."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()

    @property
    def index_path(self) -> Path:
        return self.root / "index.json"

    def entries(self) -> list[dict]:
        if not self.index_path.exists():
            return []
        return json.loads(self.index_path.read_text())

    def add(self, blob: bytes) -> str:
        members = unpack(blob)  # validates before anything touches disk
        rid = content_id(blob)
        with self.lock:
            entries = self.entries()
            if any(e["id"] == rid for e in entries):
                return rid
            dest = self.root / rid
            for rel, data in members.items():
                path = dest / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(data)
            try:
                platform = json.loads(members["meta.json"]).get("platform")
            except ValueError:
                platform = None
            entries.append({"id": rid, "uploaded": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                            "platform": platform})
            tmp = self.index_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(entries, indent=2))
            tmp.replace(self.index_path)
        return rid

    def resolve(self, rid: str, rel: str) -> Path | None:
        if not any(e["id"] == rid for e in self.entries()):
            return None
        base = (self.root / rid).resolve()
        path = (base / (rel or "index.html")).resolve()
        if base not in path.parents and path != base:
            return None
        if path.is_dir():
            path = path / "index.html"
        return path if path.is_file() else None


def unpack(blob: bytes) -> dict[str, bytes]:
    """Return ``{relative path: bytes}``; ValueError on anything suspicious."""
    try:
        with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
            out = {}
            for m in tar.getmembers():
                if m.isdir():
                    continue
                if not m.isfile():
                    raise ValueError(f"unsupported member type: {m.name}")
                rel = PurePosixPath(m.name)
                if rel.is_absolute() or ".." in rel.parts:
                    raise ValueError(f"unsafe path: {m.name}")
                out[rel.as_posix()] = tar.extractfile(m).read()
    except (tarfile.TarError, OSError, EOFError, gzip.BadGzipFile) as exc:
        raise ValueError(f"malformed archive: {exc}") from None
    if "meta.json" not in out:
        raise ValueError("archive has no meta.json")
    return out


class ArchiveHandler(BaseHTTPRequestHandler):
    store: ArchiveStore
    server_version = "qcal-archive"

    def log_message(self, format, *args):
        log.debug("%s - " + format, self.address_string(), *args)

    def _send(self, status: int, body: bytes, ctype: str = "application/json"):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj):
        self._send(status, json.dumps(obj).encode())

    def do_POST(self):
        if self.path.rstrip("/") != "/upload":
            return self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            return self._json(HTTPStatus.LENGTH_REQUIRED, {"error": "Content-Length required"})
        if length <= 0 or length > MAX_UPLOAD:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": "bad upload size"})
        blob = self.rfile.read(length)
        try:
            rid = self.store.add(blob)
        except ValueError as exc:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        self._json(HTTPStatus.OK, {"id": rid})

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path.rstrip("/") == "/reports":
            return self._json(HTTPStatus.OK, self.store.entries())
        parts = path.split("/", 3)
        if len(parts) >= 3 and parts[1] == "reports":
            rid = parts[2]
            if len(parts) == 3:  # /reports/<id> without the slash
                self.send_response(HTTPStatus.MOVED_PERMANENTLY)
                self.send_header("Location", f"/reports/{rid}/")
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            target = self.store.resolve(rid, parts[3])
            if target is not None:
                ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
                return self._send(HTTPStatus.OK, target.read_bytes(), ctype)
        self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})


def make_archive_server(storage_dir, port: int = 8000, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    handler = type("BoundArchiveHandler", (ArchiveHandler,), {"store": ArchiveStore(storage_dir)})
    return ThreadingHTTPServer((host, port), handler)


def serve_archive(storage_dir, port: int = 8000, host: str = "127.0.0.1") -> None:
    server = make_archive_server(storage_dir, port, host)
    log.info("archive serving %s on http://%s:%d", storage_dir, host, server.server_address[1])
    server.serve_forever()
