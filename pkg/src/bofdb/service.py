"""Line-protocol TCP service.

A client sends one statement terminated by ``;`` and a newline. The server
answers with a tab-separated header line, one line per row and a blank line,
or with ``ERR <code> <message>`` followed by a blank line. Sessions stay open
after errors.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from .errors import BofdbError, ModelNotLoaded
from .pipeline import load_trained
from .query import Executor, parse, render_value
from .store import Store

logger = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    server: "BofdbServer"

    def handle(self):
        pending = []
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
            if not pending and not line.strip():
                continue
            pending.append(line)
            if line.rstrip().endswith(";"):
                reply = self.server.answer("\n".join(pending))
                pending = []
                self.wfile.write(reply.encode("utf-8"))
                self.wfile.flush()


def format_error(code: str, message: str) -> str:
    return f"ERR {code} {' '.join(str(message).split())}\n\n"


class BofdbServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: Store, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.store = store
        self._model_lock = threading.Lock()
        self._model_id = None
        self._trained = (None, None, None)
        self._thread = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def trained(self):
        """Current (dictionary, model, extractor), reloaded when a newer model is stored."""
        latest = self.store.latest_model()
        with self._model_lock:
            if latest is not None and latest[0] != self._model_id:
                self._trained = load_trained(self.store)
                self._model_id = latest[0]
            return self._trained

    def answer(self, text: str) -> str:
        try:
            ast = parse(text)
            dictionary, model, extractor = self.trained()
            result = Executor(self.store, model, dictionary, extractor).execute(ast)
        except BofdbError as exc:
            return format_error(exc.code, exc)
        except Exception as exc:  # keep the session alive on unexpected failures
            logger.exception("statement failed")
            return format_error("INTERNAL", f"{type(exc).__name__}: {exc}")
        lines = ["\t".join(result.columns)]
        lines.extend("\t".join(render_value(v) for v in row) for row in result.rows)
        return "\n".join(lines) + "\n\n"

    def start(self) -> "BofdbServer":
        """Serve from a background thread."""
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()


def serve(store: Store, port: int, host: str = "127.0.0.1") -> BofdbServer:
    """Start the service in the background and return it."""
    return BofdbServer(store, host, port).start()


class Client:
    """Minimal blocking client for the line protocol."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("rb")

    def query(self, statement: str) -> tuple[list[str], list[list[str]]]:
        """Send one statement; raise BofdbError on an ``ERR`` reply."""
        statement = statement.strip()
        if not statement.endswith(";"):
            statement += ";"
        self.sock.sendall(statement.encode("utf-8") + b"\n")
        lines = []
        while True:
            raw = self.reader.readline()
            if not raw:
                raise ConnectionError("server closed the connection")
            line = raw.decode("utf-8").rstrip("\n")
            if line == "":
                break
            lines.append(line)
        if lines and lines[0].startswith("ERR "):
            _, code, *rest = lines[0].split(" ", 2)
            err = ModelNotLoaded if code == ModelNotLoaded.code else BofdbError
            exc = err(rest[0] if rest else "")
            exc.code = code
            raise exc
        header = lines[0].split("\t") if lines else []
        return header, [line.split("\t") for line in lines[1:]]

    def close(self) -> None:
        self.reader.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
