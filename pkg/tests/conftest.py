from __future__ import annotations

import threading
import time
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from birdsi.groundtruth import compile_ground_truth, scan_collection


def make_tree(root: Path, n_categories: int, per_category: int, tag: str = "") -> Path:
    """Categorized image tree with byte-distinct files."""
    for c in range(n_categories):
        d = root / f"cat{c:03d}"
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_category):
            (d / f"img{i:04d}.jpg").write_bytes(f"{tag}{c}:{i}".encode())
    return root


@pytest.fixture
def tree60(tmp_path: Path) -> Path:
    return make_tree(tmp_path / "collection", 6, 10)


@pytest.fixture
def gt60(tree60: Path):
    return compile_ground_truth(scan_collection(tree60))


@contextmanager
def canned_server(status: int = 200, body: bytes = b"OK 0\n", delay: float = 0.0):
    """HTTP server answering every GET with the same status and body."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_GET(self):
            if self.path == "/ping":
                status_, body_ = 200, b"PONG"
            else:
                status_, body_ = status, body
                if delay:
                    time.sleep(delay)
            self.send_response(status_)
            self.send_header("Content-Length", str(len(body_)))
            self.end_headers()
            self.wfile.write(body_)

        def log_message(self, *args):
            pass

    httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, args=(0.05,), daemon=True)
    thread.start()
    try:
        yield f"127.0.0.1:{httpd.server_address[1]}"
    finally:
        httpd.shutdown()
        httpd.server_close()


_acceptance: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}")
