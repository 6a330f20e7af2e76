"""Query wire protocol.

``GET /ping`` answers ``PONG``.  ``GET /query?id=<link_id>&n=<count>``
answers with status 200 and a body of ``OK <count>`` followed by one
identifier per line, best match first, every line ending in a single LF.
Unknown identifiers get status 404 and ``ERR unknown-id``.  Only
identifiers ever cross the wire, never image bytes.
"""

from __future__ import annotations

from typing import Sequence

PING_PATH = "/ping"
QUERY_PATH = "/query"
PONG = b"PONG"
UNKNOWN_ID = b"ERR unknown-id"
BAD_REQUEST = b"ERR bad-request"


class ProtocolViolation(ValueError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split ``host:port``; an empty host means localhost."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"expected host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def encode_answer(ids: Sequence[str]) -> bytes:
    lines = [f"OK {len(ids)}", *ids]
    return ("\n".join(lines) + "\n").encode("ascii")


def decode_answer(body: bytes, n: int) -> list[str]:
    """Parse a 200 response body; raises ProtocolViolation on anything off."""
    try:
        text = body.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ProtocolViolation("non-ASCII response body") from exc
    if not text.endswith("\n"):
        raise ProtocolViolation("response body must end with a linefeed")
    lines = text[:-1].split("\n")
    word, _, count = lines[0].partition(" ")
    if word != "OK" or not count.isdigit():
        raise ProtocolViolation(f"bad status line {lines[0]!r}")
    ids = lines[1:]
    if int(count) != len(ids):
        raise ProtocolViolation(f"status line announces {count} ids, body has {len(ids)}")
    if len(ids) > n:
        raise ProtocolViolation(f"{len(ids)} ids returned for n={n}")
    for image_id in ids:
        if not image_id or any(c.isspace() for c in image_id):
            raise ProtocolViolation(f"malformed identifier {image_id!r}")
    if len(set(ids)) != len(ids):
        raise ProtocolViolation("duplicate identifiers in response")
    return ids
