"""JSON documents laid out one record per line, so loaders can point at the
line of a bad record."""

from __future__ import annotations

import json
import re

_COMPACT = (",", ":")


def dumps_rows(doc: dict, row_keys: tuple[str, ...]) -> str:
    """Serialize ``doc`` with each element of the listed arrays on its own line."""
    parts = []
    for key, val in doc.items():
        k = json.dumps(key)
        if key in row_keys and isinstance(val, list) and val:
            body = ",\n".join(json.dumps(e, separators=_COMPACT) for e in val)
            parts.append(f"{k}:[\n{body}\n]")
        else:
            parts.append(f"{k}:{json.dumps(val, separators=_COMPACT)}")
    return "{" + ",\n".join(parts) + "}\n"


def element_lines(text: str, key: str) -> list[int] | None:
    """1-based line of every element of the top-level array ``key``.

    Returns None when the array cannot be located (hand-edited layouts with
    unusual nesting); callers then report errors without a line.
    """
    m = re.search(r'"%s"\s*:\s*\[' % re.escape(key), text)
    if m is None:
        return None
    dec = json.JSONDecoder()
    pos, lines = m.end(), []
    ws = re.compile(r"\s*")
    try:
        while True:
            pos = ws.match(text, pos).end()
            if text[pos] == "]":
                return lines
            _, end = dec.raw_decode(text, pos)
            lines.append(text.count("\n", 0, pos) + 1)
            pos = ws.match(text, end).end()
            if text[pos] == ",":
                pos += 1
    except (ValueError, IndexError):
        return None


def line_of(lines: list[int] | None, n: int) -> int | None:
    return lines[n] if lines is not None and n < len(lines) else None
