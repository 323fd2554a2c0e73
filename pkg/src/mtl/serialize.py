"""Deterministic text output: pinned float formatting, a JSON emitter, atomic writes.

Reports written by this package are compared byte-for-byte in tests and
between runs, so every float funnels through :func:`fmt_float` (fixed 17
significant digits) and JSON goes through the small emitter below rather
than ``json.dumps``, whose float formatting we do not want to depend on.
"""

from __future__ import annotations

import numbers
import os
import tempfile

__all__ = [
    "fmt_float",
    "to_json",
    "dump_json",
    "atomic_write_text",
    "atomic_write_bytes",
]


def fmt_float(x: float) -> str:
    """Render a float with 17 significant digits (round-trip exact)."""
    x = float(x)
    if x != x:
        return "nan"
    if x == float("inf"):
        return "inf"
    if x == float("-inf"):
        return "-inf"
    return format(x, ".17g")


_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
    "\b": "\\b",
    "\f": "\\f",
}


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    return "".join(out)


def _emit(obj, indent: int, pieces: list) -> None:
    pad = "  " * indent
    if obj is None:
        pieces.append("null")
    elif isinstance(obj, bool):
        pieces.append("true" if obj else "false")
    elif isinstance(obj, numbers.Integral):
        pieces.append(str(int(obj)))
    elif isinstance(obj, numbers.Real):
        x = float(obj)
        if x != x:
            pieces.append("NaN")
        elif x == float("inf"):
            pieces.append("Infinity")
        elif x == float("-inf"):
            pieces.append("-Infinity")
        else:
            pieces.append(fmt_float(x))
    elif isinstance(obj, str):
        pieces.append('"' + _escape(obj) + '"')
    elif isinstance(obj, dict):
        if not obj:
            pieces.append("{}")
            return
        pieces.append("{\n")
        items = list(obj.items())
        for i, (key, val) in enumerate(items):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            pieces.append(pad + '  "' + _escape(key) + '": ')
            _emit(val, indent + 1, pieces)
            pieces.append(",\n" if i + 1 < len(items) else "\n")
        pieces.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            pieces.append("[]")
            return
        pieces.append("[\n")
        for i, val in enumerate(obj):
            pieces.append(pad + "  ")
            _emit(val, indent + 1, pieces)
            pieces.append(",\n" if i + 1 < len(obj) else "\n")
        pieces.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def to_json(obj) -> str:
    """Serialize nested dict/list/scalar data to pretty-printed JSON text.

    Dict insertion order is preserved. Non-finite floats are emitted as the
    ``NaN``/``Infinity`` tokens that ``json.loads`` accepts by default.
    """
    pieces: list = []
    _emit(obj, 0, pieces)
    return "".join(pieces)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write bytes to ``path`` via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path: str, obj) -> None:
    """Atomically write ``obj`` as JSON with a trailing newline."""
    atomic_write_text(path, to_json(obj) + "\n")
