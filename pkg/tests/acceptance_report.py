"""Collects one verdict line per acceptance criterion."""
import sys

_results: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, detail: str) -> bool:
    _results[key] = (ok, detail)
    line = format_line(key, ok, detail)
    # shown live under `pytest -s` and when the module runs as a script
    print(line, file=sys.stderr)
    return ok


def format_line(key, ok, detail):
    return f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}"


def _order(key):
    digits = "".join(ch for ch in key if ch.isdigit())
    return int(digits), key


def lines() -> list[str]:
    return [format_line(k, *_results[k]) for k in sorted(_results, key=_order)]
