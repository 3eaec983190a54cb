"""Collects one result line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit_s: float):
    notes: dict = {}
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        RESULTS.append(f"[{number:2d}] FAIL  {title} ({elapsed:.2f}s / {limit_s:g}s) {type(exc).__name__}: {exc}".splitlines()[0])
        raise
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k}={v}" for k, v in notes.items())
    if elapsed >= limit_s:
        RESULTS.append(f"[{number:2d}] FAIL  {title} ({elapsed:.2f}s over {limit_s:g}s budget) {detail}")
        raise AssertionError(f"criterion {number} took {elapsed:.2f}s, budget {limit_s}s")
    RESULTS.append(f"[{number:2d}] PASS  {title} ({elapsed:.2f}s / {limit_s:g}s) {detail}")
