"""Bookkeeping for the acceptance suite: one pass/fail line per criterion."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

RESULTS: dict[int, "Outcome"] = {}


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    seconds: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"criterion {self.number:2d} {status}  {self.title}  ({self.seconds:.1f} s)"
        return text + (f"  -- {self.detail}" if self.detail else "")


def criterion(number: int, title: str, budget: float):
    """Record the outcome of a test and enforce its runtime budget in seconds."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                assert elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                msg = str(exc).strip().splitlines()
                outcome = Outcome(number, title, False, elapsed, msg[0] if msg else type(exc).__name__)
                RESULTS[number] = outcome
                print(outcome.line())
                raise
            outcome = Outcome(number, title, True, elapsed, detail)
            RESULTS[number] = outcome
            print(outcome.line())

        return run

    return wrap
