"""Time and peak-memory comparison of exact and landmark attention."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionConfig, ElementCounter, exact_attention, nystrom_attention

COLUMNS = ("n", "exact_seconds", "nystrom_seconds", "exact_peak_elements", "nystrom_peak_elements")
DEFAULT_EXACT_CAP = 4096


@dataclass
class BenchRow:
    n: int
    exact_seconds: float | None
    nystrom_seconds: float
    exact_peak_elements: int | None
    nystrom_peak_elements: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _median_time(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run_bench(ns, m: int = 8, repetitions: int = 3, *, d: int = 8, exact_cap: int = DEFAULT_EXACT_CAP,
              seed: int = 0) -> list[BenchRow]:
    """One row per n.  Exact columns are None beyond ``exact_cap``."""
    ns = [int(n) for n in ns]
    if not ns:
        raise ValueError("need at least one n")
    if ns != sorted(ns) or ns[0] < 1:
        raise ValueError("n values must be positive and ascending")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    cfg = AttentionConfig(d, 1, m)
    rows = []
    for n in ns:
        rng = np.random.default_rng([seed, n])
        q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
        c = ElementCounter()
        nystrom_attention(q, k, v, cfg, counter=c)
        ny_peak = c.peak
        ny_time = _median_time(lambda: nystrom_attention(q, k, v, cfg), repetitions)
        ex_time = ex_peak = None
        if n <= exact_cap:
            c = ElementCounter()
            exact_attention(q, k, v, counter=c)
            ex_peak = c.peak
            ex_time = _median_time(lambda: exact_attention(q, k, v), repetitions)
        rows.append(BenchRow(n, ex_time, ny_time, ex_peak, ny_peak))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    def cell(v):
        if v is None:
            return "skipped"
        return f"{v:.6f}" if isinstance(v, float) else str(v)

    table = [list(COLUMNS)] + [[cell(getattr(r, c)) for c in COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in table) + "\n"
