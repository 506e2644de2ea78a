"""Helpers for reading and summarizing the run ledger."""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, Iterator, List

_RECENT_LIMIT = 10


def load_ledger(path: str | Path) -> Iterable[dict]:
    """Yield parsed JSON objects from a ledger file."""
    ledger_path = Path(path)
    if not ledger_path.exists():
        return []

    def _generator() -> Iterator[dict]:
        with ledger_path.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                yield json.loads(line)

    return _generator()


def summarize(path: str | Path) -> Dict[str, object]:
    """Count events per kind, list input files and keep the latest test decisions."""
    counts: Counter[str] = Counter()
    inputs = set()
    recent_tests: List[dict] = []

    for entry in load_ledger(path):
        kind = str(entry.get("kind"))
        counts[kind] += 1
        for key in ("study_a", "study_b", "source"):
            value = entry.get(key)
            if isinstance(value, str):
                inputs.add(value)
        if kind == "test":
            for row in entry.get("rows") or []:
                recent_tests.append(
                    {
                        "ts": entry.get("ts"),
                        "estimator": row.get("estimator"),
                        "kappa": row.get("kappa"),
                        "z": row.get("z"),
                        "reject": row.get("reject"),
                    }
                )

    return {
        "events": dict(sorted(counts.items())),
        "inputs": sorted(inputs),
        "recent_tests": recent_tests[-_RECENT_LIMIT:],
    }


__all__ = ["load_ledger", "summarize"]
