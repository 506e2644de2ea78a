"""Append-only run ledger with size-based rotation."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Any, Mapping

from pydantic import BaseModel

from .schema import LedgerConfig

LOGGER = logging.getLogger(__name__)

_BYTES_IN_MB = 1024 * 1024


class Ledger:
    """Manage an append-only JSONL ledger of CLI runs."""

    def __init__(self, cfg: LedgerConfig | None = None) -> None:
        self.cfg = cfg or LedgerConfig()
        self.path = Path(self.cfg.path)
        self._lock = threading.Lock()

    def _rotate(self) -> None:
        """Move the current file to ``<stem>.r<N><suffix>`` once it exceeds the limit."""
        if not self.path.exists():
            return

        max_bytes = self.cfg.rotate_mb * _BYTES_IN_MB
        if max_bytes <= 0 or self.path.stat().st_size < max_bytes:
            return

        index = 1
        while True:
            rotated = self.path.with_name(f"{self.path.stem}.r{index}{self.path.suffix}")
            if not rotated.exists():
                self.path.rename(rotated)
                LOGGER.info("Rotated ledger", extra={"rotated_to": str(rotated)})
                return
            index += 1

    def append(self, event: BaseModel | Mapping[str, Any]) -> None:
        """Append one event (pydantic model or plain mapping) as a JSON line."""
        payload = event.model_dump(mode="json") if isinstance(event, BaseModel) else dict(event)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._rotate()
            with self.path.open("a", encoding="utf-8") as handle:
                json.dump(payload, handle, ensure_ascii=False)
                handle.write("\n")


__all__ = ["Ledger"]
