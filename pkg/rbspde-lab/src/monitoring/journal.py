from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence


@dataclass
class DiagnosticsJournal:
    """Append-only CSV of per-iteration diagnostics; the header is written on creation."""

    path: Path
    fieldnames: Sequence[str]

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=list(self.fieldnames))
            writer.writeheader()

    def append(self, row: Dict[str, str | float | int]) -> None:
        with self.path.open("a", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=list(self.fieldnames), extrasaction="ignore")
            writer.writerow({key: _format(row.get(key, "")) for key in self.fieldnames})


def _format(value: object) -> object:
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):
        return repr(value.item())
    return value
