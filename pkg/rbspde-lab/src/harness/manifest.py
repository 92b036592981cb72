from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

MANIFEST_NAME = "manifest.txt"


@dataclass
class RunManifest:
    """Line-oriented key=value record of one run; artifact paths are relative to the run directory."""

    out_dir: Path
    command: str
    spec_hash: str = ""
    seed: int = 0
    parameters: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    status: str = "running"
    wall_clock: float = 0.0
    error: Optional[str] = None

    def add_artifact(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            name = path.relative_to(self.out_dir).as_posix()
        except ValueError:
            name = path.as_posix()
        if name not in self.artifacts:
            self.artifacts.append(name)
        return path

    def record_check(self, name: str, passed: bool) -> None:
        self.checks[name] = bool(passed)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> List[str]:
        out = [
            f"command={self.command}",
            f"status={self.status}",
            f"spec_hash={self.spec_hash}",
            f"seed={self.seed}",
        ]
        out += [f"param.{key}={_render(value)}" for key, value in sorted(self.parameters.items())]
        out += [f"check.{key}={'pass' if ok else 'fail'}" for key, ok in sorted(self.checks.items())]
        out += [f"metric.{key}={_render(value)}" for key, value in sorted(self.metrics.items())]
        out += [f"artifact={name}" for name in sorted(self.artifacts)]
        if self.error:
            out.append(f"error={self.error}")
        out.append(f"wall_clock={self.wall_clock:.3f}")
        return out

    def write(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / MANIFEST_NAME
        self.add_artifact(path)
        path.write_text("\n".join(self.lines()) + "\n")
        return path


def _render(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True, default=str)
    return str(value)


def read_manifest(path: str | Path) -> Dict[str, List[str]]:
    entries: Dict[str, List[str]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        entries.setdefault(key, []).append(value)
    return entries
