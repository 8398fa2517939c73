"""Episode logs: JSON-lines, one header, one record per tick, one end record."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .world import Infraction

LOG_VERSION = 1
TERMINAL_CAUSES = ("destination", "timeout", "fatal_collision", "policy_failure")


def dumps(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


class LogWriter:
    """Appends records and flushes after each line so a crash loses at most one tick."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def write(self, record: dict) -> None:
        self._fh.write(dumps({"v": LOG_VERSION, **record}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class EpisodeLog:
    header: dict
    ticks: list[dict] = field(default_factory=list)
    end: Optional[dict] = None
    path: Optional[Path] = None

    @property
    def scenario(self) -> str:
        return self.header["scenario"]

    @property
    def policy(self) -> str:
        return self.header["policy"]

    @property
    def terminal(self) -> Optional[str]:
        return None if self.end is None else self.end["terminal"]

    @property
    def route_completion(self) -> float:
        return 0.0 if self.end is None else self.end["route_completion"]

    @property
    def time_budget(self) -> float:
        return self.header["time_budget"]

    @property
    def infractions(self) -> list[Infraction]:
        if self.end is None:
            return []
        return [Infraction(e["kind"], e["t"], e.get("detail", "")) for e in self.end["infractions"]]


def read_log(path) -> EpisodeLog:
    path = Path(path)
    log = None
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("v") != LOG_VERSION:
                raise ValueError(f"{path}:{n}: unsupported log version {rec.get('v')!r}")
            kind = rec.get("type")
            if kind == "header":
                log = EpisodeLog(rec, path=path)
            elif log is None:
                raise ValueError(f"{path}:{n}: record before header")
            elif kind == "tick":
                log.ticks.append(rec)
            elif kind == "end":
                log.end = rec
            else:
                raise ValueError(f"{path}:{n}: unknown record type {kind!r}")
    if log is None:
        raise ValueError(f"{path}: empty log")
    return log
