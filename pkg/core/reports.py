"""
Run reports and artifact writers.
Every command records its seed, effective config, metrics and wall time.
"""

import csv
import json
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

logger = logging.getLogger(__name__)


class RunReport:
    """Represents one command run."""

    def __init__(self, command: str, config: Dict[str, Any], seed: Optional[int] = None,
                 metrics: Optional[List[Dict[str, Any]]] = None,
                 summary: Optional[Dict[str, Any]] = None,
                 started_at: Optional[float] = None, wall_time: float = 0.0):
        self.command = command
        self.config = config
        self.seed = seed
        self.metrics = metrics or []
        self.summary = summary or {}
        self.started_at = started_at or time.time()
        self.wall_time = wall_time

    def finish(self) -> 'RunReport':
        self.wall_time = time.time() - self.started_at
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON storage."""
        return {
            'command': self.command,
            'seed': self.seed,
            'started_at': datetime.fromtimestamp(self.started_at).isoformat(timespec='seconds'),
            'wall_time': round(self.wall_time, 3),
            'config': self.config,
            'summary': self.summary,
            'metrics': self.metrics,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunReport':
        """Create from dictionary."""
        started = data.get('started_at')
        return cls(
            data['command'],
            data.get('config', {}),
            data.get('seed'),
            data.get('metrics', []),
            data.get('summary', {}),
            datetime.fromisoformat(started).timestamp() if started else None,
            data.get('wall_time', 0.0),
        )


def format_value(value: Any) -> Any:
    """Fixed float formatting so identical runs give identical CSV bytes."""
    if isinstance(value, float):
        return f"{value:.10g}"
    return value


def write_csv(path: Union[str, Path], rows: Iterable[Dict[str, Any]],
              fieldnames: Optional[Sequence[str]] = None) -> Path:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(row.get(k, '')) for k in fieldnames})
    logger.debug("wrote %d rows to %s", len(rows), path)
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def write_report(path: Union[str, Path], report: RunReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2, default=str)
    except IOError as e:
        logger.warning("cannot write report %s: %s", path, e)
    return path


def load_report(path: Union[str, Path]) -> RunReport:
    with open(path, 'r', encoding='utf-8') as f:
        return RunReport.from_dict(json.load(f))
