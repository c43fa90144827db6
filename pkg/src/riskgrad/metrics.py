"""Per-iteration training metrics and their on-disk formats.

A run directory holds ``metrics.jsonl`` (a schema header line followed by
one JSON object per iteration) and ``summary.tsv`` (tab-separated, one row
per iteration, columns in :data:`FIELDS` order, floats printed with ``%.10g``).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

from .errors import RiskgradError

SCHEMA = "riskgrad.metrics"
SCHEMA_VERSION = 1


@dataclass
class MetricsRecord:
    iteration: int
    mean_return: float = math.nan
    cvar05_return: float = math.nan
    risk_events_per_episode: float = math.nan
    ttf: float = math.nan
    episodes: int = 0
    critic_loss: float = math.nan
    policy_loss: float = math.nan
    entropy: float = math.nan
    iqr_mean: float = math.nan
    iqr_max: float = math.nan


FIELDS = [f.name for f in fields(MetricsRecord)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def summary_table(records: Iterable[MetricsRecord]) -> str:
    lines = ["\t".join(FIELDS)]
    for rec in records:
        d = asdict(rec)
        lines.append("\t".join(_fmt(d[k]) for k in FIELDS))
    return "\n".join(lines) + "\n"


def _clean(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def export_metrics(records: list[MetricsRecord], out_dir: str | Path, seed: int, stamp: str | None = None) -> Path:
    """Write ``metrics.jsonl`` and ``summary.tsv`` under ``out_dir/<timestamp>-seed<seed>``."""
    stamp = stamp or time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(out_dir) / f"{stamp}-seed{seed}"
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        header = {"schema": SCHEMA, "version": SCHEMA_VERSION, "fields": FIELDS}
        with open(run_dir / "metrics.jsonl", "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for rec in records:
                fh.write(json.dumps({k: _clean(v) for k, v in asdict(rec).items()}) + "\n")
        (run_dir / "summary.tsv").write_text(summary_table(records))
    except OSError as exc:
        raise RiskgradError(f"cannot write metrics under {run_dir}: {exc}") from exc
    return run_dir


def load_records(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise RiskgradError(f"cannot read metrics file {path}: {exc}") from exc
    if not lines or json.loads(lines[0]).get("schema") != SCHEMA:
        raise RiskgradError(f"{path} is not a {SCHEMA} file")
    out = []
    for line in lines[1:]:
        d = json.loads(line)
        out.append(MetricsRecord(**{k: (math.nan if v is None else v) for k, v in d.items()}))
    return out
