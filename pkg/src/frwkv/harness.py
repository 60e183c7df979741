"""Matched-seed ablation grid: execution with a resumable record store, and
the winner-count / average-rank / dataset-average analyses."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.stats import rankdata

from .errors import IncompleteGridError

log = logging.getLogger(__name__)

DEFAULT_SEEDS = tuple(range(2024, 2040))
COMPONENT_SEEDS = tuple(range(2024, 2029))
METRICS = ("mse", "mae")


@dataclass
class RunRecord:
    dataset: str
    horizon: int
    variant: str
    seed: int
    mse: float
    mae: float
    epochs_run: int = 0
    train_seconds: float = 0.0
    config_hash: str = ""
    status: str = "ok"
    error: str = ""

    def __post_init__(self):
        self.horizon, self.seed = int(self.horizon), int(self.seed)
        if self.status == "ok" and not (self.mse >= 0 and self.mae >= 0):
            raise ValueError(f"metrics must be non-negative, got mse={self.mse} mae={self.mae}")

    @property
    def key(self) -> tuple:
        return (self.dataset, self.horizon, self.variant, self.seed)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class GridSpec:
    settings: list[tuple[str, int]]
    variants: list[str]
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))

    def cells(self) -> list[tuple[str, int, str, int]]:
        return [(d, int(h), v, int(s)) for d, h in self.settings for v in self.variants for s in self.seeds]


class RecordStore:
    """Append-only JSON-lines file. A corrupt line only loses that line."""

    def __init__(self, path):
        self.path = Path(path)

    def load(self) -> dict[tuple, RunRecord]:
        records = {}
        if not self.path.exists():
            return records
        with self.path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = RunRecord.from_dict(json.loads(line))
                except (ValueError, TypeError) as exc:
                    log.warning("%s:%d: skipping corrupt record (%s)", self.path, lineno, exc)
                    continue
                records[rec.key] = rec
        return records

    def records(self) -> list[RunRecord]:
        return list(self.load().values())

    def append(self, record: RunRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(record.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())


@dataclass
class GridResult:
    records: list[RunRecord]
    trained: int
    failed: int


def _safe_run(run_cell, cell) -> RunRecord:
    try:
        return run_cell(cell)
    except Exception as exc:  # recorded, not raised: the grid keeps going
        d, h, v, s = cell
        return RunRecord(d, h, v, s, float("nan"), float("nan"), status="failed",
                         error=f"{type(exc).__name__}: {exc}")


def run_grid(grid: GridSpec, run_cell: Callable[[tuple], RunRecord], store: RecordStore,
             cell_hash: Callable[[tuple], str] | None = None, workers: int = 1) -> GridResult:
    """Execute every grid cell lacking a successful record with a matching config hash.

    ``run_cell`` must be picklable when ``workers > 1``.
    """
    existing = store.load()
    todo = []
    for cell in grid.cells():
        rec = existing.get(cell)
        if rec is not None and rec.ok and (cell_hash is None or rec.config_hash == cell_hash(cell)):
            continue
        todo.append(cell)
    failed = 0
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_safe_run, run_cell, c) for c in todo]
            for fut in as_completed(futures):
                rec = fut.result()
                failed += not rec.ok
                store.append(rec)
    else:
        for cell in todo:
            rec = _safe_run(run_cell, cell)
            failed += not rec.ok
            store.append(rec)
    final = store.load()
    return GridResult([final[c] for c in grid.cells() if c in final], len(todo), failed)


# ---------------------------------------------------------------------------
# analysis (pure functions of the record set)
# ---------------------------------------------------------------------------


def setting_means(records: Iterable[RunRecord], metric: str = "mse",
                  grid: GridSpec | None = None) -> dict[tuple, dict[str, float]]:
    """Per (dataset, horizon): seed-mean of ``metric`` per variant, after a completeness check."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    records = list(records)
    bad = [r.key for r in records if not r.ok]
    if bad:
        raise IncompleteGridError(f"{len(bad)} failed runs, e.g. {bad[0]}")
    by_setting: dict[tuple, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for r in records:
        by_setting[(r.dataset, r.horizon)][r.variant][r.seed] = getattr(r, metric)
    if grid is not None:
        have = {r.key for r in records}
        missing = [c for c in grid.cells() if c not in have]
        if missing:
            raise IncompleteGridError(f"{len(missing)} planned runs missing, e.g. {missing[0]}")
    variants = sorted({r.variant for r in records})
    out = {}
    for setting, per_variant in by_setting.items():
        if sorted(per_variant) != variants:
            raise IncompleteGridError(f"setting {setting} lacks variants "
                                      f"{sorted(set(variants) - set(per_variant))}")
        seed_sets = {v: frozenset(s) for v, s in per_variant.items()}
        if len(set(seed_sets.values())) != 1:
            raise IncompleteGridError(f"setting {setting} has unmatched seeds across variants")
        out[setting] = {v: float(np.mean([per_variant[v][s] for s in sorted(per_variant[v])]))
                        for v in variants}
    return out


def winner_counts(records, metric: str = "mse", grid: GridSpec | None = None) -> dict[str, float]:
    """One win per setting for the lowest seed-mean; exact ties split the win."""
    means = setting_means(records, metric, grid)
    variants = sorted({v for m in means.values() for v in m})
    wins = {v: 0.0 for v in variants}
    for scores in means.values():
        best = min(scores.values())
        winners = [v for v, s in scores.items() if s == best]
        for v in winners:
            wins[v] += 1.0 / len(winners)
    return wins


def average_ranks(records, metric: str = "mse", grid: GridSpec | None = None) -> dict[str, float]:
    """Mean over settings of each variant's rank (1 = best, ties averaged)."""
    means = setting_means(records, metric, grid)
    variants = sorted({v for m in means.values() for v in m})
    totals = {v: 0.0 for v in variants}
    for scores in means.values():
        ranks = rankdata([scores[v] for v in variants], method="average")
        for v, r in zip(variants, ranks):
            totals[v] += float(r)
    return {v: totals[v] / len(means) for v in variants}


def dataset_averages(records, grid: GridSpec | None = None) -> dict[tuple[str, str], tuple[float, float]]:
    """(dataset, variant) -> (mse, mae): seed mean, then equal weight over horizons."""
    records = list(records)
    out: dict[tuple[str, str], list] = {}
    per_metric = {m: setting_means(records, m, grid) for m in METRICS}
    acc: dict[tuple[str, str], dict[str, list[float]]] = defaultdict(lambda: {m: [] for m in METRICS})
    for m in METRICS:
        for (dataset, _), scores in per_metric[m].items():
            for v, s in scores.items():
                acc[(dataset, v)][m].append(s)
    for key, vals in acc.items():
        out[key] = (float(np.mean(vals["mse"])), float(np.mean(vals["mae"])))
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _ordered_variants(records) -> list[str]:
    from .gates import KINDS

    seen = sorted({r.variant for r in records})
    rank = {k: i for i, k in enumerate(reversed(KINDS))}
    return sorted(seen, key=lambda v: (rank.get(v.split("+")[0], len(KINDS)), v))


def _aligned(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    rule = "-" * len(lines[0])
    return "\n".join([rule, lines[0], rule] + lines[1:] + [rule]) + "\n"


def write_report(records, out_dir, grid: GridSpec | None = None) -> dict:
    """CSV and aligned-text tables: dataset averages, winner counts, average ranks."""
    records = list(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = _ordered_variants(records)
    averages = dataset_averages(records, grid)
    wins = {m: winner_counts(records, m, grid) for m in METRICS}
    ranks = {m: average_ranks(records, m, grid) for m in METRICS}
    datasets = sorted({d for d, _ in averages})

    with (out_dir / "dataset_averages.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "variant", "mse", "mae"])
        for d in datasets:
            for v in variants:
                w.writerow([d, v, *averages[(d, v)]])
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mse_wins", "mae_wins", "mse_avg_rank", "mae_avg_rank"])
        for v in variants:
            w.writerow([v, wins["mse"][v], wins["mae"][v], ranks["mse"][v], ranks["mae"][v]])

    table = [["Dataset"] + variants]
    for d in datasets:
        best = {m: min(averages[(d, v)][i] for v in variants) for i, m in enumerate(METRICS)}
        cells = []
        for v in variants:
            mse, mae = averages[(d, v)]
            cells.append(f"{mse:.4f}{'*' if mse == best['mse'] else ''}/"
                         f"{mae:.4f}{'*' if mae == best['mae'] else ''}")
        table.append([d] + cells)
    summary = [["Variant", "MSE wins", "MAE wins", "MSE rank", "MAE rank"]]
    for v in variants:
        summary.append([v, f"{wins['mse'][v]:g}", f"{wins['mae'][v]:g}",
                        f"{ranks['mse'][v]:.3f}", f"{ranks['mae'][v]:.3f}"])
    text = ("Dataset-level averages (MSE/MAE, * = best)\n" + _aligned(table)
            + "\nWinner coverage and average ranks\n" + _aligned(summary))
    (out_dir / "report.txt").write_text(text)
    return {"dataset_averages": averages, "wins": wins, "ranks": ranks, "text": text}
