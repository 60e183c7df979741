"""Command-line entry point: ``train``, ``eval``, ``ablate``, ``report``, ``synth``.

Exit codes: 0 ok, 2 configuration or user-input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, DivergenceError, FrwkvError, ProtocolError, ShapeError
from .harness import GridSpec, RecordStore, RunRecord, run_grid, write_report
from .model import Forecaster, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate_loss, fit, mse_mae

log = logging.getLogger("frwkv")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3

DATA_KEYS = {"path": "", "kind": "auto", "name": ""}
RUN_KEYS = {"seed": 2024, "output_dir": ""}


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(value)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return value.strip()


def _section(parser, name: str, defaults: dict) -> dict:
    if not parser.has_section(name):
        return dict(defaults)
    out = dict(defaults)
    for key, value in parser.items(name):
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(value, defaults[key], f"[{name}] {key}")
    return out


def _dataclass_defaults(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


@dataclass
class RunConfig:
    data: dict
    model: dict
    train: dict
    run: dict = field(default_factory=lambda: dict(RUN_KEYS))

    def dataset_name(self) -> str:
        return self.data["name"] or Path(self.data["path"]).stem

    def dataset_kind(self) -> str:
        kind = self.data["kind"]
        return D.infer_kind(self.data["path"]) if kind == "auto" else kind

    def model_config(self, n_vars: int) -> ModelConfig:
        cfg = dict(self.model, seed=self.run["seed"])
        if cfg.get("n_vars") not in (None, 0, n_vars) and "n_vars" in self._explicit_model:
            raise ConfigError(f"config n_vars={cfg['n_vars']} but dataset has {n_vars} variables")
        cfg["n_vars"] = n_vars
        return ModelConfig.from_dict(cfg)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**dict(self.train, seed=self.run["seed"]))

    _explicit_model: set = field(default_factory=set, repr=False)


ALLOWED_SECTIONS = {"data", "model", "train", "run", "grid"}
GRID_KEYS = {"datasets": "", "horizons": "", "variants": "", "seeds": "2024-2039",
             "store": "", "report_dir": ""}


def _read_ini(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = set(parser.sections()) - ALLOWED_SECTIONS
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    return parser


def parse_run_config(parser: configparser.ConfigParser) -> RunConfig:
    model_defaults = _dataclass_defaults(ModelConfig)
    model_defaults.pop("seed")
    train_defaults = _dataclass_defaults(TrainConfig)
    train_defaults.pop("seed")
    cfg = RunConfig(_section(parser, "data", DATA_KEYS), _section(parser, "model", model_defaults),
                    _section(parser, "train", train_defaults), _section(parser, "run", RUN_KEYS))
    if parser.has_section("model"):
        cfg._explicit_model = {k for k, _ in parser.items("model")}
    return cfg


def load_run_config(path) -> RunConfig:
    return parse_run_config(_read_ini(path))


def dump_resolved(cfg: RunConfig, model_cfg: ModelConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser["data"] = {k: str(v) for k, v in cfg.data.items()}
    parser["model"] = {k: str(v) for k, v in model_cfg.to_dict().items() if k != "seed"}
    parser["train"] = {k: str(v) for k, v in cfg.train.items()}
    parser["run"] = {k: str(v) for k, v in cfg.run.items()}
    with open(path, "w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------------------
# shared run logic
# ---------------------------------------------------------------------------


def _output_dir(cfg: RunConfig) -> Path:
    if cfg.run["output_dir"]:
        return Path(cfg.run["output_dir"])
    root = Path(os.environ.get("FRWKV_OUTPUT_ROOT", "runs"))
    mc = cfg.model
    return root / f"{cfg.dataset_name()}_{mc['horizon']}_{mc['variant']}_{cfg.run['seed']}"


def _load_table(path) -> D.SeriesTable:
    if not path:
        raise ConfigError("no dataset path given")
    if not Path(path).exists():
        raise ConfigError(f"dataset {path} not found")
    return D.load_csv(path)


def train_run(cfg: RunConfig, out_dir: Path | None = None) -> dict:
    """Train, evaluate on test, write checkpoint / epoch log / metrics / resolved config."""
    table = _load_table(cfg.data["path"])
    model_cfg = cfg.model_config(table.n_vars)
    train_cfg = cfg.train_config()
    prepared = D.prepare(table, cfg.dataset_kind(), model_cfg.seq_len, model_cfg.horizon)
    model = Forecaster(model_cfg)
    out_dir = out_dir or _output_dir(cfg)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_resolved(cfg, model_cfg, out_dir / "config.resolved.ini")
    tr, va, te = prepared["train"], prepared["val"], prepared["test"]
    result = fit(model, (tr.inputs, tr.targets), (va.inputs, va.targets), train_cfg,
                 log_path=out_dir / "train_log.csv" if out_dir else None)
    mse, mae = mse_mae(model.predict(te.inputs), te.targets)
    metrics = {
        "dataset": cfg.dataset_name(), "horizon": model_cfg.horizon, "variant": model_cfg.variant,
        "seed": model_cfg.seed, "mse": mse, "mae": mae,
        "test_loss": evaluate_loss(model, te.inputs, te.targets, train_cfg.loss_alpha),
        "best_val": result.best_val, "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run, "stopped_early": result.stopped_early,
        "train_seconds": result.train_seconds, "config_hash": model_cfg.config_hash(),
        "split_kind": prepared.spec.kind, "split_bounds": prepared.spec.bounds,
    }
    if out_dir is not None:
        save_checkpoint(out_dir / "model.ckpt", model,
                        extra={"data": {"kind": prepared.spec.kind, "name": cfg.dataset_name()},
                               "train": cfg.train, "metrics": {"mse": mse, "mae": mae}})
        (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out) if args.out else None
    metrics = train_run(cfg, out)
    print(json.dumps({k: metrics[k] for k in ("mse", "mae", "epochs_run")}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.ckpt).exists():
        raise ConfigError(f"checkpoint {args.ckpt} not found")
    model, extra = load_checkpoint(args.ckpt)
    cfg = model.config
    table = _load_table(args.data)
    if table.n_vars != cfg.n_vars:
        raise ShapeError(f"dataset has {table.n_vars} variables, checkpoint expects {cfg.n_vars}")
    kind = args.kind or extra.get("data", {}).get("kind") or D.infer_kind(args.data)
    prepared = D.prepare(table, kind, cfg.seq_len, cfg.horizon)
    ws = prepared[args.split]
    preds = model.predict(ws.inputs)
    mse, mae = mse_mae(preds, ws.targets)
    result = {"split": args.split, "mse": mse, "mae": mae, "windows": len(ws)}
    if args.export_preds:
        export_predictions(args.export_preds, preds, ws.targets, table.columns)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def export_predictions(path, preds: np.ndarray, targets: np.ndarray, columns) -> None:
    """One row per window; ``pred_h{h}_{col}`` then ``true_h{h}_{col}`` columns."""
    _, horizon, _ = preds.shape
    names = [f"{kind}_h{h}_{c}" for kind in ("pred", "true") for h in range(horizon) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window"] + names)
        for i in range(len(preds)):
            w.writerow([i] + [repr(float(v)) for v in preds[i].ravel()]
                       + [repr(float(v)) for v in targets[i].ravel()])


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _split_list(text: str) -> list[str]:
    return [p.strip() for p in text.replace("\n", ",").split(",") if p.strip()]


@dataclass
class GridPlan:
    grid: GridSpec
    paths: dict[str, str]
    base: RunConfig
    store: Path
    report_dir: Path


def load_grid(path) -> GridPlan:
    parser = _read_ini(path)
    g = _section(parser, "grid", GRID_KEYS)
    base = parse_run_config(parser)
    try:
        paths = {Path(p).stem: p for p in _split_list(g["datasets"])}
        horizons = [int(h) for h in _split_list(g["horizons"])] or [base.model["horizon"]]
        variants = _split_list(g["variants"]) or [base.model["variant"]]
        seeds = _parse_seeds(g["seeds"])
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None
    if not paths or not seeds:
        raise ConfigError("[grid] needs at least one dataset and one seed")
    grid = GridSpec([(d, h) for d in paths for h in horizons], variants, seeds)
    root = Path(os.environ.get("FRWKV_OUTPUT_ROOT", "runs"))
    store = Path(g["store"]) if g["store"] else root / "ablation_records.jsonl"
    report = Path(g["report_dir"]) if g["report_dir"] else store.parent / "report"
    return GridPlan(grid, paths, base, store, report)


def _cell_config(plan_base: RunConfig, paths: dict, cell) -> RunConfig:
    dataset, horizon, variant, seed = cell
    return RunConfig(dict(plan_base.data, path=paths[dataset], name=dataset),
                     dict(plan_base.model, horizon=horizon, variant=variant),
                     dict(plan_base.train), dict(plan_base.run, seed=seed),
                     _explicit_model=plan_base._explicit_model)


def grid_cell_hash(plan_base: RunConfig, paths: dict, cell) -> str:
    cfg = _cell_config(plan_base, paths, cell)
    blob = json.dumps({"model": cfg.model, "train": cfg.train, "data": cfg.data,
                       "seed": cfg.run["seed"]}, sort_keys=True, default=str)
    import hashlib

    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def grid_cell_run(plan_base: RunConfig, paths: dict, cell) -> RunRecord:
    cfg = _cell_config(plan_base, paths, cell)
    metrics = train_run(cfg, out_dir=None)
    return RunRecord(cell[0], cell[1], cell[2], cell[3], metrics["mse"], metrics["mae"],
                     metrics["epochs_run"], metrics["train_seconds"],
                     grid_cell_hash(plan_base, paths, cell))


def cmd_ablate(args) -> int:
    plan = load_grid(args.grid)
    workers = args.workers or int(os.environ.get("FRWKV_WORKERS", "1"))
    result = run_grid(plan.grid, partial(grid_cell_run, plan.base, plan.paths), RecordStore(plan.store),
                      cell_hash=partial(grid_cell_hash, plan.base, plan.paths), workers=workers)
    print(json.dumps({"records": len(result.records), "trained": result.trained,
                      "failed": result.failed, "store": str(plan.store)}))
    if result.failed:
        return EXIT_NUMERIC
    report = write_report(result.records, plan.report_dir, plan.grid)
    print(report["text"])
    return EXIT_OK


def cmd_report(args) -> int:
    store = RecordStore(args.store)
    if not store.path.exists():
        raise ConfigError(f"record store {args.store} not found")
    report = write_report(store.records(), args.out)
    print(report["text"])
    return EXIT_OK


def cmd_synth(args) -> int:
    table = D.synth_periodic(args.vars, args.len, args.period, args.jitter, args.noise, args.seed)
    D.write_csv(table, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frwkv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides [run] output_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--kind", choices=("ETTh", "ETTm", "ratio"))
    e.add_argument("--export-preds", dest="export_preds")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a matched-seed variant grid")
    a.add_argument("--grid", required=True)
    a.add_argument("--workers", type=int, default=0)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="tables from a record store")
    r.add_argument("--store", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic periodic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--vars", type=int, default=2)
    s.add_argument("--len", type=int, default=1200)
    s.add_argument("--period", type=float, default=24)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ProtocolError, ShapeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except FrwkvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
