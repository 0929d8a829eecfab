"""Command-line entry point.

Subcommands: gen-data, train, ablate, sweep, verify-theory,
export-embeddings. Every command is deterministic given its flags and
seeds; outputs land in a directory named by a hash of the resolved config
(no timestamps), so identical invocations produce byte-identical files.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CLASSIFICATION,
    REGRESSION,
    MultiTaskDataset,
    generate_synthetic_mtl,
    generate_synthetic_regression,
    load_csv_dataset,
    write_csv_dataset,
)
from .errors import HgnnMtlError, ParseError, UsageError
from .model import forward
from .runner import ModelDims, RunReport, run_seeds
from .theory import run_theorem_sweep
from .training import TrainConfig

MODE_FLAGS = {"cls": CLASSIFICATION, "reg": REGRESSION}
SWEEP_AXES = ("ft", "fc", "proportion")

BOUND_NOTE = "the bound's weight factor is read as the weight-norm ball radius supplied via --wstar"


@dataclass
class RunConfig:
    """Resolved settings for one command; round-trips losslessly via JSON."""

    command: str
    source: str = "synthetic"
    csv: Optional[str] = None
    mode: str = "cls"
    variant: Optional[str] = None  # default: full (cls) or t (reg)
    # synthetic data
    m: int = 4
    k: int = 3
    p: int = 16
    n_per_class: int = 30
    n_per_task: int = 90
    angle: float = 0.2
    spread: float = 0.5
    noise: float = 0.1
    data_seed: int = 1
    # model dims
    dh: int = 64
    ft: int = 8
    fc: int = 8
    layers: int = 1
    # training
    epochs: int = 200
    batch: str = "full"
    seeds: int = 5
    proportion: float = 0.7
    lr_schedule: str = "epoch"
    patience: int = 25
    val_fraction: float = 0.2
    embedding_mode: str = "full"
    # sweep
    axis: Optional[str] = None
    values: Optional[list[float]] = None
    # theory sweep
    instances: int = 1000
    sweep_seed: int = 42
    max_dim: int = 8
    lambdas: Optional[list[float]] = None
    delta: float = 0.1
    wstar: float = 1.0
    # io
    out: str = "runs"
    checkpoint: Optional[str] = None

    def validate(self) -> None:
        if self.mode not in MODE_FLAGS:
            raise UsageError(f"--mode must be one of {sorted(MODE_FLAGS)}, got {self.mode!r}")
        if self.source not in ("synthetic", "csv"):
            raise UsageError(f"dataset source must be synthetic or csv, got {self.source!r}")
        if self.source == "csv" and not self.csv:
            raise UsageError("--csv PATH is required when the source is a CSV file")
        if self.variant is not None and self.variant not in ("baseline", "t", "c", "full"):
            raise UsageError(f"--variant must be baseline/t/c/full, got {self.variant!r}")
        if not (0.0 < self.proportion < 1.0):
            raise UsageError(f"--proportion must lie in (0,1), got {self.proportion}")
        if self.batch != "full":
            try:
                size = int(self.batch)
            except ValueError:
                raise UsageError(f"--batch must be 'full' or a positive integer, got {self.batch!r}") from None
            if size < 1:
                raise UsageError(f"--batch must be 'full' or a positive integer, got {self.batch!r}")
        if self.seeds < 1:
            raise UsageError(f"--seeds must be >= 1, got {self.seeds}")
        if self.epochs < 0:
            raise UsageError(f"--epochs must be >= 0, got {self.epochs}")
        for flag, value in (("--dh", self.dh), ("--ft", self.ft), ("--fc", self.fc), ("--layers", self.layers)):
            if value < 1:
                raise UsageError(f"{flag} must be >= 1, got {value}")
        if self.axis is not None and self.axis not in SWEEP_AXES:
            raise UsageError(f"--axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if self.instances < 1:
            raise UsageError(f"--instances must be >= 1, got {self.instances}")
        if not (0.0 < self.delta < 1.0):
            raise UsageError(f"--delta must lie in (0,1), got {self.delta}")

    @property
    def batch_size(self) -> Optional[int]:
        return None if self.batch == "full" else int(self.batch)

    @property
    def resolved_variant(self) -> str:
        if self.variant is not None:
            return self.variant
        return "full" if self.mode == "cls" else "t"

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def config_hash(cfg: RunConfig) -> str:
    payload = json.dumps(cfg.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def prepare_run_dir(cfg: RunConfig) -> Path:
    run_dir = Path(cfg.out) / f"{cfg.command}-{config_hash(cfg)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    return run_dir


def fmt(x) -> str:
    return repr(float(x))


def write_table(path: Path, header: list[str], rows: list[list[str]], note: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if note:
            fh.write(f"# {note}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def build_dataset(cfg: RunConfig) -> MultiTaskDataset:
    mode = MODE_FLAGS[cfg.mode]
    if cfg.source == "csv":
        return load_csv_dataset(cfg.csv, mode)
    if mode == CLASSIFICATION:
        return generate_synthetic_mtl(
            cfg.m, cfg.k, cfg.p, cfg.n_per_class, cfg.angle, cfg.spread, cfg.data_seed
        )
    return generate_synthetic_regression(cfg.m, cfg.p, cfg.n_per_task, cfg.angle, cfg.noise, cfg.data_seed)


def _dims(cfg: RunConfig) -> ModelDims:
    return ModelDims(
        hidden_dim=cfg.dh,
        task_emb_dim=cfg.ft,
        class_emb_dim=cfg.fc,
        intra_layers=cfg.layers,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr_schedule=cfg.lr_schedule,
        patience=cfg.patience,
        val_fraction=cfg.val_fraction,
        embedding_mode=cfg.embedding_mode,
    )


def _write_train_log(path: Path, reports: list[tuple[str, RunReport]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,step,loss,val_metric,lr\n")
        for label, report in reports:
            for res in report.results:
                fh.write(f"# {label} seed {res.seed}\n")
                for rec in res.trajectory:
                    fh.write(
                        f"{rec.epoch},{rec.step},{fmt(rec.loss)},{fmt(rec.val_metric)},{fmt(rec.lr)}\n"
                    )


def _report_rows(report: RunReport) -> list[list[str]]:
    return [
        [
            str(r.seed),
            fmt(r.train_loss),
            fmt(r.val_metric) if r.val_metric is not None else "",
            fmt(r.test_metric),
            str(r.epochs_run),
            str(r.diverged).lower(),
        ]
        for r in report.results
    ]


def cmd_gen_data(cfg: RunConfig) -> int:
    dataset = build_dataset(cfg)
    run_dir = prepare_run_dir(cfg)
    path = run_dir / "data.csv"
    write_csv_dataset(dataset, path)
    print(f"wrote {dataset.num_tasks} tasks ({sum(t.n for t in dataset.tasks)} samples) to {path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    dataset = build_dataset(cfg)
    variant = cfg.resolved_variant
    seeds = list(range(cfg.seeds))
    report, best_model = run_seeds(dataset, variant, cfg.proportion, seeds, _dims(cfg), _train_config(cfg))
    run_dir = prepare_run_dir(cfg)
    metric_name = "accuracy" if cfg.mode == "cls" else "mse"
    write_table(
        run_dir / "report.csv",
        ["seed", "train_loss", "val_metric", "test_metric", "epochs_run", "diverged"],
        _report_rows(report),
        note=(
            f"variant={variant} proportion={fmt(cfg.proportion)} metric={metric_name} "
            f"mean={fmt(report.metric_mean)} std={fmt(report.metric_std)}"
        ),
    )
    _write_train_log(run_dir / "train.log", [(variant, report)])
    save_checkpoint(best_model, run_dir / "model.ckpt")
    print(
        f"{variant}: test {metric_name} {report.metric_mean:.4f} +/- {report.metric_std:.4f} "
        f"over {len(seeds)} seeds ({report.wall_clock_s:.1f}s)"
    )
    print(f"artifacts in {run_dir}")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    if cfg.mode != "cls":
        raise UsageError(
            "ablation compares class-embedding variants; regression has no class "
            "embeddings (only 'baseline' and 't' apply), so use cls mode"
        )
    dataset = build_dataset(cfg)
    seeds = list(range(cfg.seeds))
    rows = []
    logs = []
    for variant in ("baseline", "t", "c", "full"):
        report, _ = run_seeds(dataset, variant, cfg.proportion, seeds, _dims(cfg), _train_config(cfg))
        rows.append([variant, fmt(report.metric_mean), fmt(report.metric_std)])
        logs.append((variant, report))
        print(f"{variant:9s} accuracy {report.metric_mean:.4f} +/- {report.metric_std:.4f}")
    run_dir = prepare_run_dir(cfg)
    write_table(
        run_dir / "report.csv",
        ["variant", "metric_mean", "metric_std"],
        rows,
        note=f"proportion={fmt(cfg.proportion)} seeds={len(seeds)} metric=accuracy",
    )
    _write_train_log(run_dir / "train.log", logs)
    print(f"artifacts in {run_dir}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.axis is None:
        raise UsageError("--axis is required (ft, fc, or proportion)")
    if not cfg.values:
        raise UsageError("--values must list at least one value")
    dataset = build_dataset(cfg)
    variant = cfg.resolved_variant
    seeds = list(range(cfg.seeds))
    rows = []
    logs = []
    for raw in cfg.values:
        dims = _dims(cfg)
        proportion = cfg.proportion
        if cfg.axis == "proportion":
            proportion = float(raw)
            if not (0.0 < proportion < 1.0):
                raise UsageError(f"--values: proportion {raw} must lie in (0,1)")
            label = fmt(proportion)
        else:
            size = int(raw)
            if size < 1 or size != raw:
                raise UsageError(f"--values: {cfg.axis} dimension {raw} must be a positive integer")
            if cfg.axis == "ft":
                dims.task_emb_dim = size
            else:
                dims.class_emb_dim = size
            label = str(size)
        report, _ = run_seeds(dataset, variant, proportion, seeds, dims, _train_config(cfg))
        rows.append([cfg.axis, label, fmt(report.metric_mean), fmt(report.metric_std)])
        logs.append((f"{cfg.axis}={label}", report))
        print(f"{cfg.axis}={label}: {report.metric_mean:.4f} +/- {report.metric_std:.4f}")
    run_dir = prepare_run_dir(cfg)
    metric_name = "accuracy" if cfg.mode == "cls" else "mse"
    write_table(
        run_dir / "report.csv",
        ["axis", "value", "metric_mean", "metric_std"],
        rows,
        note=f"variant={variant} seeds={len(seeds)} metric={metric_name}",
    )
    _write_train_log(run_dir / "train.log", logs)
    print(f"artifacts in {run_dir}")
    return 0


def cmd_verify_theory(cfg: RunConfig) -> int:
    lambdas = tuple(cfg.lambdas) if cfg.lambdas else (0.1, 1.0, 10.0)
    rows = run_theorem_sweep(
        cfg.instances,
        seed=cfg.sweep_seed,
        max_dim=cfg.max_dim,
        lambdas=lambdas,
        delta=cfg.delta,
        weight_norm_bound=cfg.wstar,
    )
    run_dir = prepare_run_dir(cfg)
    table = [
        [
            str(r.instance_id),
            str(r.seed),
            fmt(r.condition_min_eigenvalue),
            fmt(r.loss1),
            fmt(r.loss2),
            fmt(r.rhs1),
            fmt(r.rhs2),
            str(r.condition_holds).lower(),
            str(r.inequality_holds).lower(),
        ]
        for r in rows
    ]
    write_table(
        run_dir / "theory_report.csv",
        [
            "instance_id",
            "seed",
            "condition_min_eigenvalue",
            "loss1",
            "loss2",
            "rhs1",
            "rhs2",
            "condition_holds",
            "inequality_holds",
        ],
        table,
        note=BOUND_NOTE,
    )
    holding = sum(r.condition_holds for r in rows)
    violations = [r for r in rows if r.condition_holds and not r.inequality_holds]
    print(
        f"{len(rows)} instances: condition holds on {holding}, "
        f"loss ordering violated on {len(violations)} of those"
    )
    print(f"report in {run_dir / 'theory_report.csv'}")
    return 1 if violations else 0


def _embedding_rows(kind: str, task_id: int, class_id, vec, width: int) -> list[str]:
    cells = [kind, str(task_id), "" if class_id is None else str(class_id)]
    cells.extend(fmt(v) for v in vec)
    cells.extend([""] * (width - len(vec)))
    return cells


def cmd_export_embeddings(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise UsageError("--checkpoint PATH is required")
    model = load_checkpoint(cfg.checkpoint)
    dataset = build_dataset(cfg)
    cache = forward(model, dataset)
    emb = cache.embeddings
    run_dir = prepare_run_dir(cfg)
    mcfg = model.config
    k = mcfg.num_classes or 0

    raw_rows: list[list[str]] = []
    upd_rows: list[list[str]] = []
    upd_width = max(
        mcfg.task_emb_dim if mcfg.uses_task_embeddings else 0,
        mcfg.class_emb_dim if mcfg.uses_class_embeddings else 0,
    )
    if emb is not None:
        for i in range(mcfg.num_tasks):
            raw_rows.append(_embedding_rows("task", i + 1, None, emb.raw_task[:, i], mcfg.hidden_dim))
        if emb.raw_class is not None:
            for i in range(mcfg.num_tasks):
                for cls in range(1, k + 1):
                    node = i * k + (cls - 1)
                    raw_rows.append(
                        _embedding_rows("class", i + 1, cls, emb.raw_class[:, node], mcfg.hidden_dim)
                    )
        if emb.updated_task is not None:
            for i in range(mcfg.num_tasks):
                upd_rows.append(_embedding_rows("task", i + 1, None, emb.updated_task[:, i], upd_width))
        if emb.updated_class is not None:
            for i in range(mcfg.num_tasks):
                for cls in range(1, k + 1):
                    node = i * k + (cls - 1)
                    upd_rows.append(
                        _embedding_rows("class", i + 1, cls, emb.updated_class[:, node], upd_width)
                    )

    raw_header = ["kind", "task_id", "class_id"] + [f"dim_{d}" for d in range(mcfg.hidden_dim)]
    upd_header = ["kind", "task_id", "class_id"] + [f"dim_{d}" for d in range(upd_width)]
    write_table(run_dir / "embeddings_raw.csv", raw_header, raw_rows)
    write_table(run_dir / "embeddings_updated.csv", upd_header, upd_rows)

    sample_header = ["task_id", "sample_index", "label"] + [
        f"dim_{d}" for d in range(mcfg.augmented_dim)
    ]
    sample_rows = []
    for i, task in enumerate(dataset.tasks):
        aug = cache.augmented[i]
        for j in range(task.n):
            label = str(int(task.labels[j])) if mcfg.mode == CLASSIFICATION else fmt(task.labels[j])
            sample_rows.append(
                [str(task.task_id), str(j), label] + [fmt(v) for v in aug[:, j]]
            )
    write_table(run_dir / "embeddings_samples.csv", sample_header, sample_rows)
    print(
        f"wrote {len(raw_rows)} raw and {len(upd_rows)} updated embedding rows, "
        f"{len(sample_rows)} augmented samples to {run_dir}"
    )
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "verify-theory": cmd_verify_theory,
    "export-embeddings": cmd_export_embeddings,
}


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--synthetic", action="store_const", const="synthetic", dest="source", default=None,
                   help="use the built-in synthetic generator (default source)")
    p.add_argument("--csv", default=None, help="load the dataset from a CSV file")
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default=None, help="cls or reg")
    p.add_argument("--m", type=int, default=None, help="synthetic: number of tasks")
    p.add_argument("--k", type=int, default=None, help="synthetic: number of classes")
    p.add_argument("--p", type=int, default=None, help="synthetic: feature dimension")
    p.add_argument("--n-per-class", type=int, default=None, dest="n_per_class")
    p.add_argument("--n-per-task", type=int, default=None, dest="n_per_task",
                   help="synthetic regression: samples per task")
    p.add_argument("--angle", type=float, default=None, help="synthetic: per-task rotation (radians)")
    p.add_argument("--spread", type=float, default=None, help="synthetic: class cluster spread")
    p.add_argument("--noise", type=float, default=None, help="synthetic regression: target noise")
    p.add_argument("--data-seed", type=int, default=None, dest="data_seed")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=("baseline", "t", "c", "full"), default=None)
    p.add_argument("--dh", type=int, default=None, help="hidden dimension")
    p.add_argument("--ft", type=int, default=None, help="task embedding dimension")
    p.add_argument("--fc", type=int, default=None, help="class embedding dimension")
    p.add_argument("--layers", type=int, default=None, help="graph layers per task")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", default=None, help="'full' or a mini-batch size")
    p.add_argument("--seeds", type=int, default=None, help="number of repeat seeds (0..N-1)")
    p.add_argument("--proportion", type=float, default=None, help="training proportion in (0,1)")
    p.add_argument("--lr-schedule", choices=("epoch", "step"), default=None, dest="lr_schedule")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None, dest="val_fraction")
    p.add_argument("--embedding-mode", choices=("full", "batch"), default=None, dest="embedding_mode")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="base output directory (default: runs)")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgnn-mtl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("gen-data", "write a synthetic dataset as CSV"),
        ("train", "train one variant over repeat seeds"),
        ("ablate", "compare baseline/t/c/full under identical seeds"),
        ("sweep", "vary one axis (ft, fc, proportion)"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_dataset_flags(p)
        _add_common_flags(p)
        if name != "gen-data":
            _add_model_flags(p)
            _add_train_flags(p)
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, default=None)
            p.add_argument("--values", default=None, help="comma-separated values")

    p = sub.add_parser("verify-theory", help="randomized check of the ridge-embedding guarantees")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--sweep-seed", type=int, default=None, dest="sweep_seed")
    p.add_argument("--max-dim", type=int, default=None, dest="max_dim")
    p.add_argument("--lambdas", default=None, help="comma-separated ridge weights")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--wstar", type=float, default=None, help="weight-norm ball radius in the bound")
    _add_common_flags(p)

    p = sub.add_parser("export-embeddings", help="dump embeddings and augmented features as CSV")
    p.add_argument("--checkpoint", default=None, help="model checkpoint to load")
    _add_dataset_flags(p)
    _add_common_flags(p)

    return parser


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {raw!r}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = asdict(RunConfig(command=args.command))
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"--config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config {args.config}: invalid JSON ({exc})") from None
        if not isinstance(file_cfg, dict):
            raise UsageError(f"--config {args.config}: expected a JSON object")
        file_cfg.pop("command", None)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise UsageError(f"--config {args.config}: unknown keys {sorted(unknown)}")
        base.update(file_cfg)
    for name in base:
        if name == "command":
            continue
        value = getattr(args, name, None)
        if value is None:
            continue
        if name in ("values", "lambdas") and isinstance(value, str):
            value = _parse_float_list(value, f"--{name}")
        base[name] = value
    if getattr(args, "csv", None):
        base["source"] = "csv"
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HgnnMtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
