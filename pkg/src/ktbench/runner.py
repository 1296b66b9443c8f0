"""Experiment orchestration and the command-line interface.

Subcommands: preprocess, simulate, train, evaluate, sweep, audit-leakage,
report. Every run is driven by one JSON config document (all defaults visible
via --print-config); all randomness is seeded from it. Hyperparameter tuning
is a seeded random search over the documented spaces, sampled without
replacement, and selects only on validation AUC: the held-out test students
are touched exclusively by evaluate/report.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, protocols, synth
from .core import Dataset, compute_stats
from .ingest import parse_canonical
from .models import (
    FIXED_PARAMS,
    SEARCH_SPACES,
    MeanRateBaseline,
    TrainConfig,
    load_checkpoint,
    make_batch,
    make_model,
    save_checkpoint,
    train,
)
from .preprocess import Split, expand_to_kc, filter_dataset, load_split, make_windows, save_split, split_students
from .protocols import FusionMechanism, MultiStepConfig


@dataclass
class ExperimentConfig:
    dataset: str = ""
    model: str = "dkt"
    out: str = "runs_out"
    seed: int = 42
    window_len: int = 200
    fusion: str = "lf-avg"
    threshold: float = 0.5
    cutoff: int = 200
    fold: int | str = 0  # validation fold index, or "all" for 5-fold CV
    audit_models: list | None = None
    train: dict = field(default_factory=lambda: {
        "learning_rate": 1e-3,
        "dropout": 0.05,
        "batch_size": 64,
        "max_epochs": 200,
        "patience": 10,
        "model_params": {},
    })
    multi_step: dict = field(default_factory=lambda: {
        "observed_pcts": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "mode": "non-accumulative",
        "feedback": "label",
    })
    sweep: dict = field(default_factory=lambda: {"budget": 10, "seed": 7, "space": None})
    simulate: dict = field(default_factory=lambda: {
        "n_students": 100,
        "n_questions": 50,
        "n_kcs": 10,
        "kc_min": 1,
        "kc_max": 3,
        "steps_per_student": 50,
        "ability_scale": 1.0,
        "practice_gain": 0.02,
        "difficulty_scale": 1.0,
    })

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        cfg = cls()
        if path:
            overrides = json.loads(Path(path).read_text())
            for key, value in overrides.items():
                if not hasattr(cfg, key):
                    raise ValueError(f"unknown config key {key!r}")
                if isinstance(getattr(cfg, key), dict) and isinstance(value, dict):
                    getattr(cfg, key).update(value)
                else:
                    setattr(cfg, key, value)
        return cfg

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=t.get("learning_rate", 1e-3),
            dropout=t.get("dropout", 0.05),
            batch_size=t.get("batch_size", 64),
            max_epochs=t.get("max_epochs", 200),
            patience=t.get("patience", 10),
            seed=self.seed,
            model_params=dict(t.get("model_params", {})),
        )


@dataclass
class RunRecord:
    config_hash: str
    model: str
    fold: int
    seed: int
    val_auc: float
    best_epoch: int
    wall_time_s: float
    test: dict | None
    config: dict

    def save(self, runs_dir: Path) -> Path:
        runs_dir.mkdir(parents=True, exist_ok=True)
        path = runs_dir / f"{self.config_hash}_fold{self.fold}.json"
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def stable_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def _load_dataset(config: ExperimentConfig) -> Dataset:
    if not config.dataset:
        raise ValueError("config.dataset is required")
    return filter_dataset(parse_canonical(config.dataset))


def _get_split(dataset: Dataset, config: ExperimentConfig, out: Path) -> Split:
    split_path = out / "split.json"
    if split_path.exists():
        return load_split(split_path)
    split = split_students(dataset, config.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_split(split, split_path)
    return split


def _train_windows(dataset: Dataset, student_ids, m: int):
    windows = []
    for seq in dataset.sequences_for(student_ids):
        windows.extend(make_windows(expand_to_kc(seq, dataset), m))
    return windows


def _resolved_trial_config(config: ExperimentConfig, train_cfg: TrainConfig) -> dict:
    return {
        "dataset": config.dataset,
        "model": config.model,
        "window_len": config.window_len,
        "fusion": config.fusion,
        "train": train_cfg.to_dict(),
    }


def _fit_fold(dataset, split, config: ExperimentConfig, train_cfg: TrainConfig, fold: int,
              evaluate_test: bool):
    model = make_model(
        config.model, dataset.n_items, context_len=config.window_len,
        seed=train_cfg.seed, **train_cfg.model_params,
    )
    windows = _train_windows(dataset, split.train_ids(fold), config.window_len)
    val_seqs = dataset.sequences_for(split.folds[fold])
    result = train(model, windows, val_seqs, dataset, train_cfg, fold_name=f"fold {fold}")
    test = None
    if evaluate_test:
        report, _ = protocols.eval_question_level(
            result.model, dataset, dataset.sequences_for(split.test_ids),
            FusionMechanism.from_str(config.fusion), config.threshold,
        )
        test = report.results["overall"].to_dict()
    record = RunRecord(
        config_hash=stable_hash(_resolved_trial_config(config, train_cfg)),
        model=config.model,
        fold=fold,
        seed=train_cfg.seed,
        val_auc=result.best_val_auc,
        best_epoch=result.best_epoch,
        wall_time_s=result.wall_time_s,
        test=test,
        config=_resolved_trial_config(config, train_cfg),
    )
    return record, result.model


def cross_validate(dataset, split, config: ExperimentConfig, train_cfg: TrainConfig,
                   evaluate_test: bool = True):
    """Train one model per fold (validating on that fold); test metrics are
    computed on the held-out students once per fold model."""
    records = []
    for fold in range(len(split.folds)):
        record, _ = _fit_fold(dataset, split, config, train_cfg, fold, evaluate_test)
        records.append(record)
    return records


def _sweep_space(config: ExperimentConfig) -> dict[str, list]:
    tag = config.model
    if tag not in SEARCH_SPACES:
        raise ValueError(f"no documented search space for model {tag!r}")
    space = {k: list(v) for k, v in SEARCH_SPACES[tag].items()}
    custom = config.sweep.get("space")
    if custom:
        for key, values in custom.items():
            if key not in space:
                raise ValueError(f"{key!r} is not a tunable parameter of {tag!r}")
            bad = [v for v in values if v not in space[key]]
            if bad:
                raise ValueError(f"values {bad} for {key!r} are outside the documented space")
            space[key] = list(values)
    return space


def sweep(dataset, split, config: ExperimentConfig):
    """Seeded random search without replacement over the documented space.

    Trials are scored by mean validation AUC across the 5 folds; the test set
    is never evaluated here.
    """
    space = _sweep_space(config)
    keys = sorted(space)
    sizes = [len(space[k]) for k in keys]
    total = int(np.prod(sizes))
    budget = int(config.sweep.get("budget", 10))
    if budget < 1:
        raise ValueError("sweep budget must be >= 1")
    if budget > total:
        warnings.warn(f"budget {budget} exceeds space size {total}; clamping")
        budget = total
    rng = np.random.default_rng(config.sweep.get("seed", 7))
    flat_choices = rng.choice(total, size=budget, replace=False)

    fixed = FIXED_PARAMS.get(config.model, {})
    trials = []
    for flat in flat_choices:
        combo = {}
        rem = int(flat)
        for key, size in zip(keys, sizes):
            combo[key] = space[key][rem % size]
            rem //= size
        trials.append(combo)

    all_records = []
    best = None
    for idx, combo in enumerate(trials):
        params = dict(combo)
        seed = int(params.pop("seed", config.seed))
        train_cfg = TrainConfig(
            learning_rate=params.pop("learning_rate", 1e-3),
            dropout=params.pop("dropout", 0.05),
            batch_size=int(fixed.get("batch_size", config.train.get("batch_size", 64))),
            max_epochs=config.train.get("max_epochs", 200),
            patience=config.train.get("patience", 10),
            seed=seed,
            model_params=params,
        )
        records = cross_validate(dataset, split, config, train_cfg, evaluate_test=False)
        mean_val = float(np.mean([r.val_auc for r in records]))
        entry = {"trial": idx, "combo": combo, "mean_val_auc": mean_val,
                 "config_hash": records[0].config_hash}
        all_records.append((entry, records))
        if best is None or mean_val > best[0]["mean_val_auc"]:
            best = (entry, records)
    return best, all_records


def _fmt_mean_std(values) -> str:
    arr = np.asarray(values, dtype=float)
    std = arr.std(ddof=1) if arr.size > 1 else 0.0
    return f"{arr.mean():.4f}±{std:.4f}"


def _cmd_preprocess(config: ExperimentConfig) -> int:
    out = Path(config.out)
    raw = parse_canonical(config.dataset)
    print(f"raw:      {compute_stats(raw)}")
    dataset = filter_dataset(raw)
    stats = compute_stats(dataset)
    print(f"filtered: {stats}")
    split = _get_split(dataset, config, out)
    print(f"split: {len(split.test_ids)} test students, folds "
          f"{[len(f) for f in split.folds]} (seed {split.seed}) -> {out / 'split.json'}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(json.dumps({
        "raw": asdict(compute_stats(raw)), "filtered": asdict(stats)}, indent=2))
    return 0


def _cmd_simulate(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = synth.SimConfig(seed=config.seed, **config.simulate)
    csv_path = out / "simulated.csv"
    dataset = synth.write_dataset(sim, csv_path)
    print(f"wrote {csv_path} ({compute_stats(dataset)})")
    return 0


def _cmd_train(config: ExperimentConfig) -> int:
    out = Path(config.out)
    dataset = _load_dataset(config)
    split = _get_split(dataset, config, out)
    train_cfg = config.train_config()
    folds = range(len(split.folds)) if config.fold == "all" else [int(config.fold)]
    for fold in folds:
        record, model = _fit_fold(dataset, split, config, train_cfg, fold,
                                  evaluate_test=config.fold == "all")
        path = record.save(out / "runs")
        ckpt = out / f"model_{record.config_hash}_fold{fold}.npz"
        save_checkpoint(model, ckpt)
        line = f"fold {fold}: best val AUC {record.val_auc:.4f} at epoch {record.best_epoch}"
        if record.test:
            line += f" | test AUC {record.test['auc']:.4f}"
        print(line)
        print(f"run record -> {path}\ncheckpoint -> {ckpt}")
    return 0


def _cmd_evaluate(config: ExperimentConfig, checkpoint: str | None, dump: str | None,
                  observed_pct: float | None, mode: str | None) -> int:
    out = Path(config.out)
    dataset = _load_dataset(config)
    split = _get_split(dataset, config, out)
    test_seqs = dataset.sequences_for(split.test_ids)
    if checkpoint:
        model = load_checkpoint(checkpoint)
    else:
        fold = 0 if config.fold == "all" else int(config.fold)
        model = MeanRateBaseline(dataset.n_items, config.window_len).fit(
            [i.response for s in dataset.sequences_for(split.train_ids(fold))
             for i in s.interactions]
        )
        print("no checkpoint given; evaluating the mean-rate baseline")
    fusion = FusionMechanism.from_str(config.fusion)
    report, records = protocols.eval_question_level(model, dataset, test_seqs, fusion, config.threshold)

    long_part, short_part = protocols.split_by_length(test_seqs, config.cutoff)
    for name, part in (("long", long_part), ("short", short_part)):
        if not part:
            report.results[name] = None
            continue
        sub, _ = protocols.eval_question_level(model, dataset, part, fusion, config.threshold)
        report.results[name] = sub.results["overall"]
    report.config["length_cutoff"] = config.cutoff

    if observed_pct is not None:
        ms_cfg = MultiStepConfig(observed_pct, mode or config.multi_step.get("mode", "non-accumulative"),
                                 config.multi_step.get("feedback", "label"))
        ms_records = protocols.eval_multistep_dataset(model, dataset, test_seqs, ms_cfg, fusion,
                                                      config.threshold)
        probs, labels = protocols.fused_arrays(ms_records)
        report.results[f"multi_step_{ms_cfg.mode}_{observed_pct}"] = metrics.MetricResult.from_predictions(
            probs, labels, config.threshold)
        report.config["multi_step"] = {"observed_pct": observed_pct, "mode": ms_cfg.mode,
                                       "feedback": ms_cfg.feedback}

    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "eval.json")
    for name, res in report.results.items():
        if res is None:
            print(f"{name}: (no sequences)")
        else:
            print(f"{name}: auc={res.auc:.4f} acc={res.accuracy:.4f} "
                  f"(n_pos={res.n_pos}, n_neg={res.n_neg})")
    if dump:
        protocols.write_predictions_csv(records, dump)
        print(f"predictions -> {dump}")
    return 0


def _cmd_sweep(config: ExperimentConfig) -> int:
    out = Path(config.out)
    dataset = _load_dataset(config)
    split = _get_split(dataset, config, out)
    best, all_records = sweep(dataset, split, config)
    runs_dir = out / "runs"
    ledger = []
    for entry, records in all_records:
        for record in records:
            record.save(runs_dir)
        ledger.append(entry)
    (out / "sweep.json").write_text(json.dumps(ledger, indent=2))
    print(f"{len(ledger)} trials -> {out / 'sweep.json'}")
    print(f"best: trial {best[0]['trial']} mean val AUC {best[0]['mean_val_auc']:.4f} "
          f"combo {best[0]['combo']}")
    return 0


def _cmd_audit_leakage(config: ExperimentConfig) -> int:
    out = Path(config.out)
    dataset = _load_dataset(config)
    split = _get_split(dataset, config, out)
    test_seqs = dataset.sequences_for(split.test_ids)
    train_cfg = config.train_config()
    fold = 0 if config.fold == "all" else int(config.fold)
    results = {}
    for tag in config.audit_models or [config.model]:
        cfg_tag = ExperimentConfig(**{**asdict(config), "model": tag})
        _, model = _fit_fold(dataset, split, cfg_tag, train_cfg, fold, evaluate_test=False)
        audit = protocols.audit_leakage(model, dataset, test_seqs)
        results[tag] = audit
        print(f"{tag}: all-in-one AUC {audit['kc_auc_all_in_one']:.4f} | "
              f"one-by-one AUC {audit['kc_auc_one_by_one']:.4f} | "
              f"delta gain {audit['delta_gain']:.4f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "leakage_audit.json").write_text(json.dumps(results, indent=2))
    return 0


def _cmd_report(config: ExperimentConfig) -> int:
    out = Path(config.out)
    runs_dir = out / "runs"
    if not runs_dir.is_dir():
        raise FileNotFoundError(f"{runs_dir} does not exist; train or sweep first")
    by_hash: dict[str, list[dict]] = {}
    for path in sorted(runs_dir.glob("*.json")):
        record = json.loads(path.read_text())
        by_hash.setdefault(record["config_hash"], []).append(record)

    # fold-paired test AUCs per config, for the significance column
    fold_aucs: dict[str, dict[int, float]] = {}
    for config_hash, records in by_hash.items():
        tests = {r["fold"]: r["test"]["auc"] for r in records if r.get("test")}
        if len(tests) >= 2:
            fold_aucs[config_hash] = tests
    best_hash = None
    if fold_aucs:
        best_hash = max(fold_aucs, key=lambda h: np.mean(list(fold_aucs[h].values())))

    rows = []
    for config_hash, records in sorted(by_hash.items()):
        vals = [r["val_auc"] for r in records]
        row = {
            "config_hash": config_hash,
            "model": records[0]["model"],
            "folds": len(records),
            "val_auc": _fmt_mean_std(vals),
        }
        tests = [r["test"] for r in records if r.get("test")]
        if tests:
            row["test_auc"] = _fmt_mean_std([t["auc"] for t in tests])
            row["test_accuracy"] = _fmt_mean_std([t["accuracy"] for t in tests])
        if best_hash and config_hash in fold_aucs:
            if config_hash == best_hash:
                row["vs_best"] = "-"
            else:
                folds = sorted(set(fold_aucs[best_hash]) & set(fold_aucs[config_hash]))
                if len(folds) >= 2:
                    marker = metrics.paired_t_test(
                        [fold_aucs[best_hash][f] for f in folds],
                        [fold_aucs[config_hash][f] for f in folds],
                    )
                    row["vs_best"] = metrics.MARKER_SYMBOLS[marker]
        rows.append(row)
    report_path = out / "report.csv"
    fieldnames = ["config_hash", "model", "folds", "val_auc", "test_auc", "test_accuracy", "vs_best"]
    with report_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print("  ".join(f"{k}={row[k]}" for k in fieldnames if k in row))
    if best_hash:
        print("vs_best: two-sided paired t-test on fold test AUCs at alpha 0.01 "
              "(* best superior, o equal, . best inferior)")
    print(f"report -> {report_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ktbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", help="model tag (dkt, dkt+, sakt, mean-rate)")
    common.add_argument("--dataset", help="canonical CSV path")
    common.add_argument("--fusion", choices=[m.value for m in FusionMechanism])
    common.add_argument("--cutoff", type=int, help="long/short sequence cutoff")
    common.add_argument("--print-config", action="store_true", help="print resolved config and exit")

    sub.add_parser("preprocess", parents=[common])
    sub.add_parser("simulate", parents=[common])
    sub.add_parser("train", parents=[common])
    evaluate = sub.add_parser("evaluate", parents=[common])
    evaluate.add_argument("--checkpoint", help="model checkpoint (.npz)")
    evaluate.add_argument("--dump-predictions", help="CSV path for the prediction dump")
    evaluate.add_argument("--observed-pct", type=float, help="multi-step observed fraction")
    evaluate.add_argument("--mode", choices=["accumulative", "non-accumulative"])
    sub.add_parser("sweep", parents=[common])
    sub.add_parser("audit-leakage", parents=[common])
    sub.add_parser("report", parents=[common])
    return parser


def cli(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = ExperimentConfig.load(args.config)
        for key in ("seed", "out", "model", "dataset", "fusion", "cutoff"):
            value = getattr(args, key, None)
            if value is not None:
                setattr(config, key, value)
        if args.print_config:
            print(json.dumps(asdict(config), indent=2))
            return 0
        t0 = time.perf_counter()
        if args.command == "preprocess":
            code = _cmd_preprocess(config)
        elif args.command == "simulate":
            code = _cmd_simulate(config)
        elif args.command == "train":
            code = _cmd_train(config)
        elif args.command == "evaluate":
            code = _cmd_evaluate(config, args.checkpoint, args.dump_predictions,
                                 args.observed_pct, args.mode)
        elif args.command == "sweep":
            code = _cmd_sweep(config)
        elif args.command == "audit-leakage":
            code = _cmd_audit_leakage(config)
        elif args.command == "report":
            code = _cmd_report(config)
        else:  # pragma: no cover - argparse enforces the choices
            return 2
        print(f"done in {time.perf_counter() - t0:.1f}s")
        return code
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
