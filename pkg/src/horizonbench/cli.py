"""Command-line benchmark harness.

Subcommands:

* ``run``   -- execute the full (countries x targets x horizons x variants x
  seeds) grid on a WHO-format CSV and emit report.csv, ranks.txt,
  friedman.txt, per-run prediction/histogram/loss files and runlog.txt.
* ``stats`` -- recompute ranking and the Friedman/Iman-Davenport decision from
  an existing report.csv, or replay a rank fixture directly.

Identical config and seeds produce byte-identical outputs, independent of how
many worker processes run the grid.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import os
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import engine, stats
from .cells import MODEL_ORDER, parse_variant_token
from .data import COUNT_COLUMNS, extract_series, parse_who_csv
from .errors import (
    BenchError,
    DegenerateTableError,
    InvalidConfigError,
    InvalidValueError,
    MissingDataPathError,
    SchemaMismatchError,
    UnknownKeyError,
)

log = logging.getLogger("horizonbench.cli")

REPORT_COLUMNS = ("dataset_id", "model_id", "seed", "msle", "mape", "rmsle", "ev",
                  "aggregate_score")

_DEFAULT_VARIANTS = ("lstm", "gru", "conv_lstm", "bi_lstm", "bi_gru", "bi_conv_lstm")


@dataclass(frozen=True)
class BenchConfig:
    data_path: str | None = None
    countries: tuple[str, ...] = ("AU", "IR")
    targets: tuple[str, ...] = ("cumulative_cases", "cumulative_deaths")
    horizons: tuple[int, ...] = (1, 3, 7)
    variants: tuple[str, ...] = _DEFAULT_VARIANTS
    window_len: int = 4
    seeds: tuple[int, ...] = (42,)
    train_frac: float = 0.70
    val_frac: float = 0.20
    epochs: int = 200
    batch_size: int = 16
    eval_days: int = 100
    alpha: float = 0.05
    output_dir: str = "bench_out"
    jobs: int = 0  # 0 means one worker per available CPU

    def validate(self) -> "BenchConfig":
        if not self.countries:
            raise InvalidValueError("countries must be nonempty")
        if not self.targets:
            raise InvalidValueError("targets must be nonempty")
        for target in self.targets:
            if target not in COUNT_COLUMNS:
                raise InvalidValueError(f"unknown target column {target!r}")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise InvalidValueError(f"horizons must be positive, got {self.horizons}")
        if not self.variants:
            raise InvalidValueError("variants must be nonempty")
        for token in self.variants:
            try:
                parse_variant_token(token)
            except InvalidConfigError as err:
                raise InvalidValueError(str(err)) from None
        if self.window_len < 1:
            raise InvalidValueError(f"window_len must be >= 1, got {self.window_len}")
        if not self.seeds:
            raise InvalidValueError("seeds must be nonempty")
        if not 0.0 < self.train_frac < 1.0:
            raise InvalidValueError(f"train_frac must be in (0, 1), got {self.train_frac}")
        if not 0.0 <= self.val_frac < 1.0:
            raise InvalidValueError(f"val_frac must be in [0, 1), got {self.val_frac}")
        if self.epochs < 1:
            raise InvalidValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_days < 1:
            raise InvalidValueError(f"eval_days must be >= 1, got {self.eval_days}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.jobs < 0:
            raise InvalidValueError(f"jobs must be >= 0, got {self.jobs}")
        return self

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part.strip()) for part in text.split(",") if part.strip())
    except ValueError:
        raise InvalidValueError(f"expected a comma-separated integer list, got {text!r}") from None


_FIELD_PARSERS = {
    "data_path": str,
    "countries": _parse_str_list,
    "targets": _parse_str_list,
    "horizons": _parse_int_list,
    "variants": _parse_str_list,
    "window_len": int,
    "seeds": _parse_int_list,
    "train_frac": float,
    "val_frac": float,
    "epochs": int,
    "batch_size": int,
    "eval_days": int,
    "alpha": float,
    "output_dir": str,
    "jobs": int,
}


def load_config(path: str | None = None, overrides: dict | None = None) -> BenchConfig:
    """Key = value config file plus CLI overrides, validated with all defaults."""
    settings: dict = {}
    if path is not None:
        for line_num, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise InvalidValueError(f"{path}:{line_num}: expected 'key = value', got {raw!r}")
            if key not in _FIELD_PARSERS:
                raise UnknownKeyError(f"{path}:{line_num}: unknown config key {key!r}")
            try:
                settings[key] = _FIELD_PARSERS[key](value.strip())
            except InvalidValueError:
                raise
            except ValueError:
                raise InvalidValueError(
                    f"{path}:{line_num}: bad value {value.strip()!r} for {key}"
                ) from None
    for key, value in (overrides or {}).items():
        if key not in _FIELD_PARSERS:
            raise UnknownKeyError(f"unknown config key {key!r}")
        if value is not None:
            settings[key] = value
    return BenchConfig(**settings).validate()


# --- run subcommand -----------------------------------------------------------


@dataclass(frozen=True)
class Job:
    index: int
    dataset_id: str
    country: str
    target: str
    horizon: int
    variant_token: str
    seed: int

    @property
    def label(self) -> str:
        return f"{self.dataset_id} / {self.variant_token} / seed {self.seed}"


class _ListHandler(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.lines: list[str] = []

    def emit(self, record):
        self.lines.append(f"{record.levelname} {record.name}: {record.getMessage()}")


def _execute_job(job: Job, bundle: engine.DatasetBundle, train_config: engine.TrainConfig,
                 eval_days: int) -> dict:
    handler = _ListHandler()
    root = logging.getLogger("horizonbench")
    root.addHandler(handler)
    try:
        variant, bidirectional = parse_variant_token(job.variant_token)
        result = engine.single_run(bundle, variant, bidirectional, job.seed,
                                   train_config, eval_days)
    finally:
        root.removeHandler(handler)
    return {"job": job, "result": result, "log": handler.lines}


def _job_worker(packed):
    return _execute_job(*packed)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", text.strip())


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_report_csv(path: Path, rows: list[dict]) -> None:
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            f'"{row["dataset_id"]}"', row["model_id"], str(row["seed"]),
            _fmt(row["msle"]), _fmt(row["mape"]), _fmt(row["rmsle"]), _fmt(row["ev"]),
            _fmt(row["aggregate_score"]),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _report_row(report: stats.MetricReport, seed) -> dict:
    return {"dataset_id": report.dataset_id, "model_id": report.model_id, "seed": seed,
            "msle": report.msle, "mape": report.mape, "rmsle": report.rmsle,
            "ev": report.ev, "aggregate_score": report.aggregate_score}


def _write_prediction_file(path: Path, job: Job, result: engine.ExperimentResult) -> None:
    run = result.run
    series_start = run.predictions[0][0] if run.predictions else None
    lines = [
        f"# forecast curve: {job.dataset_id} / {run.model_id} / seed {job.seed}",
        f"# first prediction date: {series_start.isoformat()}",
        f"# stride: {run.horizon} day(s)",
        "# columns: date_index actual predicted",
    ]
    for when, predicted, actual in run.predictions:
        idx = (when - run.predictions[0][0]).days
        lines.append(f"{idx} {_fmt(actual)} {_fmt(predicted)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_histogram_file(path: Path, job: Job, result: engine.ExperimentResult,
                          num_bins: int = 10) -> None:
    run = result.run
    edges, counts = stats.abs_error_histogram(run.actual, run.predicted, num_bins)
    lines = [
        f"# absolute error histogram: {job.dataset_id} / {run.model_id} / seed {job.seed}",
        "# columns: bin_left bin_right count",
    ]
    for i, count in enumerate(counts):
        lines.append(f"{_fmt(edges[i])} {_fmt(edges[i + 1])} {count}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_loss_file(path: Path, result: engine.ExperimentResult) -> None:
    lines = ["epoch,train_mse,val_mse"]
    for entry in result.history:
        lines.append(f"{entry.epoch},{_fmt(entry.train_mse)},{_fmt(entry.val_mse)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rank_table_text(table: stats.RankTable, scores: np.ndarray | None = None) -> str:
    width = max(len(d) for d in table.datasets + ("Average Rank",)) + 2
    header = "Dataset".ljust(width) + "".join(m.rjust(16) for m in table.models)
    lines = [header]
    if scores is not None:
        lines.append("# aggregate scores")
        for name, row in zip(table.datasets, scores):
            lines.append(name.ljust(width) + "".join(f"{v:16.6g}" for v in row))
        lines.append("# ranks")
    for name, row in zip(table.datasets, table.ranks):
        lines.append(name.ljust(width) + "".join(f"{v:16.2f}" for v in row))
    lines.append("Average Rank".ljust(width)
                 + "".join(f"{v:16.4f}" for v in table.average_ranks))
    return "\n".join(lines) + "\n"


def _friedman_text(result: stats.FriedmanResult, best_model: str) -> str:
    decision = "reject" if result.reject_null else "accept"
    comparison = ">" if result.reject_null else "<="
    return (
        f"chi2_F = {result.chi2_f:.4f}\n"
        f"F_f = {result.f_f:.4f}\n"
        f"df = ({result.df1}, {result.df2})\n"
        f"alpha = {result.alpha}\n"
        f"critical value F({result.df1},{result.df2}) = {result.critical_value:.4f}\n"
        f"decision: {decision} the no-difference hypothesis "
        f"(F_f {comparison} critical value)\n"
        f"best model by average rank: {best_model}\n"
    )


def _model_columns(present: list[str]) -> list[str]:
    ordered = [m for m in MODEL_ORDER if m in present]
    ordered += [m for m in present if m not in ordered]
    return ordered


def cmd_run(config: BenchConfig, dry_run: bool = False) -> int:
    if config.data_path is None:
        raise MissingDataPathError("no data path; pass --data or set data_path")
    train_config = engine.TrainConfig(epochs=config.epochs, batch_size=config.batch_size)

    records = parse_who_csv(config.data_path)
    jobs: list[Job] = []
    bundles: dict[tuple[str, str, int], engine.DatasetBundle] = {}
    series_cache = {}
    failures: list[tuple[Job | str, str]] = []
    for country in config.countries:
        for target in config.targets:
            try:
                series_cache[(country, target)] = extract_series(records, country, target)
            except BenchError as err:
                failures.append((f"{country}/{target}", str(err)))
                continue
            for horizon in config.horizons:
                did = engine.dataset_id(target, horizon, country.upper())
                for token in config.variants:
                    for seed in config.seeds:
                        jobs.append(Job(index=len(jobs), dataset_id=did, country=country,
                                        target=target, horizon=horizon,
                                        variant_token=token, seed=seed))

    if dry_run:
        print(f"dry run: {len(jobs)} job(s)")
        for job in jobs:
            print(f"  [{job.index:3d}] {job.label}")
        for name, err in failures:
            print(f"  FAILED to prepare {name}: {err}")
        return 0 if not failures else 1

    if failures:
        for name, err in failures:
            log.error("cannot prepare %s: %s", name, err)
        return 1

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(exist_ok=True)
    (out / "histograms").mkdir(exist_ok=True)
    (out / "losses").mkdir(exist_ok=True)

    runlog: list[str] = ["# effective configuration"]
    for field in fields(config):
        runlog.append(f"{field.name} = {getattr(config, field.name)}")
    runlog.append(f"# grid: {len(jobs)} job(s)")

    bundle_keys = list(dict.fromkeys((j.country, j.target, j.horizon) for j in jobs))
    for key in bundle_keys:
        country, target, horizon = key
        try:
            bundles[key] = engine.prepare_dataset(
                series_cache[(country, target)], config.window_len, horizon,
                config.train_frac, config.val_frac,
            )
        except BenchError as err:
            failures.append((f"{country}/{target}/h{horizon}", str(err)))
    if failures:
        for name, err in failures:
            log.error("cannot prepare %s: %s", name, err)
        return 1

    packed = [(job, bundles[(job.country, job.target, job.horizon)], train_config,
               config.eval_days) for job in jobs]
    payloads: dict[int, dict] = {}
    workers = min(config.effective_jobs(), len(jobs))
    if workers <= 1:
        for pack in packed:
            job = pack[0]
            try:
                payloads[job.index] = _job_worker(pack)
            except BenchError as err:
                failures.append((job, str(err)))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_job_worker, pack): pack[0] for pack in packed}
            for future in concurrent.futures.as_completed(futures):
                job = futures[future]
                err = future.exception()
                if err is not None:
                    failures.append((job, str(err)))
                else:
                    payloads[job.index] = future.result()

    report_rows: list[dict] = []
    by_cell: dict[tuple[str, str], list[stats.MetricReport]] = {}
    for job in jobs:
        payload = payloads.get(job.index)
        if payload is None:
            continue
        result: engine.ExperimentResult = payload["result"]
        runlog.append(f"done [{job.index:3d}] {job.label}")
        runlog.extend(f"  {line}" for line in payload["log"])
        by_cell.setdefault((job.dataset_id, result.report.model_id), []).append(result.report)
        stem = f"{_slug(job.dataset_id)}__{_slug(result.report.model_id)}__seed{job.seed}"
        _write_prediction_file(out / "predictions" / f"{stem}.dat", job, result)
        _write_histogram_file(out / "histograms" / f"{stem}.dat", job, result)
        _write_loss_file(out / "losses" / f"{stem}.csv", result)

    emitted_mean: set[tuple[str, str]] = set()
    for job in jobs:
        payload = payloads.get(job.index)
        if payload is None:
            continue
        result = payload["result"]
        cell = (job.dataset_id, result.report.model_id)
        report_rows.append(_report_row(result.report, job.seed))
        if (len(config.seeds) > 1 and job.seed == config.seeds[-1]
                and len(by_cell[cell]) == len(config.seeds) and cell not in emitted_mean):
            report_rows.append(_report_row(engine.mean_report(by_cell[cell]), "mean"))
            emitted_mean.add(cell)

    _write_report_csv(out / "report.csv", report_rows)

    exit_code = 0
    if failures:
        exit_code = 1
        runlog.append("# failures")
        for job, err in failures:
            label = job.label if isinstance(job, Job) else str(job)
            runlog.append(f"FAILED {label}: {err}")
            log.error("job failed: %s: %s", label, err)

    # ranking and the Friedman decision over seed-mean aggregate scores
    datasets = []
    for job in jobs:
        if job.dataset_id not in datasets:
            datasets.append(job.dataset_id)
    models = _model_columns(sorted({m for _, m in by_cell}, key=lambda m: m))
    complete = all((d, m) in by_cell for d in datasets for m in models)
    if complete and len(models) >= 2 and len(datasets) >= 2:
        score_matrix = np.array([
            [engine.mean_report(by_cell[(d, m)]).aggregate_score for m in models]
            for d in datasets
        ])
        table = stats.rank_models(score_matrix, datasets, models)
        best = models[int(np.argmin(table.average_ranks))]
        (out / "ranks.txt").write_text(_rank_table_text(table, score_matrix), encoding="utf-8")
        try:
            friedman = stats.friedman_test(table.average_ranks, table.n_datasets,
                                           config.alpha)
            friedman_text = _friedman_text(friedman, best)
        except BenchError as err:
            # tiny grids with perfectly consistent rankings degenerate Eq 6
            friedman_text = (f"test not computable for this grid: {err}\n"
                             f"best model by average rank: {best}\n")
        (out / "friedman.txt").write_text(friedman_text, encoding="utf-8")
        print(friedman_text, end="")
        runlog.append(f"best model by average rank: {best}")
    else:
        runlog.append("# ranking skipped (incomplete grid or fewer than 2 models/datasets)")

    (out / "runlog.txt").write_text("\n".join(runlog) + "\n", encoding="utf-8")
    print(f"report: {out / 'report.csv'} ({len(report_rows)} row(s))")
    return exit_code


# --- stats subcommand -----------------------------------------------------------


def _read_report_csv(path: str):
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = _csv.DictReader(handle)
        header = tuple(reader.fieldnames or ())
        if tuple(h.strip() for h in header) != REPORT_COLUMNS:
            raise SchemaMismatchError(
                f"{path}: header {header} does not match {REPORT_COLUMNS}"
            )
        return list(reader)


def cmd_stats(report_path: str | None, alpha: float, rank_fixture: str | None = None,
              ev_corrected: bool = False) -> int:
    if rank_fixture is not None:
        table, average_ranks = _load_rank_fixture(rank_fixture)
        result = stats.friedman_test(average_ranks, table.n_datasets, alpha)
        best = table.models[int(np.argmin(average_ranks))]
        print(_rank_table_text(table), end="")
        print(_friedman_text(result, best), end="")
        return 0

    if report_path is None:
        raise MissingDataPathError("stats needs a report CSV or --rank-fixture")
    rows = _read_report_csv(report_path)
    cells: dict[tuple[str, str], dict] = {}
    datasets: list[str] = []
    models_seen: list[str] = []
    for row in rows:
        dataset, model = row["dataset_id"], row["model_id"]
        if dataset not in datasets:
            datasets.append(dataset)
        if model not in models_seen:
            models_seen.append(model)
        score = _row_score(row, ev_corrected)
        cell = cells.setdefault((dataset, model), {"mean": None, "scores": []})
        if row["seed"] == "mean":
            cell["mean"] = score
        else:
            cell["scores"].append(score)

    models = _model_columns(models_seen)
    if len(models) < 2 or len(datasets) < 2:
        raise DegenerateTableError(
            f"need at least 2 models and 2 datasets, got {len(models)} and {len(datasets)}"
        )
    matrix = np.empty((len(datasets), len(models)))
    for i, dataset in enumerate(datasets):
        for j, model in enumerate(models):
            cell = cells.get((dataset, model))
            if cell is None:
                raise SchemaMismatchError(f"missing row for ({dataset}, {model})")
            matrix[i, j] = cell["mean"] if cell["mean"] is not None else np.mean(cell["scores"])
    table = stats.rank_models(matrix, datasets, models)
    result = stats.friedman_test(table.average_ranks, table.n_datasets, alpha)
    best = models[int(np.argmin(table.average_ranks))]
    print(_rank_table_text(table, matrix), end="")
    print(_friedman_text(result, best), end="")
    return 0


def _row_score(row: dict, ev_corrected: bool) -> float:
    metric_fields = ("msle", "mape", "rmsle", "ev")
    values = [row.get(name, "").strip() for name in metric_fields]
    if all(values):
        return stats.aggregate_score(*(float(v) for v in values), ev_corrected=ev_corrected)
    text = row.get("aggregate_score", "").strip()
    if not text:
        raise SchemaMismatchError(
            f"row for ({row.get('dataset_id')}, {row.get('model_id')}) has neither "
            "complete metrics nor an aggregate score"
        )
    return float(text)


def _load_rank_fixture(path: str) -> tuple[stats.RankTable, np.ndarray]:
    """Ranks CSV: header 'dataset,<model>,...'; an optional trailing
    'Average Rank' row overrides the computed column means."""
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = _csv.reader(handle)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if len(rows) < 2:
        raise SchemaMismatchError(f"{path}: expected a header and at least one rank row")
    models = tuple(name.strip() for name in rows[0][1:])
    datasets = []
    ranks = []
    average_override = None
    for row in rows[1:]:
        label = row[0].strip()
        values = [float(cell) for cell in row[1 : len(models) + 1]]
        if label.lower() == "average rank":
            average_override = np.array(values)
            continue
        datasets.append(label)
        ranks.append(values)
    table = stats.RankTable(datasets=tuple(datasets), models=models,
                            ranks=np.array(ranks, dtype=np.float64))
    averages = average_override if average_override is not None else table.average_ranks
    return table, averages


# --- argument parsing -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="horizonbench",
        description="Recurrent-network multi-horizon forecasting benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train and evaluate the full model grid")
    run_p.add_argument("--config", help="key = value config file")
    run_p.add_argument("--data", dest="data_path", help="WHO-format CSV path")
    run_p.add_argument("--countries", type=_parse_str_list)
    run_p.add_argument("--targets", type=_parse_str_list)
    run_p.add_argument("--horizons", type=_parse_int_list)
    run_p.add_argument("--variants", type=_parse_str_list)
    run_p.add_argument("--window", dest="window_len", type=int)
    run_p.add_argument("--seeds", type=_parse_int_list)
    run_p.add_argument("--train-frac", dest="train_frac", type=float)
    run_p.add_argument("--val-frac", dest="val_frac", type=float)
    run_p.add_argument("--epochs", type=int)
    run_p.add_argument("--batch", dest="batch_size", type=int)
    run_p.add_argument("--eval-days", dest="eval_days", type=int)
    run_p.add_argument("--alpha", type=float)
    run_p.add_argument("--out", dest="output_dir")
    run_p.add_argument("--jobs", type=int)
    run_p.add_argument("--dry-run", action="store_true",
                       help="print the job grid without training or writing files")

    stats_p = sub.add_parser("stats", help="rank models and run the Friedman test")
    stats_p.add_argument("report", nargs="?", help="report.csv produced by `run`")
    stats_p.add_argument("--alpha", type=float, default=0.05)
    stats_p.add_argument("--rank-fixture", dest="rank_fixture",
                         help="replay a ranks CSV through the test instead")
    stats_p.add_argument("--ev-corrected", action="store_true",
                         help="aggregate with (1 - EV) instead of EV (non-default variant)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            overrides = {
                key: getattr(args, key)
                for key in _FIELD_PARSERS
                if hasattr(args, key) and getattr(args, key) is not None
            }
            config = load_config(args.config, overrides)
            return cmd_run(config, dry_run=args.dry_run)
        if args.command == "stats":
            return cmd_stats(args.report, args.alpha, args.rank_fixture, args.ev_corrected)
    except BenchError as err:
        log.error("%s: %s", type(err).__name__, err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
