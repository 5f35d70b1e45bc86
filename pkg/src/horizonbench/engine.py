"""Training loop and rolling multi-horizon evaluation.

One model is trained per horizon with the target h days past the window end
(direct strategy, no recursive feeding). Evaluation is teacher-forced: every
input window over the evaluation span is built from observed values, forecasts
are issued at origins spaced h days apart, so a horizon-h sweep of a 100-day
span costs ceil(100 / h) model evaluations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date

import numpy as np

from .cells import ModelConfig, TrainedModel, build_model
from .data import MinMaxScaler, TimeSeries, WindowedDataset, build_windows, split_series
from .errors import DivergedLossError, InvalidValueError, SeriesTooShortError
from .nncore import AdamState, Rng, adam_step, mse_loss
from .stats import MetricReport, score_report

log = logging.getLogger("horizonbench.engine")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    shuffle_each_epoch: bool = True
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass(frozen=True)
class ForecastRun:
    model_id: str
    country_code: str
    column: str
    horizon: int
    eval_days: int
    # (date, predicted, actual) in original units, dates advancing by h
    predictions: tuple[tuple[date, float, float], ...]

    @property
    def predicted(self) -> np.ndarray:
        return np.array([p for _, p, _ in self.predictions])

    @property
    def actual(self) -> np.ndarray:
        return np.array([a for _, _, a in self.predictions])


def train(model: TrainedModel, train_set: WindowedDataset,
          val_set: WindowedDataset | None, config: TrainConfig) -> list[EpochStats]:
    """Fixed-epoch Adam training on shuffled mini-batches.

    Validation loss is recorded for reporting only; there is no early stopping
    and the final-epoch model is the result. Gradients are clipped to unit
    global norm before each step.
    """
    if len(train_set) == 0:
        raise InvalidValueError("empty training set")
    # one flat value/gradient buffer: clipping and Adam become whole-vector ops
    values = model.flatten_params()
    grad_flat, grad_views = model.flat_grad_views()
    state = AdamState.for_shape(values.shape, alpha=config.learning_rate,
                                beta1=config.beta1, beta2=config.beta2)
    shuffle_rng = Rng(model.config.seed, "shuffle")
    indices = list(range(len(train_set)))
    history: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        if config.shuffle_each_epoch:
            shuffle_rng.shuffle(indices)
        sq_err_sum = 0.0
        for start in range(0, len(indices), config.batch_size):
            batch = indices[start : start + config.batch_size]
            _, cache = model.forward_batch(train_set.inputs[batch])
            grad_flat.fill(0.0)
            loss, _ = model.backward_batch(train_set.targets[batch], cache, grad_views)
            if not np.isfinite(loss):
                raise DivergedLossError(
                    f"{model.config.model_id}: train loss {loss} at epoch {epoch}"
                )
            if config.clip_norm is not None:
                norm = float(np.sqrt(grad_flat @ grad_flat))
                if norm > config.clip_norm:
                    grad_flat *= config.clip_norm / norm
            adam_step(values, grad_flat, state)
            sq_err_sum += loss * len(batch)
        train_mse = sq_err_sum / len(indices)
        val_mse = float("nan")
        if val_set is not None and len(val_set) > 0:
            val_mse = mse_loss(model.predict(val_set.inputs), val_set.targets)[0]
        history.append(EpochStats(epoch=epoch, train_mse=train_mse, val_mse=val_mse))
    return history


def rolling_forecast(model: TrainedModel, series: TimeSeries, horizon: int,
                     eval_days: int = 100) -> ForecastRun:
    """Teacher-forced forecasts over the last ``eval_days`` of the series.

    Targets sit at day E0, E0 + h, E0 + 2h, ... within the span, each predicted
    from the observed window ending h days earlier, for ceil(eval_days / h)
    model evaluations in total. Outputs are inverse-scaled to original units.
    """
    cfg = model.config
    if horizon != cfg.horizon:
        raise InvalidValueError(
            f"model was trained for h={cfg.horizon}, cannot forecast h={horizon}"
        )
    if model.scaler is None:
        raise InvalidValueError("model has no scaler; cannot map to original units")
    if eval_days < 1:
        raise InvalidValueError("eval_days must be >= 1")
    n = len(series)
    first_target = n - eval_days
    first_window_start = first_target - horizon - cfg.window_len + 1
    if first_window_start < 0:
        raise SeriesTooShortError(
            f"series of length {n} too short for eval_days={eval_days}, "
            f"W={cfg.window_len}, h={horizon}"
        )
    target_idx = np.arange(first_target, n, horizon)
    scaled = model.scaler.transform(series.values)
    windows = np.stack([scaled[t - horizon - cfg.window_len + 1 : t - horizon + 1]
                        for t in target_idx])
    predicted = model.scaler.invert(model.predict(windows))
    predictions = tuple(
        (series.date_at(int(t)), float(p), float(series.values[t]))
        for t, p in zip(target_idx, predicted)
    )
    return ForecastRun(model_id=cfg.model_id, country_code=series.country_code,
                       column=series.column, horizon=horizon, eval_days=eval_days,
                       predictions=predictions)


# --- end-to-end experiment ----------------------------------------------------


_FAMILY = {
    "cumulative_cases": "New Cases",
    "cumulative_deaths": "New Deaths",
    "new_cases": "New Cases (daily)",
    "new_deaths": "New Deaths (daily)",
}


def dataset_id(column: str, horizon: int, country_code: str) -> str:
    return f"{_FAMILY[column]} {horizon}-day {country_code}"


@dataclass
class DatasetBundle:
    """Everything a training job needs for one (series, W, h) combination."""

    series: TimeSeries
    scaler: MinMaxScaler
    train_set: WindowedDataset
    val_set: WindowedDataset | None
    horizon: int
    window_len: int


def prepare_dataset(series: TimeSeries, window_len: int, horizon: int,
                    train_frac: float = 0.70, val_frac: float = 0.20) -> DatasetBundle:
    """Split chronologically, fit the scaler on the training block only, window."""
    train_vals, val_vals, _ = split_series(series.values, train_frac, val_frac)
    scaler = MinMaxScaler.fit(train_vals)
    train_set = build_windows(scaler.transform(train_vals), window_len, horizon,
                              start_date=series.start_date)
    val_set = None
    if len(val_vals) >= window_len + horizon:
        val_start = series.date_at(len(train_vals))
        val_set = build_windows(scaler.transform(val_vals), window_len, horizon,
                                start_date=val_start)
    return DatasetBundle(series=series, scaler=scaler, train_set=train_set,
                         val_set=val_set, horizon=horizon, window_len=window_len)


@dataclass(frozen=True)
class ExperimentResult:
    report: MetricReport
    seed: int
    run: ForecastRun
    history: tuple[EpochStats, ...]


def single_run(bundle: DatasetBundle, variant: str, bidirectional: bool, seed: int,
               train_config: TrainConfig, eval_days: int = 100,
               model_overrides: dict | None = None) -> ExperimentResult:
    """Build, train and evaluate one model on one prepared dataset."""
    overrides = model_overrides or {}
    config = ModelConfig(variant=variant, bidirectional=bidirectional,
                         window_len=bundle.window_len, horizon=bundle.horizon,
                         seed=seed, **overrides)
    model = build_model(config, scaler=bundle.scaler)
    history = train(model, bundle.train_set, bundle.val_set, train_config)
    run = rolling_forecast(model, bundle.series, bundle.horizon, eval_days)
    did = dataset_id(bundle.series.column, bundle.horizon, bundle.series.country_code)
    report = score_report(did, config.model_id, run.actual, run.predicted)
    return ExperimentResult(report=report, seed=seed, run=run, history=tuple(history))


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Per-metric mean across seeds; the aggregate is re-averaged the same way."""
    if not reports:
        raise InvalidValueError("mean over zero reports")
    return MetricReport(
        dataset_id=reports[0].dataset_id,
        model_id=reports[0].model_id,
        msle=float(np.mean([r.msle for r in reports])),
        mape=float(np.mean([r.mape for r in reports])),
        rmsle=float(np.mean([r.rmsle for r in reports])),
        ev=float(np.mean([r.ev for r in reports])),
        aggregate_score=float(np.mean([r.aggregate_score for r in reports])),
    )


def run_experiment(series: TimeSeries, horizon: int, variant: str, bidirectional: bool,
                   seeds, window_len: int = 4, train_frac: float = 0.70,
                   val_frac: float = 0.20, train_config: TrainConfig | None = None,
                   eval_days: int = 100,
                   model_overrides: dict | None = None) -> list[ExperimentResult]:
    """Extract -> split -> scale -> window -> train -> forecast for each seed.

    Returns one result per seed; callers wanting the seed-mean row combine the
    reports with :func:`mean_report`.
    """
    seeds = list(seeds)
    if not seeds:
        raise InvalidValueError("seeds must be nonempty")
    train_config = train_config or TrainConfig()
    bundle = prepare_dataset(series, window_len, horizon, train_frac, val_frac)
    return [
        single_run(bundle, variant, bidirectional, seed, train_config, eval_days,
                   model_overrides)
        for seed in seeds
    ]
