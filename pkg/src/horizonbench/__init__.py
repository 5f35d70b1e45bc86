"""Recurrent-network benchmark for multi-horizon forecasting of epidemic count series."""

from .cells import (
    MODEL_ORDER,
    CellState,
    ModelConfig,
    TrainedModel,
    backprop_through_time,
    bidirectional_forward,
    build_model,
    convlstm_step,
    gru_step,
    lstm_step,
    run_sequence,
)
from .data import (
    MinMaxScaler,
    SeriesRecord,
    TimeSeries,
    WindowedDataset,
    build_windows,
    extract_series,
    parse_who_csv,
    split_series,
)
from .engine import (
    ForecastRun,
    TrainConfig,
    prepare_dataset,
    rolling_forecast,
    run_experiment,
    single_run,
    train,
)
from .nncore import (
    Adam,
    AdamState,
    activation,
    adam_step,
    clip_global_norm,
    dense_forward,
    grad_check,
    init_params,
    mse_loss,
)
from .stats import (
    FriedmanResult,
    MetricReport,
    RankTable,
    abs_error_histogram,
    aggregate_score,
    explained_variance,
    f_cdf,
    f_critical,
    friedman_chi2,
    friedman_statistic,
    friedman_test,
    iman_davenport,
    mape,
    msle,
    rank_models,
    rmsle,
)

__version__ = "0.1.0"
