from .config import (ConfigError, build_dagger_config, build_env_config,
                     build_train_config, config_hash, load_config)
from .metrics import (MetricsRecord, read_metrics, read_trace,
                      trace_to_csv, write_metrics, write_rows_csv,
                      write_trace)
from .protocols import (StopLatency, eval_reorient, hold_test,
                        stop_latency, travel_distance)
from .ablation import ABLATION_KINDS, run_ablation, steps_to_threshold

__all__ = [
    "ConfigError", "build_dagger_config", "build_env_config",
    "build_train_config", "config_hash", "load_config",
    "MetricsRecord", "read_metrics", "read_trace", "trace_to_csv",
    "write_metrics", "write_rows_csv", "write_trace",
    "StopLatency", "eval_reorient", "hold_test", "stop_latency",
    "travel_distance",
    "ABLATION_KINDS", "run_ablation", "steps_to_threshold",
]
