"""Optimizers, annealing schedules and training loops."""

from .adam import AdamState, adam_step
from .lbfgs import LbfgsInfo, LbfgsState, lbfgs_minimize
from .schedule import AnnealingSchedule, schedule_weights
from .trainer import (TRACE_HEADER, TrainConfig, TrainResult, TraceRow, amortized_train, em_train,
                      eval_external_dictionary, optimize_posteriors, read_checkpoint, read_trace,
                      write_checkpoint, write_trace)

__all__ = [
    "AdamState", "adam_step", "LbfgsInfo", "LbfgsState", "lbfgs_minimize", "AnnealingSchedule",
    "schedule_weights", "TRACE_HEADER", "TrainConfig", "TrainResult", "TraceRow", "amortized_train",
    "em_train", "eval_external_dictionary", "optimize_posteriors", "read_checkpoint", "read_trace",
    "write_checkpoint", "write_trace",
]
