"""Prediction-error metrics, evaluation protocols and reports."""

from .metrics import (SCALE, EvalReport, ProtocolResult, collect, config_hash, emit_report, error_curve,
                      eval_beyond, eval_generalization, eval_horizons, eval_within, format_table, gt_predictor,
                      model_predictor, pred_error, static_predictor)

__all__ = [
    "SCALE", "EvalReport", "ProtocolResult", "collect", "config_hash", "emit_report", "error_curve",
    "eval_beyond", "eval_generalization", "eval_horizons", "eval_within", "format_table", "gt_predictor",
    "model_predictor", "pred_error", "static_predictor",
]
