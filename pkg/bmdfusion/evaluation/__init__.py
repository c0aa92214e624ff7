from bmdfusion.evaluation.regression import (
    RegressionMetrics,
    extreme_bin_mse,
    fisher_ci,
    pearson_fisher_ci,
    regression_metrics,
)
from bmdfusion.evaluation.report import EvaluationReport, metrics_table
from bmdfusion.evaluation.screening import (
    BootstrapBands,
    ScreeningMetrics,
    screening_metrics,
    stratified_bootstrap_bands,
    t_score,
    wilson_interval,
)
from bmdfusion.evaluation.stats import PairedTTest, paired_t_test

__all__ = [
    "BootstrapBands", "EvaluationReport", "PairedTTest", "RegressionMetrics", "ScreeningMetrics",
    "extreme_bin_mse", "fisher_ci", "metrics_table", "paired_t_test", "pearson_fisher_ci",
    "regression_metrics", "screening_metrics", "stratified_bootstrap_bands", "t_score",
    "wilson_interval",
]
