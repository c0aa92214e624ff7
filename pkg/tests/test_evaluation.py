import json
import logging

import numpy as np
import pytest
from scipy import stats

from bmdfusion.config import AugmentationPolicy, ScreeningConfig
from bmdfusion.data import fit_scaler, stratified_folds
from bmdfusion.errors import NumericalError, ParameterError
from bmdfusion.evaluation import (
    EvaluationReport,
    extreme_bin_mse,
    fisher_ci,
    metrics_table,
    paired_t_test,
    pearson_fisher_ci,
    regression_metrics,
    screening_metrics,
    stratified_bootstrap_bands,
    t_score,
    wilson_interval,
)
from bmdfusion.evaluation.attention import field_attention_table, top_fields
from bmdfusion.evaluation.perturbation import perturbation_test
from bmdfusion.evaluation.stats import t_cdf
from bmdfusion.model import FusionRegressor
from bmdfusion.training import Checkpoint, predict
from bmdfusion.training.trainer import held_out_split

# regression


def test_regression_metrics_identities(rng):
    y = rng.uniform(0.5, 1.3, size=30)
    exact = regression_metrics(y, y)
    assert exact.mse == 0.0 and exact.mae == 0.0 and exact.r2 == 1.0
    mean_only = regression_metrics(y, np.full_like(y, y.mean()))
    assert mean_only.r2 == pytest.approx(0.0, abs=1e-12)
    y_hat = y + rng.normal(0.0, 0.1, size=30)
    m = regression_metrics(y, y_hat)
    assert m.mse == pytest.approx(np.mean((y - y_hat) ** 2))
    assert m.mae == pytest.approx(np.mean(np.abs(y - y_hat)))
    assert m.r2 == pytest.approx(1.0 - np.sum((y - y_hat) ** 2) / np.sum((y - y.mean()) ** 2))
    assert m.n == 30 and m.r2_defined


def test_r2_is_flagged_for_constant_targets():
    m = regression_metrics([0.9, 0.9, 0.9], [0.8, 0.9, 1.0])
    assert not m.r2_defined and np.isnan(m.r2)
    assert m.mse == pytest.approx(0.02 / 3)
    with pytest.raises(ParameterError):
        regression_metrics([], [])


def test_extreme_bin_mse():
    y = np.array([0.6, 0.9, 1.2, 0.95])
    y_hat = np.array([0.7, 0.0, 1.0, 0.0])
    assert extreme_bin_mse(y, y_hat) == pytest.approx((0.01 + 0.04) / 2)
    assert np.isnan(extreme_bin_mse([0.9, 1.0], [0.0, 0.0]))


def test_fisher_interval_anchor():
    lo, hi = fisher_ci(0.760, 233)
    assert lo == pytest.approx(0.695, abs=0.01)
    assert hi == pytest.approx(0.812, abs=0.01)
    assert lo < 0.760 < hi
    with pytest.raises(ParameterError):
        fisher_ci(0.5, 3)


def test_pearson_interval(rng):
    y = rng.standard_normal(50)
    y_hat = y + rng.normal(0.0, 0.5, size=50)
    r, lo, hi = pearson_fisher_ci(y, y_hat)
    assert r == pytest.approx(np.corrcoef(y, y_hat)[0, 1], rel=1e-12)
    assert (lo, hi) == pytest.approx(fisher_ci(r, 50))
    assert lo < r < hi
    with pytest.raises(NumericalError):
        pearson_fisher_ci(y, np.ones(50))


# paired t-test


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_paired_t_test_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.05, 0.01, size=10)
    b = a + rng.normal(0.002, 0.004, size=10)
    got = paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert got.t == pytest.approx(ref.statistic, rel=1e-4)
    assert got.p == pytest.approx(ref.pvalue, rel=1e-4, abs=1e-12)
    assert got.dof == 9 and not got.degenerate


def test_t_cdf_matches_scipy():
    for t in (-3.2, -0.4, 0.0, 0.7, 2.5):
        for dof in (1, 4, 9, 30):
            assert t_cdf(t, dof) == pytest.approx(stats.t.cdf(t, dof), abs=1e-10)


def test_degenerate_t_tests():
    same = paired_t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert same.degenerate and same.t == 0.0 and same.p == 1.0
    shifted = paired_t_test([0.2, 0.3, 0.4], [0.1, 0.2, 0.3])
    assert shifted.degenerate and shifted.t == np.inf and shifted.p == 0.0
    with pytest.raises(ParameterError):
        paired_t_test([0.1], [0.2])


# screening


def test_t_score_anchors():
    assert t_score(1.038) == pytest.approx(0.0)
    assert t_score(0.899) == pytest.approx(-1.0)
    cfg = ScreeningConfig()
    assert cfg.bmd_threshold == pytest.approx(0.899)
    assert cfg.osteoporosis_threshold == pytest.approx(0.6905)


def test_wilson_interval():
    lo, hi = wilson_interval(8, 10)
    assert lo == pytest.approx(0.4902, abs=1e-4)
    assert hi == pytest.approx(0.9433, abs=1e-4)
    assert wilson_interval(0, 5)[0] == 0.0
    assert wilson_interval(5, 5)[1] == 1.0
    assert all(np.isnan(wilson_interval(0, 0)))


def test_screening_confusion_counts():
    y = [0.80, 0.85, 0.95, 1.00, 0.70, 1.10]
    y_hat = [0.85, 0.95, 0.80, 1.05, 0.60, 1.00]
    m = screening_metrics(y, y_hat)
    assert (m.tp, m.fn, m.fp, m.tn) == (2, 1, 1, 2)
    assert m.sensitivity == pytest.approx(2 / 3)
    assert m.specificity == pytest.approx(2 / 3)
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.per_class["low_bmd"].support == 3
    assert m.counts["prevalence"] == pytest.approx(0.5)
    assert 0.0 <= m.roc_auc <= 1.0 and not m.single_class


def brute_force_auc(truth, score):
    pos, neg = score[truth], score[~truth]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def test_auc_matches_pairwise_counting():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 13))
        y = rng.uniform(0.6, 1.2, size=n)
        truth = y < 0.899
        if truth.all() or not truth.any():
            continue
        y_hat = np.round(y + rng.normal(0.0, 0.15, size=n), 2)  # rounding makes ties
        m = screening_metrics(y, y_hat)
        assert m.roc_auc == pytest.approx(brute_force_auc(truth, -y_hat), abs=1e-12)
        checked += 1


def test_single_class_screening_warns(caplog):
    with caplog.at_level(logging.WARNING):
        m = screening_metrics([1.0, 1.1, 1.2], [0.8, 1.0, 1.1])
    assert m.single_class and np.isnan(m.roc_auc) and np.isnan(m.average_precision)
    assert np.isnan(m.sensitivity)
    assert "single class" in caplog.text


def screening_data(seed=3, n=60):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.6, 1.2, size=n)
    return y, y + rng.normal(0.0, 0.08, size=n)


def test_bootstrap_bands_are_ordered_percentiles():
    y, y_hat = screening_data()
    bands = stratified_bootstrap_bands(y, y_hat, ScreeningConfig(grid_points=21), n_boot=60, seed=1)
    assert bands.fpr_grid.shape == (21,)
    assert np.all(bands.tpr_lo <= bands.tpr_hi)
    assert np.all(bands.precision_lo <= bands.precision_hi)
    assert bands.auc_ci[0] <= bands.auc_ci[1]
    assert 0.0 <= bands.auc_ci[0] and bands.auc_ci[1] <= 1.0
    assert bands.auc == pytest.approx(screening_metrics(y, y_hat).roc_auc)


def test_bootstrap_bands_are_seeded():
    y, y_hat = screening_data()
    a = stratified_bootstrap_bands(y, y_hat, n_boot=30, seed=4)
    b = stratified_bootstrap_bands(y, y_hat, n_boot=30, seed=4)
    np.testing.assert_array_equal(a.tpr_lo, b.tpr_lo)
    assert a.auc_ci == b.auc_ci
    assert json.dumps(a.to_dict())


def test_single_replicate_band_is_not_widened(caplog):
    y, y_hat = screening_data()
    with caplog.at_level(logging.INFO, logger="bmdfusion.evaluation.screening"):
        bands = stratified_bootstrap_bands(y, y_hat, n_boot=1, seed=2)
    np.testing.assert_array_equal(bands.tpr_lo, bands.tpr_hi)
    np.testing.assert_array_equal(bands.precision_lo, bands.precision_hi)
    assert bands.auc_ci[0] == bands.auc_ci[1]
    assert not np.array_equal(bands.tpr_lo, bands.tpr) or bands.auc_ci[0] != bands.auc
    assert "outside the bootstrap band" in caplog.text


def test_bootstrap_needs_both_classes():
    with pytest.raises(ParameterError):
        stratified_bootstrap_bands([1.0, 1.1, 1.2], [0.9, 1.0, 1.1], n_boot=10)
    with pytest.raises(ParameterError):
        stratified_bootstrap_bands(*screening_data(), n_boot=0)


# perturbation and attention


@pytest.fixture
def fold_checkpoint(make_config, small_manifest):
    cfg = make_config()
    plan = stratified_folds(small_manifest, 4)
    model = FusionRegressor(cfg)
    scaler = fit_scaler(small_manifest.subset(plan.train_ids(0)))
    ckpt = Checkpoint(cfg, model.state_dict(), 0, 0.0, scaler, cfg.metadata.field_spec, fold=0)
    return ckpt, held_out_split(small_manifest, plan, 0, ckpt)


def test_identity_perturbation_reproduces_original(fold_checkpoint):
    ckpt, split = fold_checkpoint
    result = perturbation_test(ckpt, split, AugmentationPolicy.identity(), n_variants=3, seed=1)
    np.testing.assert_array_equal(result.perturbed_mean, result.original)
    assert result.perturbed_metrics == result.original_metrics
    assert result.ids == split.ids


def test_perturbation_changes_predictions(fold_checkpoint):
    ckpt, split = fold_checkpoint
    a = perturbation_test(ckpt, split, n_variants=2, seed=1)
    b = perturbation_test(ckpt, split, n_variants=2, seed=1)
    np.testing.assert_array_equal(a.perturbed_mean, b.perturbed_mean)
    assert not np.array_equal(a.perturbed_mean, a.original)
    with pytest.raises(ParameterError):
        perturbation_test(ckpt, split, n_variants=0)


def test_field_attention_table(fold_checkpoint):
    ckpt, split = fold_checkpoint
    _, traces = predict(ckpt.build_model(), split.images, split.meta, batch_size=4, with_traces=True)
    table = field_attention_table([t["img_to_meta"] for t in traces])
    assert list(table["layer"]) == ["layer_1", "layer_2", "mean"]
    assert "agexray" in table.columns
    np.testing.assert_allclose(table.drop(columns="layer").sum(axis=1), 1.0, atol=1e-10)
    top = top_fields(table, k=3)
    assert len(top) == 3
    assert list(top.values()) == sorted(top.values(), reverse=True)


# reports


def test_metrics_table_summary_rows(rng):
    folds = {k: regression_metrics(rng.uniform(0.5, 1.3, 10), rng.uniform(0.5, 1.3, 10)) for k in range(3)}
    table = metrics_table(folds)
    assert list(table["fold"]) == ["0", "1", "2", "mean", "sd"]
    assert table.loc[3, "mse"] == pytest.approx(np.mean([folds[k].mse for k in range(3)]))
    assert table.loc[4, "mse"] == pytest.approx(np.std([folds[k].mse for k in range(3)], ddof=1))


def test_report_json_carries_the_config_hash(tmp_path):
    folds = {0: (np.array([0.9, 0.9]), np.array([0.8, 1.0])), 1: (np.array([0.7, 1.1]), np.array([0.75, 1.0]))}
    report = EvaluationReport.from_predictions("abcdef0123456789", folds)
    payload = json.loads(report.to_json(tmp_path / "report.json"))
    assert payload["config_hash"] == "abcdef0123456789"
    assert payload["folds"]["0"]["r2"] is None
    assert payload["folds"]["0"]["r2_defined"] is False
    assert payload["pooled"]["n"] == 4
    assert json.loads((tmp_path / "report.json").read_text())["summary"]["mse"]["mean"] is not None
