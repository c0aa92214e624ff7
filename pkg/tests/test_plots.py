import numpy as np

from bmdfusion.plots import svg


def test_labels_are_escaped():
    out = svg.bar_svg("a <b> & c", ["x<y", "z"], [0.5, 1.0])
    assert "a &lt;b&gt; &amp; c" in out
    assert "x&lt;y" in out
    assert out.count("<rect") == 4  # background, frame, two bars


def test_non_finite_values_are_skipped():
    out = svg.scatter_identity_svg("pts", [0.8, np.nan, 1.0], [0.9, 0.7, np.inf])
    assert out.count("<circle") == 1
    bars = svg.bar_svg("bars", ["a", "b"], [np.nan, 0.4], errors=[(np.nan, np.nan), (0.3, 0.5)])
    assert "nan" not in bars


def test_curve_band_and_lines(tmp_path):
    grid = np.linspace(0.0, 1.0, 5)
    band = svg.curve_band_svg("roc", grid, grid, grid * 0.9, np.minimum(grid * 1.1, 1.0),
                              "fpr", "tpr", note="AUC 0.5", diagonal=True)
    assert "AUC 0.5" in band
    lines = svg.line_svg("loss", [1, 2, 3], {"train": [1.0, 0.5, 0.25], "validation": [1.1, 0.6, 0.4]},
                         "epoch", "loss")
    assert "train" in lines and "validation" in lines
    path = svg.write_svg(tmp_path / "loss.svg", lines)
    assert path.read_text(encoding="utf-8") == lines


def test_grouped_bars():
    out = svg.grouped_bar_svg("per class", ["low_bmd", "normal_bmd"],
                              {"precision": [0.5, 0.8], "recall": [0.6, 0.7], "f1": [0.55, 0.75]})
    assert "low_bmd" in out and "recall" in out
