import numpy as np
import pytest

from src.uq_toolkit.linreg import fit_ols, predict_intervals
from src.uq_toolkit.plotting import plot_interval_band, plot_rejection_curves, plot_set_sizes
from src.uq_toolkit.selective import rejection_curve


def test_figures_are_reproducible(tmp_path):
    histogram = np.array([3, 40, 12, 1])
    first = plot_set_sizes(histogram, tmp_path / "a.svg")
    second = plot_set_sizes(histogram, tmp_path / "b.svg")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_band_and_curve_figures(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 10, size=(20, 1))
    y = 1.0 + 0.5 * x[:, 0] + rng.standard_normal(20)
    fit = fit_ols(x, y)
    grid = np.linspace(0, 12, 25)[:, None]
    band_path = plot_interval_band(x, y, grid, predict_intervals(fit, grid, 0.1), tmp_path / "band.svg", title="demo")
    assert band_path.stat().st_size > 0

    curve = rejection_curve(rng.random(30), rng.integers(0, 2, 30), rng.integers(0, 2, 30), "accuracy")
    curves_path = plot_rejection_curves({"total": curve, "epistemic": curve}, tmp_path / "curves.svg", target=0.9)
    assert curves_path.stat().st_size > 0


if __name__ == "__main__":
    pytest.main(["-v", __file__])
