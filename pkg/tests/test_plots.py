import pytest
import matplotlib
import numpy as np
import pandas as pd
from VDEARec import plots


def test_get_colors():
    """Test the `get_colors` function
    """
    n = 10
    colors = plots.get_colors(n)
    assert len(colors) == n


def test_loss_plot():
    """Test that we can produce a loss plot
    """
    frame = pd.DataFrame({"epoch": np.arange(5), "l_vr": np.random.random(5),
                          "total": np.random.random(5)})
    assert isinstance(plots.loss_plot(frame, ["l_vr", "total"]), matplotlib.figure.Figure)


def test_sweep_plot():
    """Test that we can produce a sweep plot, skipping failed cells
    """
    table = pd.DataFrame({"variant": ["full", "full", "base", "base"],
                          "lambda_vl": [0.1, 0.7, 0.1, 0.7],
                          "hr_target": [0.3, 0.4, 0.2, np.nan],
                          "status": ["ok", "ok", "ok", "failed"]})
    assert isinstance(plots.sweep_plot(table, "lambda_vl"), matplotlib.figure.Figure)
