import numpy as np
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.pyplot import cm
    MATPLOTLIB = True
except ImportError:
    print("Failed to import matplotlib. Unable to generate the plots")
    MATPLOTLIB = False


def get_colors(n):
    """Return a color wheel of n dimensions

    Parameters
    ----------
    n: float
        the number of dimensions of your color wheel
    """
    color = cm.rainbow(np.linspace(0, 1, n))
    return color


def loss_plot(frame, columns, x="epoch", **kwargs):
    """Generate a plot of several columns of a table against one column

    Parameters
    ----------
    frame: pandas.DataFrame
        table with one row per epoch
    columns: list
        names of the columns to draw
    x: str
        name of the abscissa column
    **kwargs: dict
        all kwargs are passed to the matplotlib.pyplot.plot function
    """
    if MATPLOTLIB:
        fig = plt.figure()
        colors = get_colors(len(columns))
        for color, column in zip(colors, columns):
            plt.plot(frame[x], frame[column], label=column, color=color, **kwargs)
        plt.xlabel(x.capitalize(), fontsize=16)
        plt.legend(loc="best")
        return fig
    return


def sweep_plot(table, axis, metric="hr_target", group="variant", **kwargs):
    """Generate a plot of one metric against a swept hyper-parameter

    Parameters
    ----------
    table: pandas.DataFrame
        ablation table, one row per cell
    axis: str
        the swept column
    metric: str
        column drawn on the y axis
    group: str
        one line is drawn per distinct value of this column
    """
    if MATPLOTLIB:
        fig = plt.figure()
        table = table[table["status"] == "ok"]
        groups = sorted(table[group].unique()) if group in table else [None]
        colors = get_colors(max(len(groups), 1))
        for color, value in zip(colors, groups):
            rows = table if value is None else table[table[group] == value]
            rows = rows.sort_values(axis)
            plt.plot(rows[axis], rows[metric], marker="o", label=str(value), color=color,
                     **kwargs)
        plt.xlabel(axis, fontsize=16)
        plt.ylabel(metric, fontsize=16)
        plt.legend(loc="best")
        return fig
    return
