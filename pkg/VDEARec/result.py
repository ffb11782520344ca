import numpy as np
import pandas as pd

from . import plots
from .base import FormatError

COLUMNS = ["epoch", "l_vr", "l_va", "l_vg", "total", "beta", "hr5_src", "ndcg5_src",
           "hr5_tgt", "ndcg5_tgt", "seconds"]
LOSS_COLUMNS = ["l_vr", "l_va", "l_vg", "total"]


class TrainLog(object):
    """Class to handle the per-epoch records of a training run

    Parameters
    ----------
    records: list of dict
        one dict per completed epoch with the keys of ``COLUMNS``
    """

    def __init__(self, records=None):
        self.records = []
        for record in records or []:
            self.append(record)

    def __len__(self):
        return len(self.records)

    def append(self, record):
        """Add the record of one completed epoch
        """
        missing = [c for c in COLUMNS if c not in record]
        if missing:
            raise FormatError("train log record lacks %s" % ", ".join(missing))
        self.records.append({c: record[c] for c in COLUMNS})

    def to_frame(self):
        return pd.DataFrame(self.records, columns=COLUMNS)

    def column(self, name):
        """Return one column as a numpy array
        """
        return np.array([r[name] for r in self.records])

    def validation_score(self):
        """Validation HR averaged over the two domains, per epoch
        """
        return 0.5 * (self.column("hr5_src") + self.column("hr5_tgt"))

    @property
    def best_epoch(self):
        """Epoch with the highest averaged validation HR
        """
        if not self.records:
            return None
        return int(self.column("epoch")[np.argmax(self.validation_score())])

    def save(self, outfile):
        """Save the log as CSV

        Parameters
        ----------
        outfile: str
            path of the CSV file
        """
        frame = self.to_frame()
        frame["epoch"] = frame["epoch"].astype(int)
        frame.to_csv(outfile, index=False, float_format="%.17g")

    @classmethod
    def load(cls, infile):
        """Read a log written by ``save``
        """
        frame = pd.read_csv(infile)
        if list(frame.columns) != COLUMNS:
            raise FormatError("%s: unexpected train log header %s" % (
                infile, ",".join(frame.columns)))
        return cls(frame.to_dict("records"))

    def _plot(self, func, **kwargs):
        """Generate plots according to a specific function

        Parameters
        ----------
        func: function
            plotting function to execute
        """
        return func(self.to_frame(), **kwargs)

    def plot_losses(self, **kwargs):
        """Generate a plot of the loss terms against the epoch
        """
        return self._plot(plots.loss_plot, columns=LOSS_COLUMNS, **kwargs)

    def plot_metrics(self, **kwargs):
        """Generate a plot of the validation metrics against the epoch
        """
        return self._plot(plots.loss_plot, columns=["hr5_src", "ndcg5_src", "hr5_tgt",
                                                    "ndcg5_tgt"], **kwargs)
