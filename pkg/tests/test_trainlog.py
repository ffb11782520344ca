import os
import shutil
import tempfile

import pytest
import numpy as np
import matplotlib

from VDEARec.base import FormatError
from VDEARec.result import TrainLog, COLUMNS


def _record(epoch, hr_src, hr_tgt):
    record = {c: 0.1 * epoch for c in COLUMNS}
    record.update({"epoch": epoch, "hr5_src": hr_src, "hr5_tgt": hr_tgt})
    return record


class TestTrainLog(object):
    """Test the per-epoch training log
    """
    def setup_method(self):
        self.tmpdir = tempfile.mkdtemp()
        self.log = TrainLog([_record(0, 0.1, 0.2), _record(1, 0.4, 0.3), _record(2, 0.2, 0.1)])

    def teardown_method(self):
        shutil.rmtree(self.tmpdir)

    def test_best_epoch(self):
        """Test that the best epoch maximizes the mean validation HR
        """
        np.testing.assert_allclose(self.log.validation_score(), [0.15, 0.35, 0.15])
        assert self.log.best_epoch == 1
        assert TrainLog().best_epoch is None

    def test_missing_columns(self):
        with pytest.raises(FormatError):
            self.log.append({"epoch": 3})

    def test_save_and_load(self):
        """Test that a saved log reads back with identical values
        """
        path = os.path.join(self.tmpdir, "trainlog.csv")
        self.log.save(path)
        with open(path) as fin:
            assert fin.readline().strip() == ",".join(COLUMNS)
        loaded = TrainLog.load(path)
        assert len(loaded) == 3
        for column in COLUMNS:
            np.testing.assert_array_equal(loaded.column(column), self.log.column(column))

    def test_bad_header(self):
        path = os.path.join(self.tmpdir, "other.csv")
        with open(path, "w") as fout:
            fout.write("a,b\n1,2\n")
        with pytest.raises(FormatError):
            TrainLog.load(path)

    def test_plots(self):
        """Test that loss and metric plots are produced
        """
        assert isinstance(self.log.plot_losses(), matplotlib.figure.Figure)
        assert isinstance(self.log.plot_metrics(), matplotlib.figure.Figure)
