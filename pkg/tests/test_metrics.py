import math

import pytest

from ebnsim import metrics
from ebnsim.errors import NoMeasurementsError, NoSuccessesError
from ebnsim.metrics import AttemptRecord

MS = 1_000_000


def rec(c, t_ms, f=None, bits=(None, None), j=0):
    return AttemptRecord("r", j, c, int(t_ms * MS), 0, 0, 0, f, *bits)


def test_processing_overhead_cases():
    assert metrics.processing_overhead([rec(1, 10, 1.0)]) == pytest.approx(10.0)
    assert metrics.processing_overhead([rec(0, 5), rec(1, 10, 1.0)]) == pytest.approx(15.0)
    assert math.isinf(metrics.processing_overhead([rec(0, 5)]))


def test_capacity_cases():
    assert metrics.capacity([rec(1, 10, 1.0)], math.inf) == pytest.approx(100.0)
    assert metrics.capacity([rec(1, 50, 1.0)], 20 * MS) == pytest.approx(50.0)
    assert metrics.capacity([rec(1, 10, 1.0), rec(1, 20, 1.0)], math.inf) == pytest.approx(75.0)
    assert metrics.capacity([rec(0, 10)], math.inf) == 0.0


def test_fidelity_mean_cases():
    assert metrics.fidelity_mean([rec(1, 1, 1.0), rec(1, 1, 1.0)])[0] == 1.0
    assert metrics.fidelity_mean([rec(1, 1, 0.9), rec(1, 1, 0.8)])[0] == pytest.approx(0.85)
    assert metrics.fidelity_mean([rec(1, 1, 0.25)])[0] == 0.25
    with pytest.raises(NoSuccessesError):
        metrics.fidelity_mean([rec(0, 1)])


def test_qber_cases():
    assert metrics.qber([rec(1, 1, 1.0, (0, 0)), rec(1, 1, 1.0, (1, 1))]) == 0.0
    assert metrics.qber([rec(1, 1, 0.0, (0, 1)), rec(1, 1, 0.0, (1, 0))]) == 1.0
    with pytest.raises(NoMeasurementsError):
        metrics.qber([rec(1, 1, 1.0)])


def test_capacity_overhead_relation_for_constant_successes():
    recs = [rec(1, 4, 1.0, j=j) for j in range(7)]
    assert metrics.capacity(recs, math.inf) == pytest.approx(1000.0 / metrics.processing_overhead(recs))


def test_accounting_identity_is_enforced():
    r = AttemptRecord("r", 0, 1, 1, 2, 3, 4, 0.9)
    assert r.t_total == 10
    with pytest.raises(AssertionError):
        AttemptRecord("r", 0, 1, 1, 2, 3, 4, 0.9, t_total=11)
    assert AttemptRecord("r", 0, 0, 1, 0, 0, 0, 0.7).fidelity is None


def test_summary_and_csv_format(tmp_path):
    recs = [rec(0, 5), rec(1, 10, 0.9, (0, 0)), rec(1, 20, 0.8, (0, 1))]
    s = metrics.summarize("r", recs, math.inf)
    assert (s.attempts, s.successes, s.qber) == (3, 2, 0.5)
    metrics.write_summary(tmp_path / "s.csv", [s])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(metrics.SUMMARY_COLUMNS)
    assert lines[1].startswith("r,17.5,75,0.85,")
    assert metrics.fmt(1 / 3) == "0.333333333333"
    assert metrics.fmt(math.inf) == "inf" and metrics.fmt(None) == ""
