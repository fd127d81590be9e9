import io

import numpy as np
import pytest

from dptrack.benchmark import TABLE_COLUMNS, convergence_experiment, run_trial


def test_deterministic_under_seed():
    a = convergence_experiment([4, 6], 3, seed=9)
    b = convergence_experiment([4, 6], 3, seed=9)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.ida.final_positions, rb.ida.final_positions)
        assert ra.cgd.iterations == rb.cgd.iterations


def test_trials_independent_of_run_order():
    a = convergence_experiment([4, 8], 2, seed=1)
    b = convergence_experiment([8], 2, seed=1)
    np.testing.assert_array_equal(a.for_size(8, True)[1].ida.final_positions, b.records[1].ida.final_positions)


def test_table_rows_and_columns():
    res = convergence_experiment([4, 5], 2, seed=0)
    rows = res.table()
    assert [(r["size"], r["solver"]) for r in rows] == [(4, "IDA"), (4, "CGD"), (5, "IDA"), (5, "CGD")]
    fh = io.StringIO()
    res.write_table(fh)
    lines = fh.getvalue().splitlines()
    assert lines[0].split("\t") == list(TABLE_COLUMNS)
    assert len(lines) == 5


def test_trace_is_padded_mean():
    res = convergence_experiment([5], 4, seed=2)
    trace = res.mean_trace(5, "IDA")
    assert trace[0] == pytest.approx(np.mean([r.ida.energy_trace[0] for r in res.for_size(5)]))
    assert np.all(np.diff(trace) <= 1e-9 * trace[0])
    fh = io.StringIO()
    res.write_trace(fh, 5, "IDA")
    assert fh.getvalue().startswith("iteration,energy\n")


def test_degenerate_flag():
    rec = run_trial(4, 0, 0, degenerate_factor=0.0)
    # every positive CGD energy exceeds zero times anything
    assert rec.degenerate == (rec.cgd.final_energy > 0)


def test_rejects_zero_trials():
    with pytest.raises(ValueError):
        convergence_experiment([4], 0)
