import json

import pytest

from dptrack.cli import EXIT_ABORT, EXIT_DATA, EXIT_OK, main
from dptrack.evaluation import SyntheticSpec, make_synthetic_sequence, read_boxes, write_boxes


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    make_synthetic_sequence(SyntheticSpec(n_frames=8), seed=5).save(d)
    return d


def test_make_synthetic(tmp_path):
    out = tmp_path / "s"
    assert main(["make-synthetic", "--out", str(out), "--n-frames", "4", "--occlude", "1:3"]) == EXIT_OK
    assert len(list(out.glob("*.png"))) == 4
    assert len(read_boxes(out / "groundtruth.txt")) == 4


def test_track_writes_one_box_per_frame(seq_dir, tmp_path):
    out = tmp_path / "out.txt"
    diag = tmp_path / "diag.json"
    dump = tmp_path / "dbg"
    code = main(
        ["track", "--frames", str(seq_dir), "--gt", str(seq_dir / "groundtruth.txt"), "--out", str(out),
         "--diagnostics", str(diag), "--dump-debug", str(dump)]
    )
    assert code == EXIT_OK
    boxes = read_boxes(out)
    assert len(boxes) == 8
    assert boxes[0] == read_boxes(seq_dir / "groundtruth.txt")[0]
    rows = json.loads(diag.read_text())
    assert len(rows) == 7 and len(rows[0]["part_weights"]) == 4
    assert any(p.name.endswith("_mask.pgm") for p in dump.iterdir())


def test_single_frame_sequence(tmp_path):
    d = tmp_path / "one"
    make_synthetic_sequence(SyntheticSpec(n_frames=1)).save(d)
    out = tmp_path / "o.txt"
    assert main(["track", "--frames", str(d), "--gt", str(d / "groundtruth.txt"), "--out", str(out)]) == EXIT_OK
    assert len(read_boxes(out)) == 1


def test_track_without_init_is_usage_error(seq_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["track", "--frames", str(seq_dir), "--out", str(tmp_path / "o.txt")])
    assert info.value.code == 2


def test_bad_init_box_is_usage_error(seq_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["track", "--frames", str(seq_dir), "--init", "1,2,3", "--out", str(tmp_path / "o.txt")])
    assert info.value.code == 2


def test_missing_frames_dir_is_data_error(tmp_path):
    code = main(["track", "--frames", str(tmp_path / "nope"), "--init", "0,0,20,20", "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA


def test_degenerate_init_is_data_error(seq_dir, tmp_path):
    code = main(["track", "--frames", str(seq_dir), "--init", "0,0,4,4", "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA


def test_eval_perfect_and_shifted(seq_dir, tmp_path, capsys):
    gt = read_boxes(seq_dir / "groundtruth.txt")
    write_boxes(tmp_path / "same.txt", gt)
    assert main(["eval", "--gt", str(seq_dir / "groundtruth.txt"), "--pred", str(tmp_path / "same.txt")]) == EXIT_OK
    assert "average_overlap=1.0000" in capsys.readouterr().out
    shifted = [(x + w / 2, y, w, h) for x, y, w, h in gt]
    write_boxes(tmp_path / "half.txt", shifted)
    report = tmp_path / "r.json"
    main(["eval", "--gt", str(seq_dir / "groundtruth.txt"), "--pred", str(tmp_path / "half.txt"), "--out", str(report)])
    ao = json.loads(report.read_text())["summary"]["average_overlap"]
    assert ao == pytest.approx(1 / 3, abs=1e-3)


def test_eval_length_mismatch_is_data_error(seq_dir, tmp_path):
    write_boxes(tmp_path / "short.txt", read_boxes(seq_dir / "groundtruth.txt")[:3])
    code = main(["eval", "--gt", str(seq_dir / "groundtruth.txt"), "--pred", str(tmp_path / "short.txt")])
    assert code == EXIT_DATA


def test_eval_reset_protocol(seq_dir, capsys):
    code = main(["eval", "--gt", str(seq_dir / "groundtruth.txt"), "--frames", str(seq_dir), "--protocol", "reset"])
    assert code == EXIT_OK
    assert "failures=0" in capsys.readouterr().out


def test_bench_springs_is_deterministic(tmp_path):
    args = ["bench-springs", "--sizes", "4,6", "--trials", "3", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a.tsv"), "--trace-dir", str(tmp_path / "tr")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.tsv")]) == EXIT_OK
    a = (tmp_path / "a.tsv").read_text().splitlines()
    b = (tmp_path / "b.tsv").read_text().splitlines()
    # the time column varies; everything else must match
    strip = lambda rows: [r.split("\t")[:4] + r.split("\t")[5:] for r in rows]
    assert strip(a) == strip(b)
    assert len(a) == 5
    assert (tmp_path / "tr" / "trace_ida_6.csv").exists()


def test_solver_failure_aborts_and_keeps_prefix(seq_dir, tmp_path, monkeypatch):
    import dptrack.tracker as trk
    from dptrack.springs import SolverError

    real = trk.track_frame
    calls = {"n": 0}

    def flaky(state, image, debug=False):
        calls["n"] += 1
        if calls["n"] == 3:
            raise SolverError("forced")
        return real(state, image, debug)

    monkeypatch.setattr(trk, "track_frame", flaky)
    out = tmp_path / "o.txt"
    code = main(["track", "--frames", str(seq_dir), "--gt", str(seq_dir / "groundtruth.txt"), "--out", str(out)])
    assert code == EXIT_ABORT
    # init box plus the two frames tracked before the abort
    assert len(read_boxes(out)) == 3
