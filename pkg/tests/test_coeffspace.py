import numpy as np
import pytest

from listenhead.coeffspace import (
    BETA_DIM,
    POSE_DIM,
    CoefficientFormatError,
    CoefficientFrame,
    CoefficientSequence,
    frame_delta,
    load_coefficient_sequence,
    save_coefficient_sequence,
)


def make_seq(T=5, seed=0, fps=30.0, n_extra=0):
    rng = np.random.default_rng(seed)
    beta = rng.normal(size=(T, BETA_DIM))
    pose = rng.normal(size=(T, POSE_DIM)) * 0.1
    extra = rng.normal(size=(T, n_extra)) if n_extra else None
    return CoefficientSequence(beta, pose, fps=fps, extra=extra)


def test_zero_file_loads_as_zero_frames(tmp_path):
    path = tmp_path / "zeros.csv"
    header = (
        "frame,"
        + ",".join(f"beta_{i}" for i in range(BETA_DIM))
        + ","
        + ",".join(f"pose_{i}" for i in range(POSE_DIM))
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t in range(2):
            fh.write(f"{t}," + ",".join(["0.0"] * (BETA_DIM + POSE_DIM)) + "\n")
    seq = load_coefficient_sequence(path)
    assert len(seq) == 2
    np.testing.assert_array_equal(seq.beta, 0.0)
    np.testing.assert_array_equal(seq.pose, 0.0)
    assert seq.fps == 30.0  # default when no fps comment


def test_missing_beta_column_names_it(tmp_path):
    path = tmp_path / "short.csv"
    cols = ["frame"] + [f"beta_{i}" for i in range(63)] + [f"pose_{i}" for i in range(POSE_DIM)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        fh.write("0," + ",".join(["0"] * (len(cols) - 1)) + "\n")
    with pytest.raises(CoefficientFormatError, match="beta_63"):
        load_coefficient_sequence(path)


def test_round_trip_identity(tmp_path):
    seq = make_seq(T=7, seed=3, fps=25.0, n_extra=4)
    path = tmp_path / "seq.csv"
    save_coefficient_sequence(seq, path)
    back = load_coefficient_sequence(path)
    assert len(back) == 7
    assert back.fps == 25.0
    np.testing.assert_allclose(back.beta, seq.beta, atol=1e-12)
    np.testing.assert_allclose(back.pose, seq.pose, atol=1e-12)
    np.testing.assert_allclose(back.extra, seq.extra, atol=1e-12)
    # save(load(f)) parses identical to load(f)
    path2 = tmp_path / "seq2.csv"
    save_coefficient_sequence(back, path2)
    again = load_coefficient_sequence(path2)
    np.testing.assert_array_equal(again.beta, back.beta)
    np.testing.assert_array_equal(again.pose, back.pose)


def test_extra_columns_appear_after_pose(tmp_path):
    seq = make_seq(T=2, n_extra=3)
    path = tmp_path / "extra.csv"
    save_coefficient_sequence(seq, path)
    header = [l for l in open(path) if not l.startswith("#")][0].strip().split(",")
    assert header[-3:] == ["extra_0", "extra_1", "extra_2"]
    assert header[1 + BETA_DIM + POSE_DIM] == "extra_0"


def test_empty_sequence_save_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty sequence"):
        CoefficientSequence(np.empty((0, BETA_DIM)), np.empty((0, POSE_DIM)))


def test_non_numeric_cell_reports_position(tmp_path):
    seq = make_seq(T=3)
    path = tmp_path / "bad.csv"
    save_coefficient_sequence(seq, path)
    lines = open(path).read().splitlines()
    cells = lines[3].split(",")
    cells[2] = "oops"  # row 1, beta_1
    lines[3] = ",".join(cells)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with pytest.raises(CoefficientFormatError, match=r"row 1.*beta_1.*oops"):
        load_coefficient_sequence(path)


def test_wrong_column_count_reports_row(tmp_path):
    seq = make_seq(T=3)
    path = tmp_path / "bad.csv"
    save_coefficient_sequence(seq, path)
    lines = open(path).read().splitlines()
    lines[4] = lines[4] + ",9.9"
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with pytest.raises(CoefficientFormatError, match="row 2"):
        load_coefficient_sequence(path)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_coefficient_sequence("/nonexistent/coeffs.csv")


def test_non_consecutive_frame_index_rejected(tmp_path):
    seq = make_seq(T=3)
    path = tmp_path / "bad.csv"
    save_coefficient_sequence(seq, path)
    text = open(path).read().replace("\n2,", "\n5,")
    with open(path, "w") as fh:
        fh.write(text)
    with pytest.raises(CoefficientFormatError, match="frame index"):
        load_coefficient_sequence(path)


def test_frame_validation():
    with pytest.raises(ValueError):
        CoefficientFrame(np.zeros(63), np.zeros(POSE_DIM))
    with pytest.raises(ValueError):
        CoefficientFrame(np.zeros(BETA_DIM), np.zeros(5))
    bad = np.zeros(BETA_DIM)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        CoefficientFrame(bad, np.zeros(POSE_DIM))


def test_frame_delta_constant_is_zero():
    beta = np.ones((4, BETA_DIM)) * 0.3
    pose = np.ones((4, POSE_DIM)) * -0.2
    deltas = frame_delta(CoefficientSequence(beta, pose))
    assert len(deltas) == 3
    for db, dp in deltas:
        np.testing.assert_array_equal(db, 0.0)
        np.testing.assert_array_equal(dp, 0.0)


def test_frame_delta_linear_ramp():
    c = 0.25
    t_idx = np.arange(5)[:, None]
    beta = np.tile(t_idx * c, (1, BETA_DIM))
    pose = np.zeros((5, POSE_DIM))
    for db, dp in frame_delta(CoefficientSequence(beta, pose)):
        np.testing.assert_allclose(db, c, rtol=1e-12)


def test_frame_delta_rejects_short_sequence():
    with pytest.raises(ValueError):
        frame_delta(make_seq(T=1))


def test_cumulative_deltas_reconstruct_sequence():
    seq = make_seq(T=9, seed=8)
    acc_b = seq.beta[0].copy()
    acc_p = seq.pose[0].copy()
    for t, (db, dp) in enumerate(frame_delta(seq), start=1):
        acc_b = acc_b + db
        acc_p = acc_p + dp
        np.testing.assert_allclose(acc_b, seq.beta[t], atol=1e-9)
        np.testing.assert_allclose(acc_p, seq.pose[t], atol=1e-9)


def test_from_frames_round_trip():
    seq = make_seq(T=4, n_extra=2)
    rebuilt = CoefficientSequence.from_frames(list(seq), fps=seq.fps)
    np.testing.assert_array_equal(rebuilt.beta, seq.beta)
    np.testing.assert_array_equal(rebuilt.extra, seq.extra)


def test_fps_comment_parsed(tmp_path):
    seq = make_seq(T=2, fps=24.0)
    path = tmp_path / "f.csv"
    save_coefficient_sequence(seq, path)
    assert open(path).readline().startswith("# fps=24.0")
    assert load_coefficient_sequence(path).fps == 24.0
