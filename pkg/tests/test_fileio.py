"""Binary matrix records and CSV formats."""

import numpy as np
import pytest

from ssot import fileio


class TestBinaryRecords:
    def test_round_trip_single(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((5, 3))
        path = tmp_path / "a.ssotmat"
        fileio.save_matrix(path, arr)
        out = fileio.load_matrix(path)
        assert (out == arr).all()

    def test_round_trip_many(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = [rng.standard_normal((2, 7)), rng.standard_normal((1, 1)),
                  rng.standard_normal((4, 4))]
        path = tmp_path / "many.ssotmat"
        fileio.save_matrices(path, arrays)
        out = fileio.load_matrices(path)
        assert len(out) == 3
        for a, b in zip(arrays, out):
            assert (a == b).all()

    def test_header_layout(self, tmp_path):
        # 8-byte magic, then uint64 rows/cols, then column-major float64
        path = tmp_path / "h.ssotmat"
        arr = np.array([[1.0, 2.0], [3.0, 4.0]])
        fileio.save_matrix(path, arr)
        raw = path.read_bytes()
        assert raw[:8] == b"SSOTMAT1"
        assert int.from_bytes(raw[8:16], "little") == 2
        assert int.from_bytes(raw[16:24], "little") == 2
        data = np.frombuffer(raw[24:], dtype="<f8")
        np.testing.assert_array_equal(data, [1.0, 3.0, 2.0, 4.0])  # Fortran order

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ssotmat"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            fileio.load_matrices(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.ssotmat"
        good = tmp_path / "good.ssotmat"
        fileio.save_matrix(good, np.ones((3, 3)))
        path.write_bytes(good.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            fileio.load_matrices(path)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            fileio.save_matrix(tmp_path / "x.ssotmat", np.zeros(3))


class TestPointsBinary:
    def test_round_trip_with_labels(self, tmp_path):
        rng = np.random.default_rng(7)
        pts = rng.standard_normal((9, 4))
        labels = rng.integers(0, 5, 9)
        fileio.save_points_binary(tmp_path / "p.ssotmat", pts, labels)
        out_pts, out_labels = fileio.load_points_binary(tmp_path / "p.ssotmat")
        assert (out_pts == pts).all()
        assert (out_labels == labels).all()
        assert out_labels.dtype == np.int64

    def test_round_trip_without_labels(self, tmp_path):
        pts = np.array([[1.0, 2.0]])
        fileio.save_points_binary(tmp_path / "p.ssotmat", pts)
        out_pts, out_labels = fileio.load_points_binary(tmp_path / "p.ssotmat")
        assert (out_pts == pts).all()
        assert out_labels is None

    def test_non_integer_labels_rejected(self, tmp_path):
        fileio.save_matrices(
            tmp_path / "p.ssotmat", [np.zeros((2, 2)), np.array([[0.5], [1.0]])]
        )
        with pytest.raises(ValueError, match="non-integer"):
            fileio.load_points_binary(tmp_path / "p.ssotmat")


class TestPointsCsv:
    def test_round_trip_with_labels(self, tmp_path):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((10, 3))
        labels = rng.integers(0, 4, 10)
        fileio.save_points_csv(tmp_path / "p.csv", pts, labels)
        out_pts, out_labels = fileio.load_points_csv(tmp_path / "p.csv")
        assert (out_pts == pts).all()
        assert (out_labels == labels).all()

    def test_round_trip_without_labels(self, tmp_path):
        pts = np.array([[0.1, -2.5e-17], [3.0, 4.0]])
        fileio.save_points_csv(tmp_path / "p.csv", pts)
        out_pts, out_labels = fileio.load_points_csv(tmp_path / "p.csv")
        assert (out_pts == pts).all()
        assert out_labels is None

    def test_dialect(self, tmp_path):
        fileio.save_points_csv(tmp_path / "p.csv", np.array([[1.5, 2.5]]), [3])
        raw = (tmp_path / "p.csv").read_bytes()
        assert raw == b"f0,f1,label\n1.5,2.5,3\n"

    def test_empty_file_rejected(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(ValueError, match="empty"):
            fileio.load_points_csv(tmp_path / "e.csv")

    def test_header_only_rejected(self, tmp_path):
        (tmp_path / "h.csv").write_text("f0,f1\n")
        with pytest.raises(ValueError, match="no data"):
            fileio.load_points_csv(tmp_path / "h.csv")


class TestTraceCsv:
    def test_append_with_single_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        fileio.append_trace_csv(path, "sgd", [(1, 0.5, 0.01), (2, 0.6, 0.02)])
        fileio.append_trace_csv(path, "sag", [(1, 0.55, 0.03)])
        lines = path.read_text().splitlines()
        assert lines[0] == "solver,epoch,objective,seconds"
        assert len(lines) == 4
        assert lines[1].startswith("sgd,1,0.5")
        assert lines[3].startswith("sag,1,0.55")

    def test_write_csv_lf_endings(self, tmp_path):
        path = tmp_path / "m.csv"
        fileio.write_csv(path, ["a", "b"], [[1, 2], [3, 4]])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw == b"a,b\n1,2\n3,4\n"
