"""Unit tests for mmes/tools/io.py"""
import json

import numpy as np
import pytest
from PIL import Image

from mmes.tools.io import (
    TRACE_HEADER,
    aggregate_reports,
    append_report,
    load_image,
    load_mask,
    load_mask_csv,
    load_signal_csv,
    load_tensor,
    make_report,
    read_trace_csv,
    save_image,
    save_mask_csv,
    save_mask_image,
    save_signal_csv,
    save_tensor,
    write_trace_csv,
)
from mmes.tools.solver import TraceRecord
from mmes.utils import DataFormatError


class TestImages:
    """Tests for 8-bit image reading and writing"""

    def test_round_trip_quantization(self, tmp_path, scene):
        """Saving and loading changes values by at most half a gray level"""
        path = save_image(scene, tmp_path / "scene.png")
        assert np.max(np.abs(load_image(path) - scene)) <= 1 / 510 + 1e-12

    def test_black_and_white_exact(self, tmp_path):
        """0 and 1 survive exactly"""
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(load_image(save_image(x, tmp_path / "bw.png")), x)

    def test_clamps(self, tmp_path):
        """Out-of-range values are clamped before quantizing"""
        x = np.array([[-0.5, 1.5]])
        np.testing.assert_array_equal(load_image(save_image(x, tmp_path / "c.png")), [[0.0, 1.0]])

    def test_color_shape(self, tmp_path, color_scene):
        """RGB files load as (H, W, 3)"""
        assert load_image(save_image(color_scene, tmp_path / "rgb.png")).shape == (16, 16, 3)

    def test_sixteen_bit_rejected(self, tmp_path):
        """16-bit images are not supported"""
        path = tmp_path / "deep.png"
        Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(path)
        with pytest.raises(DataFormatError):
            load_image(path)

    def test_unreadable(self, tmp_path):
        """Missing or corrupt files raise DataFormatError"""
        with pytest.raises(DataFormatError):
            load_image(tmp_path / "missing.png")
        bad = tmp_path / "bad.png"
        bad.write_text("not an image")
        with pytest.raises(DataFormatError):
            load_image(bad)

    def test_npy_tensor(self, tmp_path, rng):
        """`.npy` files keep full precision for N-way tensors"""
        x = rng.random((4, 5, 6))
        np.testing.assert_array_equal(load_tensor(save_tensor(x, tmp_path / "vol.npy")), x)

    def test_mask_image(self, tmp_path):
        """Mask images threshold at mid-gray"""
        mask = np.array([[True, False], [False, True]])
        np.testing.assert_array_equal(load_mask(save_mask_image(mask, tmp_path / "m.png")), mask)


class TestCsv:
    """Tests for signal and mask CSV files"""

    def test_signal_round_trip(self, tmp_path, rng):
        """Signals are written with repr and read back exactly"""
        x = rng.standard_normal(20)
        path = save_signal_csv(x, tmp_path / "x.csv")
        assert path.read_text().splitlines()[0] == "value"
        np.testing.assert_array_equal(load_signal_csv(path), x)

    def test_signal_without_header(self, tmp_path):
        """A numeric first line is data"""
        path = tmp_path / "raw.csv"
        path.write_text("0.5\n-1.25\n\n2\n")
        np.testing.assert_array_equal(load_signal_csv(path), [0.5, -1.25, 2.0])

    def test_empty_signal(self, tmp_path):
        """A header with no samples is rejected"""
        path = tmp_path / "empty.csv"
        path.write_text("value\n")
        with pytest.raises(DataFormatError):
            load_signal_csv(path)

    def test_mask_round_trip(self, tmp_path):
        """Masks are stored as 0/1 lines"""
        mask = np.array([True, False, True, True])
        path = save_mask_csv(mask, tmp_path / "mask.csv")
        np.testing.assert_array_equal(load_mask_csv(path), mask)
        np.testing.assert_array_equal(load_mask(path), mask)

    def test_mask_values(self, tmp_path):
        """Mask entries other than 0 and 1 are rejected"""
        path = tmp_path / "bad.csv"
        path.write_text("observed\n1\n2\n")
        with pytest.raises(DataFormatError):
            load_mask_csv(path)


class TestTraceAndReports:
    """Tests for trace files and JSON-line reports"""

    def test_trace_file(self, tmp_path):
        """Header and repr-formatted values; missing PSNR is empty"""
        trace = [TraceRecord(0, 0.1, 2.5, 5.0, 0.01, None), TraceRecord(1, 1 / 3, 2.0, 5.0, 0.01, 21.5)]
        path = write_trace_csv(trace, tmp_path / "trace.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(TRACE_HEADER)
        assert lines[1] == "0,0.1,2.5,5.0,0.01,"
        rows = read_trace_csv(path)
        assert rows[1]["l_rec"] == 1 / 3
        assert rows[0]["psnr"] is None and rows[1]["psnr"] == 21.5

    def test_trace_header_checked(self, tmp_path):
        """Files with another header are rejected"""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataFormatError):
            read_trace_csv(path)

    def test_append_and_aggregate(self, tmp_path):
        """Reports are one JSON object per line"""
        path = tmp_path / "report.jsonl"
        append_report(make_report("complete", "a.png", 30.1, 0.9, 100, 1.23456), path)
        append_report(make_report("deblur", "b.png", None, None, 5, 0.5, r=16), path)
        assert len(path.read_text().splitlines()) == 2
        records = aggregate_reports([path])
        assert records[0]["seconds"] == 1.235
        assert records[1]["r"] == 16 and records[1]["psnr_db"] is None

    def test_report_needs_keys(self, tmp_path):
        """Records without the standard keys are refused"""
        with pytest.raises(DataFormatError):
            append_report({"task": "complete"}, tmp_path / "r.jsonl")

    def test_malformed_line(self, tmp_path):
        """Malformed lines are reported with file and line number"""
        path = tmp_path / "broken.jsonl"
        path.write_text(json.dumps(make_report("complete", "a.png", 1.0, 1.0, 1, 1.0)) + "\n{oops\n")
        with pytest.raises(DataFormatError, match="broken.jsonl:2"):
            aggregate_reports([path])
