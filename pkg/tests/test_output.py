import json
import math
import os
import stat

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pekarlab.output import CsvWriter, dumps_json, format_number, write_json_atomic, write_text_atomic


@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_round_trip(x):
    assert float(format_number(x)) == x


def test_number_formats():
    assert format_number(0.1) == "0.10000000000000001"
    assert format_number(np.float64(1.0) / 3) == "0.33333333333333331"
    assert format_number(7) == "7" and format_number(np.int64(-3)) == "-3"
    assert format_number(True) == "true" and format_number(np.bool_(False)) == "false"
    assert format_number(math.nan) == "NaN"
    assert format_number(-math.inf) == "-Infinity"


def test_json_text_is_parseable_and_ordered():
    obj = {"b": 0.1, "a": [1.0, 2, np.float64(0.5)], "nested": [{"x": np.arange(2.0)}], "s": "é", "none": None,
           "empty": [], "nan": math.nan}
    text = dumps_json(obj)
    back = json.loads(text)
    assert list(back) == list(obj)
    assert back["b"] == 0.1 and back["a"] == [1.0, 2, 0.5] and back["nested"] == [{"x": [0.0, 1.0]}]
    assert math.isnan(back["nan"])
    assert '"a": [1, 2, 0.5]' in text
    with pytest.raises(TypeError):
        dumps_json({"x": object()})


def test_atomic_write_replaces_and_respects_umask(tmp_path):
    p = tmp_path / "sub" / "out.json"
    write_json_atomic(p, {"x": 1.5})
    write_json_atomic(p, {"x": 2.5})
    assert json.loads(p.read_text()) == {"x": 2.5}
    mask = os.umask(0)
    os.umask(mask)
    assert stat.S_IMODE(p.stat().st_mode) == 0o666 & ~mask
    assert [q.name for q in p.parent.iterdir()] == ["out.json"]


def test_failed_write_leaves_no_file(tmp_path):
    p = tmp_path / "out.txt"
    with pytest.raises(TypeError):
        write_text_atomic(p, None)
    assert list(tmp_path.iterdir()) == []


def test_csv_writer_streams_then_renames(tmp_path):
    p = tmp_path / "t.csv"
    with CsvWriter(p, ["U", "energy", "status"]) as w:
        w.write([0.0, -0.1, "ok"])
        w.write({"U": 0.5, "energy": 1 / 3, "status": "failed"})
        assert not p.exists()
        hidden = [q for q in tmp_path.iterdir()]
        assert len(hidden) == 1 and hidden[0].name.startswith(".t.csv.")
        with pytest.raises(ValueError):
            w.write([1.0])
    assert p.read_text() == "U,energy,status\n0,-0.10000000000000001,ok\n0.5,0.33333333333333331,failed\n"


def test_csv_writer_discards_on_error(tmp_path):
    p = tmp_path / "t.csv"
    with pytest.raises(RuntimeError):
        with CsvWriter(p, ["a"]) as w:
            w.write([1])
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
