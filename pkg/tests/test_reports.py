import json
import os

import numpy as np
import pytest

from nnreg.errors import InvalidInputError
from nnreg.reports import (aggregate_rows, config_hash, format_float,
                           format_table, read_csv, read_json, write_csv,
                           write_json)
from nnreg.rng import substream


def test_format_float_is_lossless():
    g = substream(0, 50)
    for _ in range(500):
        x = float(g.standard_normal() * 10.0 ** int(g.integers(-300, 300)))
        assert float(format_float(x)) == x
    assert format_float(0.1) == "0.10000000000000001"
    for bad in (np.inf, -np.inf, np.nan):
        with pytest.raises(InvalidInputError):
            format_float(bad)


def test_write_json_accepts_numpy_and_round_trips(tmp_path):
    doc = {
        "a": np.float64(0.1),
        "b": np.int64(3),
        "c": np.array([1.5, 2.5]),
        "d": {"nested": [True, False, None]},
        "e": "text",
    }
    path = os.path.join(tmp_path, "x.json")
    write_json(path, doc)
    back = read_json(path)
    assert back["a"] == 0.1 and back["b"] == 3
    assert back["c"] == [1.5, 2.5]
    assert back["d"]["nested"] == [True, False, None]
    # the file itself is plain JSON
    with open(path) as fh:
        assert json.load(fh)["e"] == "text"


def test_write_json_deterministic_bytes(tmp_path):
    doc = {"z": 1, "a": [0.25, {"k": 2}]}
    p1, p2 = (os.path.join(tmp_path, f) for f in ("a.json", "b.json"))
    write_json(p1, doc)
    write_json(p2, doc)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_config_hash_frozen_and_order_free():
    h = config_hash({"b": 2, "a": "x"})
    assert h == config_hash({"a": "x", "b": 2})
    # frozen: sha256 of "a=x\nb=2"
    import hashlib
    assert h == hashlib.sha256(b"a=x\nb=2").hexdigest()
    assert config_hash({"t": 0.1}) == config_hash({"t": 0.1})
    assert config_hash({"t": 0.1}) != config_hash({"t": 0.2})


def test_csv_round_trip_with_provenance(tmp_path):
    rows = [{"i": 0, "v": 0.1, "ok": True, "tag": "a"},
            {"i": 1, "v": -2.5, "ok": False, "tag": "b"}]
    path = os.path.join(tmp_path, "r.csv")
    write_csv(path, rows, ["i", "v", "ok", "tag"],
              provenance={"seed": 7, "note": "x"})
    back, prov = read_csv(path)
    assert prov == {"seed": "7", "note": "x"}
    assert back[0]["v"] == "0.10000000000000001"
    assert back[1]["i"] == "1" and back[1]["ok"] == "0"
    raw = open(path, "rb").read()
    assert b"\r" not in raw                     # unix newlines everywhere
    assert raw.startswith(b"# seed=7\n# note=x\n")


def test_format_table_six_digits():
    txt = format_table([{"a": 1 / 3, "b": True}], ["a", "b"])
    lines = txt.splitlines()
    assert lines[0].split() == ["a", "b"]
    assert "0.333333" in lines[1] and "yes" in lines[1]


def test_aggregate_rows_matches_numpy():
    g = substream(1, 51)
    vals = g.standard_normal(37)
    rows = [{"v": float(v), "w": float(2 * v)} for v in vals]
    agg = aggregate_rows(rows, ["v", "w"], quantiles=(0.5,))
    assert agg["v"]["mean"] == pytest.approx(np.mean(vals))
    assert agg["v"]["se"] == pytest.approx(np.std(vals, ddof=1) / np.sqrt(37))
    assert agg["v"]["q0.5"] == pytest.approx(np.quantile(vals, 0.5))
    assert agg["w"]["mean"] == pytest.approx(2 * np.mean(vals))
    assert agg["v"]["n"] == 37

    single = aggregate_rows([{"v": 4.0}], ["v"])
    assert single["v"]["mean"] == 4.0 and single["v"]["se"] == 0.0
