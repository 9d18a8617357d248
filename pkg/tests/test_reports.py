import json

import numpy as np
import pytest

from nosignal import reports
from nosignal.protocol import REPORT_SCHEMA


def test_dumps_is_plain_and_deterministic():
    rep = {"schema": REPORT_SCHEMA, "kind": "test", "x": np.float64(0.5), "n": np.int64(3),
           "arr": np.array([1, 2]), "bad": float("nan"), "nested": {"inf": float("inf")}}
    text = reports.dumps(rep)
    assert text == reports.dumps(rep) and text.endswith("\n")
    back = json.loads(text)
    assert back["x"] == 0.5 and back["n"] == 3 and back["arr"] == [1, 2]
    assert back["bad"] is None and back["nested"]["inf"] is None


def test_read_report_checks_schema(tmp_path):
    p = tmp_path / "r.json"
    p.write_text('{"schema": "other/9"}')
    with pytest.raises(ValueError, match="not a"):
        reports.read_report(p)
    reports.write_report(p, {"schema": REPORT_SCHEMA, "kind": "test"})
    assert reports.read_report(p)["kind"] == "test"


def test_merge_sorted_by_name():
    a = {"schema": REPORT_SCHEMA, "kind": "counts", "rows": []}
    b = {"schema": REPORT_SCHEMA, "kind": "test"}
    m = reports.merge_reports([b, a], ["z.json", "a.json"])
    assert [r["source"] for r in m["reports"]] == ["a.json", "z.json"]


def test_correlation_curve_carries_singlet_column():
    prot = {"schema": REPORT_SCHEMA, "kind": "protocol", "steps": [{"summary": {
        "correlations": [{"W_ns": 10, "alice_deg": 0.0, "bob_deg": 22.5, "pairs": 100,
                          "E_nearest": -0.7, "std_err": 0.07, "E_binned": -0.69}]}}]}
    lines = reports.correlation_curve(prot).splitlines()
    assert lines[1] == ",10,0,22.5,-22.5,100,-0.7,0.07,-0.69,-0.707107"
