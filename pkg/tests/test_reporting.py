import json
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest
from freezegun import freeze_time

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix.reporting import (  # noqa: E402
    CheckResult,
    RunManifest,
    canonical_hash,
    suite_report,
    to_jsonable,
    write_csv,
    write_json,
)


@pytest.mark.unit
class TestReporting(unittest.TestCase):
    """JSON/CSV writers and provenance."""

    def test_hash_ignores_key_order(self):
        self.assertEqual(canonical_hash({"a": 1, "b": [1, 2]}), canonical_hash({"b": [1, 2], "a": 1}))
        self.assertNotEqual(canonical_hash({"a": 1}), canonical_hash({"a": 2}))

    def test_non_finite_values(self):
        data = to_jsonable({"x": float("nan"), "y": np.inf, "z": np.array([1.0, -np.inf]), "n": np.int64(3)})
        self.assertEqual(data, {"x": "nan", "y": "inf", "z": [1.0, "-inf"], "n": 3})
        json.dumps(data, allow_nan=False)

    def test_check_results(self):
        self.assertTrue(CheckResult.at_most("a", 1.0, 1.0).passed)
        self.assertFalse(CheckResult.at_least("b", 0.5, 1.0).passed)
        report = suite_report("demo", [CheckResult.at_most("a", 2.0, 1.0, k=4.0)], seed=3)
        self.assertFalse(report["passed"])
        self.assertEqual(report["checks"][0]["detail"], {"k": 4.0})
        self.assertEqual(report["seed"], 3)

    def test_csv_round_floats_exactly(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(Path(tmp) / "sub" / "t.csv", ("t", "value"), [(0.1, 1.0 / 3.0), (0.2, "mixture")])
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], "t,value")
        self.assertEqual(float(lines[1].split(",")[1]), 1.0 / 3.0)
        self.assertEqual(lines[2], "0.2,mixture")

    @freeze_time("2026-03-01 12:00:00")
    def test_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = RunManifest("abc", "simulate", 7, permutation=[1, 0])
            manifest.record(write_json(Path(tmp) / "report.json", {"ok": True}))
            manifest.write(Path(tmp))
            meta = json.loads((Path(tmp) / "run_meta.json").read_text())
        self.assertEqual(meta["started_at"], "2026-03-01T12:00:00Z")
        self.assertEqual(meta["finished_at"], "2026-03-01T12:00:00Z")
        self.assertEqual(meta["files"], ["report.json", "run_meta.json"])
        self.assertEqual(meta["seed"], 7)


if __name__ == "__main__":
    unittest.main()
