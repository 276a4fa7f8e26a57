import contextlib
import io
import json
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix import cli  # noqa: E402
from boltzmix.errors import MajorantViolation  # noqa: E402
from boltzmix.reporting import CheckResult  # noqa: E402
from boltzmix.suites import SuiteOutcome  # noqa: E402
from tests.support import small_document  # noqa: E402


def _quiet(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), err.getvalue()


class _TempConfig(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.config = self.write_config(small_document())

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, document, name="config.json"):
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return str(path)


@pytest.mark.unit
class TestCliSurface(_TempConfig):
    """Flags, exit codes and error reporting."""

    def test_validate(self):
        code, out, _ = _quiet(["validate", "--config", self.config])
        self.assertEqual(code, 0)
        summary = json.loads(out)
        self.assertEqual(summary["gamma_bar"], 2.0)
        self.assertEqual(summary["species"][0], "light")

    def test_validate_writes_nothing(self):
        out_dir = self.tmp / "out"
        _quiet(["validate", "--config", self.config, "--out", str(out_dir)])
        self.assertFalse(out_dir.exists())

    def test_bad_gamma(self):
        doc = small_document()
        doc["gamma"][0][1] = 5.0
        code, _, err = _quiet(["validate", "--config", self.write_config(doc, "bad.json")])
        self.assertEqual(code, 2)
        self.assertIn("boltzmix - error:", err)

    def test_missing_config(self):
        code, _, err = _quiet(["validate", "--config", str(self.tmp / "absent.json")])
        self.assertEqual(code, 2)
        self.assertIn("Config file not found", err)

    def test_unknown_flag(self):
        code, _, _ = _quiet(["simulate", "--frobnicate"])
        self.assertEqual(code, 2)

    def test_missing_subcommand(self):
        code, _, _ = _quiet([])
        self.assertEqual(code, 2)

    @patch("boltzmix.cli.suites.run_kinematics")
    def test_failed_check_exit_code(self, mock_run):
        mock_run.return_value = SuiteOutcome("verify-kinematics", [CheckResult.at_most("identity", 1.0, 0.5)])
        code, out, err = _quiet(["verify-kinematics", "--config", self.config, "--out", str(self.tmp / "o")])
        self.assertEqual(code, 3)
        self.assertIn("verify-kinematics: FAIL", out)
        self.assertIn("identity: observed 1, tolerance 0.5", out)
        report = json.loads((self.tmp / "o" / "kinematics_report.json").read_text())
        self.assertFalse(report["passed"])
        self.assertEqual(report["n_failed"], 1)

    @patch("boltzmix.cli.suites.run_simulation")
    def test_numerical_abort_exit_code(self, mock_run):
        mock_run.side_effect = MajorantViolation("pair (1,1): kernel exceeds its majorant")
        code, _, err = _quiet(["simulate", "--config", self.config, "--out", str(self.tmp / "o")])
        self.assertEqual(code, 4)
        self.assertIn("majorant", err)

    @patch("boltzmix.cli.suites.run_kinematics")
    def test_seed_override(self, mock_run):
        mock_run.return_value = SuiteOutcome("verify-kinematics", [CheckResult.at_most("identity", 0.0, 0.5)])
        code, _, _ = _quiet(["verify-kinematics", "--config", self.config, "--out", str(self.tmp / "o"),
                             "--seed", "11"])
        self.assertEqual(code, 0)
        self.assertEqual(mock_run.call_args[0][2], 11)
        meta = json.loads((self.tmp / "o" / "run_meta.json").read_text())
        self.assertEqual(meta["seed"], 11)
        self.assertEqual(meta["subcommand"], "verify-kinematics")
        self.assertEqual(meta["permutation"], [0, 1, 2])


@pytest.mark.integration
@pytest.mark.timeout(300)
class TestSimulateCommand(_TempConfig):
    """End-to-end particle runs through the CLI."""

    def _simulate(self, out_name):
        out_dir = self.tmp / out_name
        code, _, _ = _quiet(["simulate", "--config", self.config, "--out", str(out_dir), "--seed", "7"])
        self.assertIn(code, (0, 3))
        return out_dir

    def test_reproducible_moments(self):
        a = self._simulate("a")
        b = self._simulate("b")
        self.assertEqual((a / "moments.csv").read_bytes(), (b / "moments.csv").read_bytes())

    def test_manifest_lists_outputs(self):
        out_dir = self._simulate("run")
        meta = json.loads((out_dir / "run_meta.json").read_text())
        for name in ("moments.csv", "conservation.json", "simulate_report.json", "run_meta.json"):
            self.assertIn(name, meta["files"])
            self.assertTrue((out_dir / name).exists())
        self.assertIsNotNone(meta["finished_at"])

    def test_conservation_report(self):
        out_dir = self._simulate("run")
        cons = json.loads((out_dir / "conservation.json").read_text())
        self.assertTrue(cons["species_mass_exact"])
        self.assertLess(cons["max_relative_m2_drift"], 1e-8)


@pytest.mark.integration
@pytest.mark.timeout(1200)
class TestVerifyAllCommand(_TempConfig):
    """The full pipeline on the desk-scale mixture, suites unmocked."""

    def test_passes_end_to_end(self):
        out_dir = self.tmp / "all"
        code, out, _ = _quiet(["verify-all", "--config", self.config, "--out", str(out_dir)])
        self.assertEqual(code, 0, out)
        meta = json.loads((out_dir / "run_meta.json").read_text())
        for name in ("averaging_report.json", "trajectory_report.json", "moments.csv"):
            self.assertIn(name, meta["files"])
        report = json.loads((out_dir / "moments_ode.json").read_text())
        self.assertTrue(report["passed"])
        # no order in the config or on the command line: k* is used
        self.assertEqual(report["k"], report["constants"]["k_star"])
        self.assertGreaterEqual(report["k"], report["constants"]["k_bar_star"])


if __name__ == "__main__":
    unittest.main()
