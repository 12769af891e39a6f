"""Tests for the qlab command-line runner."""

import json
import logging
import os
import sys
import threading
from unittest.mock import patch

import pytest

sys.path.insert(0, "src")


SMALL_RUN = {
    "grid": {"m": 1, "N": 16},
    "levels": [1],
    "directions": [
        {"name": "d_dZ", "components": [[0.5, 0.0], [0.0, -0.5]]},
        {"name": "d_dZbar", "components": [[0.5, 0.0], [0.0, 0.5]]},
    ],
}


def _read_report(out_dir, command):
    with open(os.path.join(out_dir, f"{command}-report.json"), encoding="utf-8") as f:
        return json.load(f)


# ===================================================================
# _Stats
# ===================================================================

class TestStats:
    def test_counts_failures(self):
        from qlab_cli import _Stats
        stats = _Stats()
        stats.record({"check_id": "a", "passed": True}, 0.1)
        stats.record({"check_id": "b", "passed": False}, 0.2)
        assert stats.snapshot() == {"completed": 2, "failed": 1}
        assert stats.timings == {"a": 0.1, "b": 0.2}

    def test_thread_safety(self):
        from qlab_cli import _Stats
        stats = _Stats()

        def _worker(offset):
            for i in range(100):
                stats.record({"check_id": f"{offset}.{i}", "passed": i % 2 == 0}, 0.0)

        threads = [threading.Thread(target=_worker, args=(n,)) for n in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert stats.snapshot() == {"completed": 800, "failed": 400}


# ===================================================================
# _JsonFormatter
# ===================================================================

class TestJsonFormatter:
    def test_format_produces_json(self):
        from qlab_cli import _JsonFormatter
        record = logging.LogRecord(
            name="qlab", level=logging.INFO, pathname="", lineno=0,
            msg="check %s", args=("geometry.structure",), exc_info=None,
        )
        parsed = json.loads(_JsonFormatter().format(record))
        assert parsed["message"] == "check geometry.structure"
        assert parsed["level"] == "INFO"
        assert "timestamp" in parsed

    def test_format_includes_exception(self):
        from qlab_cli import _JsonFormatter
        try:
            raise ValueError("boom")
        except ValueError:
            record = logging.LogRecord(
                name="qlab", level=logging.ERROR, pathname="", lineno=0,
                msg="failed", args=(), exc_info=sys.exc_info(),
            )
        parsed = json.loads(_JsonFormatter().format(record))
        assert "ValueError" in parsed["exception"]


# ===================================================================
# Checks
# ===================================================================

class TestChecks:
    def test_anchor_uses_longest_prefix(self):
        from qlab_cli import ANCHORS, _anchor
        assert _anchor("hitchin.residual.d_dZ.k2") == ANCHORS["hitchin.residual"]
        assert _anchor("holonomy.contrast.square.k1") == ANCHORS["holonomy.contrast"]

    def test_unknown_check_has_no_anchor(self):
        from qlab_cli import _anchor
        with pytest.raises(KeyError):
            _anchor("mystery.check")

    def test_verdict(self):
        from qlab_cli import CheckOutcome
        assert CheckOutcome(1e-9, 1e-8).verdict()
        assert not CheckOutcome(1e-7, 1e-8).verdict()
        assert not CheckOutcome(None, 1e-8).verdict()
        assert CheckOutcome(5.0, None, passed=True).verdict()

    def test_domain_error_becomes_failed_record(self):
        from errors import TruncationInsufficient
        from qlab_cli import Check, _run_check, _Stats

        def run():
            raise TruncationInsufficient("needs a finer grid")

        stats = _Stats()
        _run_check(Check("quantum.constant.k9", "Q_k(1) = i Id", {"k": 9}, run), stats)
        (record,) = stats.records
        assert not record["passed"]
        assert record["error"] == "TruncationInsufficient: needs a finer grid"
        assert record["residual"] is None

    def test_passing_check_record(self):
        from qlab_cli import Check, CheckOutcome, _run_check, _Stats
        stats = _Stats()
        _run_check(Check("geometry.structure", "J^2", {}, lambda: CheckOutcome(0.0, 1e-12)), stats)
        assert stats.records[0]["passed"]
        assert stats.snapshot()["failed"] == 0

    def test_prequantum_commutator_defect(self, domain32):
        from prequantum_bundle import random_section
        from qlab_cli import prequantum_commutator_defect
        from quantum_spaces import TrigPolynomial
        from tensor_geometry import standard_symplectic
        s = random_section(domain32, 2, seed=1)
        defect = prequantum_commutator_defect(
            TrigPolynomial.cosine((1, 0)), TrigPolynomial.sine((0, 1)), s,
            standard_symplectic(domain32),
        )
        assert defect < 1e-8

    def test_verify_builds_every_group(self):
        from qlab_cli import RunContext, verify_checks
        from run_config import parse_run_config
        ctx = RunContext(parse_run_config(SMALL_RUN), "unused")
        ids = [c.check_id for c in verify_checks(ctx)]
        assert len(ids) == len(set(ids))
        for prefix in ("geometry.", "bundle.curvature.k1", "quantum.dimension.k1",
                       "family.weakly_restricted.d_dZ", "hitchin.residual.d_dZbar.k1"):
            assert any(i.startswith(prefix) for i in ids), prefix

    def test_unexpected_exception_becomes_failed_record(self):
        from qlab_cli import Check, _run_check, _Stats

        def run():
            raise RuntimeError("solver blew up")

        stats = _Stats()
        _run_check(Check("geometry.structure", "J^2", {}, run), stats)
        (record,) = stats.records
        assert not record["passed"]
        assert record["error"] == "RuntimeError: solver blew up"
        assert stats.snapshot() == {"completed": 1, "failed": 1}

    def test_contrast_uses_tolerance_floor(self):
        from qlab_cli import contrast_outcome
        outcome = contrast_outcome(5e-7, 1e-12, 1e-8, {"area": 0.01})
        assert outcome.data["reference"] == 1e-8
        assert outcome.data["ratio"] == pytest.approx(50.0)
        assert outcome.verdict()

    def test_contrast_at_noise_level_fails(self):
        from qlab_cli import contrast_outcome
        outcome = contrast_outcome(2e-9, 1e-12, 1e-8, {})
        assert not outcome.verdict()
        assert outcome.data["rigid"] == 1e-12

    def test_contrast_against_real_baseline(self):
        from qlab_cli import contrast_outcome
        assert not contrast_outcome(5e-6, 1e-6, 1e-8, {}).verdict()
        assert contrast_outcome(2e-5, 1e-6, 1e-8, {}).verdict()


# ===================================================================
# run_command
# ===================================================================

class TestRunCommand:
    def test_quantum_checks_pass(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        out = str(tmp_path / "out")
        code = run_command("verify", parse_run_config(SMALL_RUN), out, "quantum.*")
        assert code == EXIT_OK
        report = _read_report(out, "verify")
        assert report["summary"]["total"] == 3
        assert report["summary"]["failed"] == 0
        assert {r["check_id"] for r in report["checks"]} == {
            "quantum.dimension.k1", "quantum.projection.k1", "quantum.constant.k1",
        }
        assert all(r["anchor"] for r in report["checks"])

    def test_obstruction_on_rigid_family(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        out = str(tmp_path / "out")
        assert run_command("obstruction", parse_run_config(SMALL_RUN), out) == EXIT_OK
        ids = [r["check_id"] for r in _read_report(out, "obstruction")["checks"]]
        assert ids == ["hodge.gate.d_dZ", "hodge.gate.d_dZbar", "hodge.linearity.d_dZ+d_dZbar"]

    def test_failed_check_sets_exit_code(self, tmp_path):
        from qlab_cli import EXIT_CHECK_FAILED, run_command
        from run_config import parse_run_config
        # the theta series at k = 40 does not fit on a 16-point grid
        run = parse_run_config({**SMALL_RUN, "levels": [40]})
        out = str(tmp_path / "out")
        assert run_command("verify", run, out, "quantum.constant.*") == EXIT_CHECK_FAILED
        report = _read_report(out, "verify")
        assert report["summary"]["failed_checks"] == ["quantum.constant.k40"]
        assert report["checks"][0]["error"].startswith("TruncationInsufficient")

    def test_handler_returns_report(self, tmp_path):
        from qlab_cli import cmd_obstruction
        from run_config import parse_run_config
        report = cmd_obstruction(parse_run_config(SMALL_RUN), str(tmp_path), "hodge.gate.*")
        assert report["command"] == "obstruction"
        assert report["summary"]["passed"] == 2
        assert all(r["residual"] <= 1e-10 for r in report["checks"])

    def test_no_directions_means_no_direction_checks(self):
        from qlab_cli import RunContext, verify_checks
        from run_config import parse_run_config
        ctx = RunContext(parse_run_config({**SMALL_RUN, "directions": []}), "unused")
        prefixes = {c.check_id.split(".")[0] for c in verify_checks(ctx)}
        assert prefixes == {"geometry", "bundle", "quantum"}

    def test_empty_filter_writes_empty_report(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        out = str(tmp_path / "out")
        assert run_command("verify", parse_run_config(SMALL_RUN), out, "nothing.*") == EXIT_OK
        assert _read_report(out, "verify")["summary"]["total"] == 0

    def test_naturality_skipped_for_odd_level(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        run = parse_run_config({**SMALL_RUN, "grid": {"m": 1, "N": 32}, "levels": [3]})
        out = str(tmp_path / "out")
        assert run_command("verify", run, out, "hitchin.naturality.*") == EXIT_OK
        report = _read_report(out, "verify")
        assert report["summary"]["total"] == 2
        for record in report["checks"]:
            assert record["passed"]
            assert record["data"]["skipped"] == "grid N=32 has no 1/3 translations"

    def test_scalar_holonomy_contrast_is_skipped(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        run = parse_run_config({
            "grid": {"m": 1, "N": 16},
            "levels": [1],
            "family": {"kind": "perturbed",
                       "f0_modes": [{"freq": [1, 0], "coeff": [0.02, 0.0]}]},
            "loops": [{"name": "square", "steps_per_side": 2, "corners": [
                [0.0, 1.0, 0.0], [0.1, 1.0, 0.0], [0.1, 1.0, 0.04], [0.0, 1.0, 0.04]]}],
        })
        out = str(tmp_path / "out")
        assert run_command("holonomy", run, out) == EXIT_OK
        (record,) = _read_report(out, "holonomy")["checks"]
        assert record["check_id"] == "holonomy.contrast.square.k1"
        assert record["data"]["skipped"] == "dim H_k = 1"

    def test_grid_refinement(self, tmp_path):
        from qlab_cli import EXIT_OK, run_command
        from run_config import parse_run_config
        run = parse_run_config({**SMALL_RUN, "convergence": {"grids": [32, 64]}})
        out = str(tmp_path / "out")
        assert run_command("convergence", run, out, "convergence.hitchin.*") == EXIT_OK
        (record,) = _read_report(out, "convergence")["checks"]
        assert record["check_id"] == "convergence.hitchin.d_dZ.k1"
        assert record["data"]["grids"] == [32, 64]
        assert all(r <= 1e-8 for r in record["data"]["residuals"])
        assert len(record["data"]["ratios"]) == 1


# ===================================================================
# main
# ===================================================================

class TestMain:
    def test_missing_config_exits_2(self, tmp_path):
        from qlab_cli import EXIT_CONFIG, main
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--config", str(tmp_path / "absent.yaml")])
        assert exc.value.code == EXIT_CONFIG

    def test_invalid_config_exits_2(self, tmp_path):
        from qlab_cli import EXIT_CONFIG, main
        path = tmp_path / "run.yaml"
        path.write_text("levels: [0]\n")
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--config", str(path)])
        assert exc.value.code == EXIT_CONFIG

    def test_bad_tol_scale_exits_2(self):
        from qlab_cli import EXIT_CONFIG, main
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--tol-scale", "-1"])
        assert exc.value.code == EXIT_CONFIG

    @patch("qlab_cli.run_command")
    def test_passes_overrides(self, mock_run, tmp_path):
        from qlab_cli import main
        mock_run.return_value = 1
        with pytest.raises(SystemExit) as exc:
            main(["holonomy", "--out", str(tmp_path), "--seed", "7", "--tol-scale", "2",
                  "--check", "holonomy.*"])
        assert exc.value.code == 1
        command, run, out_dir, check_filter = mock_run.call_args.args
        assert command == "holonomy"
        assert run.seed == 7
        assert run.tolerances.spectral == pytest.approx(2e-8)
        assert out_dir == str(tmp_path)
        assert check_filter == "holonomy.*"

    @patch("qlab_cli.run_command", return_value=0)
    def test_explicit_zero_seed_is_kept(self, mock_run, tmp_path):
        from config import Config
        from qlab_cli import main
        path = tmp_path / "run.yaml"
        path.write_text("seed: 0\n")
        with patch("config.config", Config(default_seed=5)):
            with pytest.raises(SystemExit):
                main(["verify", "--config", str(path), "--out", str(tmp_path)])
        assert mock_run.call_args.args[1].seed == 0

    @patch("qlab_cli.run_command", return_value=0)
    def test_absent_seed_uses_environment_default(self, mock_run, tmp_path):
        from config import Config
        from qlab_cli import main
        path = tmp_path / "run.yaml"
        path.write_text("levels: [1]\n")
        with patch("config.config", Config(default_seed=5)):
            with pytest.raises(SystemExit):
                main(["verify", "--config", str(path), "--out", str(tmp_path)])
        assert mock_run.call_args.args[1].seed == 5

    @patch("qlab_cli.run_command", side_effect=RuntimeError("unexpected"))
    def test_internal_error_exits_3(self, _mock_run, tmp_path):
        from qlab_cli import EXIT_INTERNAL, main
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--out", str(tmp_path)])
        assert exc.value.code == EXIT_INTERNAL

    def test_unknown_command(self):
        from qlab_cli import main
        with pytest.raises(SystemExit) as exc:
            main(["simulate"])
        assert exc.value.code == 2
