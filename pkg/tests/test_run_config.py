"""Tests for run-config parsing and validation."""

import sys

import numpy as np
import pytest

sys.path.insert(0, "src")


class TestParseRunConfig:
    def test_empty_mapping_gives_defaults(self):
        from run_config import parse_run_config
        cfg = parse_run_config({})
        assert cfg.grid.N == 64
        assert cfg.levels == [2]
        assert cfg.family.kind == "linear"
        np.testing.assert_allclose(cfg.family.sigma(), [0.0, 1.0])

    def test_none_is_empty(self):
        from run_config import parse_run_config
        assert parse_run_config(None).seed == 0

    def test_top_level_must_be_mapping(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="mapping"):
            parse_run_config([1, 2])

    def test_unknown_key_rejected(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="grid.resolution"):
            parse_run_config({"grid": {"resolution": 32}})

    @pytest.mark.parametrize("N", [0, 2, 48, 100])
    def test_grid_must_be_power_of_two(self, N):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="power of two"):
            parse_run_config({"grid": {"N": N}})

    def test_levels_must_be_positive(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="levels"):
            parse_run_config({"levels": [2, 0]})

    def test_schema_version_checked(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="schema_version"):
            parse_run_config({"schema_version": 7})

    def test_loop_needs_three_corners(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="loops"):
            parse_run_config({"loops": [{"name": "l", "corners": [[0, 1], [0.1, 1]]}]})

    def test_complex_pairs(self):
        from run_config import parse_run_config
        cfg = parse_run_config({
            "family": {"Z": [[[0.3, 1.2]]]},
            "directions": [{"name": "d", "components": [[0.5, 0.0], [0.0, -0.5]]}],
        })
        assert cfg.family.z_matrix()[0, 0] == 0.3 + 1.2j
        np.testing.assert_allclose(cfg.directions[0].vector(), [0.5, -0.5j])

    def test_perturbed_sigma_uses_t(self):
        from run_config import parse_run_config
        cfg = parse_run_config({"family": {"kind": "perturbed", "t": 0.02,
                                           "f0_modes": [{"freq": [1, 0], "coeff": [0.02, 0]}]}})
        np.testing.assert_allclose(cfg.family.sigma(), [0.0, 1.0, 0.02])
        assert cfg.family.modes() == [([1, 0], 0.02 + 0j)]

    def test_observable_polynomial(self):
        from run_config import parse_run_config
        cfg = parse_run_config({})
        f = cfg.asymptotic.f.polynomial()
        assert f.descriptor == "cos2pi x"
        assert f.terms == (((1, 0), 1.0, 0.0),)


class TestOverrides:
    def test_tolerance_scale(self):
        from run_config import parse_run_config
        cfg = parse_run_config({}).with_overrides(tol_scale=10.0)
        assert cfg.tolerances.spectral == pytest.approx(1e-7)
        assert cfg.tolerances.gate == pytest.approx(1e-6)
        assert cfg.tolerances.fd_step == pytest.approx(1e-3)

    def test_non_positive_scale(self):
        from errors import ConfigInvalid
        from run_config import parse_run_config
        with pytest.raises(ConfigInvalid, match="tol-scale"):
            parse_run_config({}).with_overrides(tol_scale=0.0)

    def test_seed_and_out_dir(self):
        from run_config import parse_run_config
        cfg = parse_run_config({}).with_overrides(seed=5, out_dir="elsewhere")
        assert cfg.seed == 5
        assert cfg.out_dir == "elsewhere"

    def test_models_are_frozen(self):
        from pydantic import ValidationError

        from run_config import parse_run_config
        cfg = parse_run_config({})
        with pytest.raises(ValidationError):
            cfg.seed = 3


class TestCharts:
    def test_linear_chart_carries_fd_settings(self):
        from run_config import parse_run_config
        cfg = parse_run_config({"grid": {"N": 16}, "tolerances": {"fd_step": 1e-4}})
        chart = cfg.chart()
        assert chart.domain.N == 16
        assert chart.fd_step == pytest.approx(1e-4)

    def test_chart_at_other_resolution(self):
        from run_config import parse_run_config
        assert parse_run_config({"grid": {"N": 16}}).chart(32).domain.N == 32

    def test_perturbed_chart(self):
        from run_config import parse_run_config
        cfg = parse_run_config({"grid": {"N": 16}, "family": {
            "kind": "perturbed", "f0_modes": [{"freq": [1, 0], "coeff": [0.02, 0.0]}]}})
        chart = cfg.chart()
        assert chart.dimension == 3
        assert not chart.holomorphic


class TestLoadRunConfig:
    def test_packaged_default(self):
        from run_config import load_run_config
        cfg = load_run_config()
        assert [d.name for d in cfg.directions] == ["d_dZ", "d_dZbar"]
        assert cfg.paths[0].steps == 200
        first, second = cfg.paths
        assert first.waypoints[0] == second.waypoints[0]
        assert first.waypoints[-1] == second.waypoints[-1]
        assert cfg.asymptotic.max_slope == pytest.approx(-1.7)

    def test_packaged_perturbed_run(self):
        import os

        from run_config import DEFAULT_RUN_PATH, load_run_config
        path = os.path.join(os.path.dirname(DEFAULT_RUN_PATH), "perturbed_run.yaml")
        cfg = load_run_config(path)
        assert cfg.family.kind == "perturbed"
        assert cfg.loops[0].steps_per_side == 10
        assert cfg.levels == [2]
        assert cfg.tolerances.finite_difference == pytest.approx(1e-6)
        assert cfg.tolerances.drift == pytest.approx(1e-4)

    def test_missing_file(self, tmp_path):
        from run_config import load_run_config
        with pytest.raises(FileNotFoundError):
            load_run_config(str(tmp_path / "absent.yaml"))

    def test_invalid_yaml(self, tmp_path):
        import yaml

        from run_config import load_run_config
        path = tmp_path / "bad.yaml"
        path.write_text("grid: [unclosed\n")
        with pytest.raises(yaml.YAMLError):
            load_run_config(str(path))

    def test_schema_error_from_file(self, tmp_path):
        from errors import ConfigInvalid
        from run_config import load_run_config
        path = tmp_path / "run.yaml"
        path.write_text("grid:\n  N: 30\n")
        with pytest.raises(ConfigInvalid, match="grid.N"):
            load_run_config(str(path))
