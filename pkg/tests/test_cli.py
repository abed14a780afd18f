"""Experiment orchestration tests: config validation, determinism, outputs.

Oracle strategy:
- Config-contract tests assert the exact failure mode (exception type, the
  offending field named in the message, process exit code).
- The det-law quadratics run uses an algebraically exact family (no ripple),
  so its residual bound 1e-13 is pure roundoff headroom.
- Determinism is byte equality of the produced CSV across worker counts —
  no tolerance.
"""

import json
import os

import numpy as np
import pytest

from tma.cli import (
    ExperimentConfig,
    SUITES,
    ingest_function_spec,
    load_config,
    main,
    run_experiment,
)
from tma.errors import ConfigInvalid, ParseError, UnknownAtom
from tma.funclass import EnsembleSpec, class_membership, default_cloud, draw_member
from tma.solver import perturbed_flow_spec


def write_json(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


class TestConfigValidation:
    def test_unknown_suite_names_field(self):
        with pytest.raises(ConfigInvalid, match="suite"):
            ExperimentConfig.from_dict({"suite": "no-such-suite", "seed": 1})

    def test_missing_suite(self):
        with pytest.raises(ConfigInvalid, match="suite"):
            ExperimentConfig.from_dict({"seed": 1})

    def test_unknown_key_names_key(self):
        with pytest.raises(ConfigInvalid, match="flux_capacitance"):
            ExperimentConfig.from_dict({"suite": "rigidity", "flux_capacitance": 3})

    def test_seed_required_for_randomized_suites(self):
        for suite in (
            "det-law", "w-psd", "q-sign",
            "evolution-identity", "heat-identity", "real-complexify",
        ):
            with pytest.raises(ConfigInvalid, match="seed"):
                ExperimentConfig.from_dict({"suite": suite})

    def test_deterministic_suites_need_no_seed(self):
        for suite in ("flow-convergence", "oscillation-decay", "rigidity"):
            cfg = ExperimentConfig.from_dict({"suite": suite})
            assert cfg.seed is None
            assert cfg.suite == suite

    def test_seed_type_and_range(self):
        with pytest.raises(ConfigInvalid, match="seed"):
            ExperimentConfig.from_dict({"suite": "q-sign", "seed": -1})
        with pytest.raises(ConfigInvalid, match="seed"):
            ExperimentConfig.from_dict({"suite": "q-sign", "seed": True})
        with pytest.raises(ConfigInvalid, match="seed"):
            ExperimentConfig.from_dict({"suite": "q-sign", "seed": "42"})

    def test_positive_tolerance_enforced(self):
        with pytest.raises(ConfigInvalid, match="tolerance"):
            ExperimentConfig.from_dict({"suite": "det-law", "seed": 1, "tolerance": 0})
        with pytest.raises(ConfigInvalid, match="tolerance"):
            ExperimentConfig.from_dict({"suite": "det-law", "seed": 1, "tolerance": -1e-10})

    def test_shapes_must_be_pairs_of_positive_ints(self):
        for bad in ([[0, 1]], [[1]], [[1, 2, 3]], [1, 2], "shapes", []):
            with pytest.raises(ConfigInvalid, match="shapes"):
                ExperimentConfig.from_dict({"suite": "det-law", "seed": 1, "shapes": bad})

    def test_ladder_must_decrease(self):
        with pytest.raises(ConfigInvalid, match="ladder"):
            ExperimentConfig.from_dict(
                {"suite": "oscillation-decay", "ladder": [0.5, 0.5, 0.25]}
            )
        with pytest.raises(ConfigInvalid, match="ladder"):
            ExperimentConfig.from_dict({"suite": "oscillation-decay", "ladder": [0.5, 0.25]})

    def test_ladder_cannot_exceed_radius(self):
        with pytest.raises(ConfigInvalid, match="ladder"):
            ExperimentConfig.from_dict(
                {"suite": "oscillation-decay", "radius": 0.25, "ladder": [0.5, 0.25, 0.125]}
            )

    def test_defaults_are_populated(self):
        cfg = ExperimentConfig.from_dict({"suite": "det-law", "seed": 0})
        assert cfg.params["shapes"] == [[1, 1], [2, 1], [1, 2], [2, 2]]
        assert cfg.params["draws"] == 100
        assert cfg.params["points"] == 20
        assert cfg.params["tolerance"] == 1e-10
        assert cfg.out == "."

    def test_overrides_replace_defaults(self):
        cfg = ExperimentConfig.from_dict(
            {"suite": "q-sign", "seed": 42, "draws": 7, "out": "results"}
        )
        assert cfg.params["draws"] == 7
        assert cfg.params["points"] == 1
        assert cfg.out == "results"

    def test_broken_json_reports_line_and_column(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"suite": "q-sign" broken')
        with pytest.raises(ConfigInvalid, match=r"line 1"):
            load_config(str(path))

    def test_cli_seed_satisfies_randomized_requirement(self, tmp_path):
        path = write_json(tmp_path, "cfg.json", {"suite": "q-sign", "draws": 2})
        with pytest.raises(ConfigInvalid, match="seed"):
            load_config(path)
        cfg = load_config(path, seed=9)
        assert cfg.seed == 9

    def test_every_registered_suite_has_defaults_matching_schema(self):
        for name, sd in SUITES.items():
            cfg = ExperimentConfig.from_dict(
                {"suite": name, **({"seed": 0} if sd.randomized else {})}
            )
            assert set(cfg.params) == set(sd.defaults)


# ---------------------------------------------------------------------------
# runs and outputs
# ---------------------------------------------------------------------------


class TestRunOutputs:
    def test_det_law_on_exact_quadratics(self, tmp_path):
        # eps 0 keeps every member an exact quadratic: the determinant law is
        # then an algebraic identity and the residual is pure roundoff
        cfg = ExperimentConfig.from_dict(
            {
                "suite": "det-law", "seed": 11, "draws": 8, "points": 5,
                "eps": 0.0, "tolerance": 1e-13, "out": str(tmp_path),
            }
        )
        result = run_experiment(cfg)
        assert result.passed
        assert result.error is None
        assert len(result.rows) == 8 * 5
        assert max(r[4] for r in result.rows) <= 1e-13

    def test_qsign_small_run_row_count_and_bound(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "q-sign", "seed": 42, "draws": 25, "out": str(tmp_path)}
        )
        result = run_experiment(cfg)
        assert result.passed
        assert len(result.rows) == 25  # one point per draw by default
        assert max(r[4] for r in result.rows) <= 1e-8
        header = open(result.csv_path).readline().rstrip("\n")
        assert header == "draw,shape_k,shape_l,point,q_lambda_max,g1,g2,g3,g4"

    def test_wpsd_rows_are_strictly_positive(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "w-psd", "seed": 3, "draws": 8, "points": 4, "out": str(tmp_path)}
        )
        result = run_experiment(cfg)
        assert result.passed
        assert min(r[4] for r in result.rows) > 0.0

    def test_draws_split_across_shapes_earliest_gets_remainder(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "suite": "det-law", "seed": 5, "draws": 6, "points": 1,
                "shapes": [[1, 1], [2, 1], [1, 2], [2, 2]], "out": str(tmp_path),
            }
        )
        result = run_experiment(cfg)
        by_shape = {}
        for r in result.rows:
            by_shape[(r[1], r[2])] = by_shape.get((r[1], r[2]), 0) + 1
        assert by_shape == {(1, 1): 2, (2, 1): 2, (1, 2): 1, (2, 2): 1}

    def test_csv_bytes_identical_across_worker_counts(self, tmp_path):
        body = {"suite": "det-law", "seed": 2, "draws": 6, "points": 3}
        out1, out3 = str(tmp_path / "w1"), str(tmp_path / "w3")
        r1 = run_experiment(
            ExperimentConfig.from_dict({**body, "out": out1}), workers=1
        )
        r3 = run_experiment(
            ExperimentConfig.from_dict({**body, "out": out3}), workers=3
        )
        assert r1.passed and r3.passed
        assert open(r1.csv_path, "rb").read() == open(r3.csv_path, "rb").read()

    def test_rerun_is_byte_identical(self, tmp_path):
        body = {"suite": "q-sign", "seed": 42, "draws": 10}
        outs = [str(tmp_path / d) for d in ("a", "b")]
        blobs = []
        for out in outs:
            r = run_experiment(ExperimentConfig.from_dict({**body, "out": out}))
            blobs.append(open(r.csv_path, "rb").read())
        assert blobs[0] == blobs[1]

    def test_csv_floats_carry_17_significant_digits(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "w-psd", "seed": 1, "draws": 2, "points": 2, "out": str(tmp_path)}
        )
        result = run_experiment(cfg)
        lines = open(result.csv_path).read().splitlines()
        for line, row in zip(lines[1:], result.rows):
            assert float(line.split(",")[4]) == row[4]  # format round-trips exactly

    def test_manifest_contents(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "rigidity", "nodes": 17, "out": str(tmp_path)}
        )
        result = run_experiment(cfg, workers=1)
        manifest = json.load(open(result.manifest_path))
        assert manifest["suite"] == "rigidity"
        assert manifest["passed"] is True
        assert manifest["config"]["params"]["nodes"] == 17
        assert manifest["workers"] == 1
        assert manifest["rows"] == 3
        assert manifest["csv"] == "rigidity.csv"
        import tma

        assert manifest["versions"]["package"] == tma.__version__
        assert manifest["versions"]["numpy"] == np.__version__
        names = {a["name"] for a in manifest["assertions"]}
        assert names == {"det_deviation", "entry_variation"}

    def test_manifest_written_on_assertion_failure(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "suite": "det-law", "seed": 1, "draws": 2, "points": 1,
                "tolerance": 1e-300, "out": str(tmp_path),
            }
        )
        result = run_experiment(cfg)
        assert not result.passed
        assert result.error is None  # failed assertions are data, not errors
        manifest = json.load(open(result.manifest_path))
        assert manifest["passed"] is False
        assert os.path.exists(result.csv_path)  # rows still written

    def test_manifest_written_on_runner_crash(self, tmp_path):
        # a measurement center far outside the torus leaves no sample nodes
        cfg = ExperimentConfig.from_dict(
            {
                "suite": "oscillation-decay", "nodes": 16, "steps": 5,
                "center": [50.0, 50.0], "out": str(tmp_path),
            }
        )
        result = run_experiment(cfg)
        assert not result.passed
        assert result.error is not None and "EmptyCylinder" in result.error
        manifest = json.load(open(result.manifest_path))
        assert manifest["passed"] is False
        assert "EmptyCylinder" in manifest["error"]
        assert manifest["csv"] is None

    def test_flow_convergence_suite_passes(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "flow-convergence", "out": str(tmp_path)}
        )
        result = run_experiment(cfg)
        assert result.passed
        values = dict(result.rows)
        assert values["per_step_error_real"] <= 1e-10
        assert values["per_step_error_complex11"] <= 1e-10
        assert values["time_order_rk4"] >= 3.5
        assert 1.8 <= values["spatial_order"] <= 2.2

    def test_oscillation_suite_passes_and_reuses_ladder_contract(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"suite": "oscillation-decay", "out": str(tmp_path)}
        )
        result = run_experiment(cfg)
        assert result.passed
        lines = open(result.csv_path).read().splitlines()
        assert lines[0] == "cylinder_id,rho,quantity,osc,alpha_fit,fit_residual"
        # 5 real channels (time speed + 4 directions) + total, 3 rungs each
        assert len(lines) - 1 == 6 * 3


# ---------------------------------------------------------------------------
# function-spec ingestion
# ---------------------------------------------------------------------------


class TestIngestion:
    def test_roundtrip_is_byte_stable(self, tmp_path):
        spec = perturbed_flow_spec(1.0, 1.0, 0.05)
        path = tmp_path / "fn.json"
        path.write_text(spec.canonical_json())
        back = ingest_function_spec(str(path))
        assert back.canonical_json() == path.read_text()

    def test_unknown_atom_is_reported_with_field_path(self, tmp_path):
        body = json.loads(perturbed_flow_spec(1.0, 1.0, 0.05).canonical_json())
        body["terms"][1]["term"]["fn"] = "tan"
        path = write_json(tmp_path, "fn.json", body)
        with pytest.raises(UnknownAtom, match="tan"):
            ingest_function_spec(path)

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "fn.json"
        path.write_text('{"kind": "sum",,}')
        with pytest.raises(ParseError, match=r"fn\.json:1:"):
            ingest_function_spec(path.as_posix())

    def test_missing_file_is_a_parse_error(self, tmp_path):
        with pytest.raises(ParseError):
            ingest_function_spec(str(tmp_path / "absent.json"))

    def test_ensemble_members_reingest_and_pass_membership(self, tmp_path):
        es = EnsembleSpec(k=1, l=1, eps=0.1, seed=5)
        member = draw_member(es, 0)
        path = tmp_path / "member.json"
        path.write_text(member.canonical_json())
        back = ingest_function_spec(str(path))
        assert back.canonical_json() == member.canonical_json()
        lam, big = es.guaranteed_bounds()
        cloud = default_cloud(back.nvars, halfwidth=1.0, grid_per_axis=5, n_quasi=50)
        assert class_membership(back, cloud, lam, big).member


# ---------------------------------------------------------------------------
# command-line surface
# ---------------------------------------------------------------------------


class TestCommandLine:
    def test_run_exit_zero_on_pass(self, tmp_path):
        cfg = write_json(
            tmp_path, "cfg.json", {"suite": "det-law", "draws": 4, "points": 2, "seed": 1}
        )
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "det-law.csv").exists()
        assert (tmp_path / "det-law-manifest.json").exists()

    def test_run_exit_one_on_assertion_failure(self, tmp_path):
        cfg = write_json(
            tmp_path, "cfg.json",
            {"suite": "det-law", "draws": 2, "points": 1, "seed": 1, "tolerance": 1e-300},
        )
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_run_exit_two_on_unknown_suite(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "cfg.json", {"suite": "no-such-suite", "seed": 1})
        assert main(["run", "--config", cfg]) == 2
        assert "suite" in capsys.readouterr().err

    def test_run_exit_two_on_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.json")]) == 2

    def test_validate_subcommand(self, tmp_path, capsys):
        good = write_json(tmp_path, "good.json", {"suite": "rigidity"})
        assert main(["validate", "--config", good]) == 0
        assert "rigidity" in capsys.readouterr().out
        bad = write_json(tmp_path, "bad.json", {"suite": "rigidity", "nodes": -1})
        assert main(["validate", "--config", bad]) == 2
        assert "nodes" in capsys.readouterr().err

    def test_validate_does_not_accept_missing_seed(self, tmp_path):
        cfg = write_json(tmp_path, "cfg.json", {"suite": "q-sign", "draws": 2})
        assert main(["validate", "--config", cfg]) == 2

    def test_spec_check_prints_canonical_json(self, tmp_path, capsys):
        spec = perturbed_flow_spec(1.0, 2.0, 0.1)
        path = tmp_path / "fn.json"
        path.write_text(json.dumps(json.loads(spec.canonical_json()), indent=3))
        assert main(["spec", "--check", str(path)]) == 0
        assert capsys.readouterr().out.strip() == spec.canonical_json()

    def test_spec_check_rejects_unknown_atom(self, tmp_path, capsys):
        body = json.loads(perturbed_flow_spec(1.0, 1.0, 0.05).canonical_json())
        body["terms"][1]["term"]["fn"] = "tan"
        path = write_json(tmp_path, "fn.json", body)
        assert main(["spec", "--check", path]) == 2
        assert "tan" in capsys.readouterr().err

    def test_workers_flag_must_be_positive(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "cfg.json", {"suite": "det-law", "seed": 1})
        assert main(["run", "--config", cfg, "--workers", "0"]) == 2
        assert "workers" in capsys.readouterr().err

    def test_workers_env_default(self, tmp_path, monkeypatch):
        cfg = write_json(
            tmp_path, "cfg.json", {"suite": "det-law", "draws": 4, "points": 1, "seed": 1}
        )
        monkeypatch.setenv("TMA_WORKERS", "2")
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "env")]) == 0
        monkeypatch.setenv("TMA_WORKERS", "zero")
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "env2")]) == 2

    def test_cli_workers_output_matches_serial(self, tmp_path):
        cfg = write_json(
            tmp_path, "cfg.json", {"suite": "q-sign", "draws": 6, "seed": 42}
        )
        out1, out2 = str(tmp_path / "s"), str(tmp_path / "p")
        assert main(["run", "--config", cfg, "--out", out1, "--workers", "1"]) == 0
        assert main(["run", "--config", cfg, "--out", out2, "--workers", "2"]) == 0
        a = open(os.path.join(out1, "q-sign.csv"), "rb").read()
        b = open(os.path.join(out2, "q-sign.csv"), "rb").read()
        assert a == b
