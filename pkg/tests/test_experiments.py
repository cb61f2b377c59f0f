import csv
from pathlib import Path

import numpy as np
import pytest

from fbm_isometry import cli, experiments
from fbm_isometry.experiments import (
    PROVENANCE,
    STUDIES,
    ConfigError,
    ExperimentConfig,
    analytic_second_moment,
    corollary_exponents,
    gaussian_abs_product_moment,
    run_study,
)
from fbm_isometry.covariance import HurstModel
from fbm_isometry.quadrature import QuadratureSpec

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).parents[1] / "configs"

SMALL_INI = """\
[study]
name = {study}
seed = 5
h_values = 0.75
eps_ladder = 0.125, 0.0625, 0.03125
integrands = constant:1; identity
n_paths = 400
n_mc = 200
lemma_samples = 1000
v_ladder = 0.25, 0.5, 1.0

[quadrature]
cells = 6

[output]
dir = {out}
"""


def small_config(tmp_path, study):
    text = SMALL_INI.format(study=study, out=tmp_path / "out")
    path = tmp_path / f"{study}.ini"
    path.write_text(text)
    return path


def read_rows(path):
    lines = Path(path).read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


class TestConfig:
    def test_shipped_configs_parse(self):
        names = set()
        for path in sorted(CONFIGS.glob("*.ini")):
            cfg = ExperimentConfig.from_ini(path)
            names.add(cfg.study)
            assert cfg.seed >= 0
        assert names == set(STUDIES)

    def test_seed_required(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[study]\nname = isometry\n")
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig.from_ini(path)
        assert ExperimentConfig.from_ini(path, seed=3).seed == 3

    @pytest.mark.parametrize(
        "kw,match",
        [
            ({"h_values": (0.5,)}, "outside"),
            ({"h_values": (1.0,)}, "outside"),
            ({"eps_ladder": (0.1, 0.2)}, "decreasing"),
            ({"eps_ladder": (0.1, 0.1)}, "decreasing"),
            ({"seed": -1}, "seed"),
            ({"d": 0}, "d must"),
            ({"v_ladder": (0.5, 0.25)}, "v_ladder"),
            ({"study": "plot"}, "unknown study"),
        ],
    )
    def test_invalid(self, kw, match):
        args = {"study": "isometry", "seed": 1} | kw
        with pytest.raises(ConfigError, match=match):
            ExperimentConfig(**args)

    def test_study_mismatch(self, tmp_path):
        path = small_config(tmp_path, "isometry")
        with pytest.raises(ConfigError, match="not"):
            ExperimentConfig.from_ini(path, study="lemma-suite")

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            ExperimentConfig.from_ini(tmp_path / "missing.ini")

    def test_bad_quadrature(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[study]\nname = isometry\nseed = 1\n[quadrature]\ngh_order = 2\n")
        with pytest.raises(ConfigError, match="gh_order"):
            ExperimentConfig.from_ini(path)

    def test_parsed_values(self, tmp_path):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, "isometry"))
        assert cfg.eps_ladder == (0.125, 0.0625, 0.03125)
        assert cfg.integrands == ("constant:1", "identity")
        assert cfg.quadrature == QuadratureSpec(cells=6)

    def test_hash_ignores_output_dir(self):
        a = ExperimentConfig(study="isometry", seed=1, output_dir="a")
        b = ExperimentConfig(study="isometry", seed=1, output_dir="b")
        c = ExperimentConfig(study="isometry", seed=2, output_dir="a")
        assert a.hash() == b.hash() != c.hash()


class TestOutputs:
    @pytest.mark.parametrize("study", STUDIES)
    def test_schema_matches_golden(self, tmp_path, study):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, study))
        run_study(cfg)
        got = (Path(cfg.output_dir) / f"{study}.csv").read_text().splitlines()[:2]
        assert got == (GOLDEN / f"{study}.header").read_text().splitlines()

    @pytest.mark.parametrize("study", ["isometry", "kernel-convergence", "lemma-suite"])
    def test_replay_is_byte_identical(self, tmp_path, study):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, study))
        run_study(cfg, out_dir=tmp_path / "a")
        run_study(cfg, out_dir=tmp_path / "b", workers=2)
        for name in (f"{study}.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rows_carry_provenance(self, tmp_path):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, "det-component"))
        run_study(cfg)
        schema, rows = read_rows(Path(cfg.output_dir) / "det-component.csv")
        assert schema == "#schema=1"
        for row in rows:
            assert row["study"] == "det-component" and row["seed"] == "5"
            assert row["config_hash"] == cfg.hash() and row["build_id"]
        assert all(k in rows[0] for k in PROVENANCE)

    def test_isometry_rows(self, tmp_path):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, "isometry"))
        rep = run_study(cfg)
        kinds = [r["kind"] for r in rep.rows]
        assert kinds.count("lhs") == 6 and kinds.count("check") == 2
        rhs = [r for r in rep.rows if r["kind"] == "rhs"]
        assert float(rhs[0]["value"]) == pytest.approx(1.0, rel=1e-4)
        assert float(rhs[1]["value"]) == pytest.approx(0.75, rel=1e-3)

    def test_summary(self, tmp_path):
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, "lemma-suite"))
        rep = run_study(cfg)
        lines = (Path(cfg.output_dir) / "summary.txt").read_text().splitlines()
        assert lines[0].startswith("build ") and cfg.hash() in lines[0]
        assert lines[1] == f"[lemma-suite] {'PASS' if rep.passed else 'FAIL'}"
        assert len(lines) == 2 + len(rep.checks)

    def test_failure_writes_diagnostic_row(self, tmp_path, monkeypatch):
        def broken(cfg, workers=1):
            raise FloatingPointError("overflow in kernel")

        monkeypatch.setitem(experiments.RUNNERS, "det-component", broken)
        cfg = ExperimentConfig.from_ini(small_config(tmp_path, "det-component"))
        rep = run_study(cfg)
        assert not rep.passed
        _, rows = read_rows(Path(cfg.output_dir) / "det-component.csv")
        assert rows == [{"study": "det-component", "seed": "5", "build_id": rows[0]["build_id"],
                         "config_hash": cfg.hash(), "error": "FloatingPointError: overflow in kernel",
                         "passed": "0"}]


class TestCli:
    def test_pass_exit_code(self, tmp_path, capsys):
        path = small_config(tmp_path, "lemma-suite")
        assert cli.main(["lemma-suite", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert "lemma-suite: PASS" in out
        assert (tmp_path / "o" / "lemma-suite.csv").exists()

    def test_fail_exit_code(self, tmp_path, monkeypatch):
        def failing(cfg, workers=1):
            rep = experiments.Report(cfg.study, ["h"])
            rep.add(False, h=0.75)
            rep.check("forced", False)
            return rep

        monkeypatch.setitem(experiments.RUNNERS, "det-component", failing)
        path = small_config(tmp_path, "det-component")
        assert cli.main(["det-component", "--config", str(path)]) == 1

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text("[study]\nname = isometry\nh_values = 0.4\nseed = 1\n")
        assert cli.main(["isometry", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_seed_flag_overrides(self, tmp_path):
        path = small_config(tmp_path, "det-component")
        assert cli.main(["det-component", "--config", str(path), "--seed", "17"]) == 0
        _, rows = read_rows(tmp_path / "out" / "det-component.csv")
        assert rows[0]["seed"] == "17"

    def test_workers_must_be_positive(self, tmp_path):
        path = small_config(tmp_path, "det-component")
        assert cli.main(["det-component", "--config", str(path), "--workers", "0"]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            cli.main(["plot"])

    def test_bound_scaling_rejects_d2(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[study]\nname = bound-scaling\nseed = 1\nd = 2\n")
        assert cli.main(["bound-scaling", "--config", str(path), "--out", str(tmp_path)]) == 2


class TestHelpers:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_analytic_values(self, d):
        m = HurstModel(0.7, d)
        assert analytic_second_moment(m, "constant:2", 1.0) == pytest.approx(4 * d)
        assert analytic_second_moment(m, "identity", 2.0) == pytest.approx(d * (d + 2) / 4 * 2 ** 2.8)
        assert analytic_second_moment(m, "sign", 1.0) == pytest.approx(d + d * (d - 1) * 2 / np.pi)
        assert np.isnan(analytic_second_moment(m, "power:0.5", 1.0))

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_gaussian_abs_product_moment(self, rng, p):
        m = HurstModel(0.7)
        s, t = 0.3, 0.8
        cov = np.array([[s**1.4, 0.5 * (s**1.4 + t**1.4 - (t - s) ** 1.4)], [0, t**1.4]])
        cov[1, 0] = cov[0, 1]
        x = rng.multivariate_normal([0, 0], cov, 400_000)
        sample = np.abs(x[:, 0] * x[:, 1]) ** p
        want = gaussian_abs_product_moment(m, s, t, p)
        assert abs(sample.mean() - want) <= 4 * sample.std() / np.sqrt(sample.size)

    def test_gaussian_abs_product_moment_p2(self):
        # E[X^2 Y^2] = vs vt + 2 R^2
        m = HurstModel(0.7)
        s, t = 0.3, 0.8
        vs, vt = s**1.4, t**1.4
        r = 0.5 * (vs + vt - (t - s) ** 1.4)
        assert gaussian_abs_product_moment(m, s, t, 2.0) == pytest.approx(vs * vt + 2 * r**2, rel=1e-12)

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    def test_corollary_exponents(self, h):
        q, p = corollary_exponents(h)
        assert 1 < q < HurstModel(h).q_max
        assert 1 / p + 1 / q == pytest.approx(1.0)
