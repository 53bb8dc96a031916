"""Command-line layer: manifests, ensemble runs, sweeps, subcommands.

Reproducibility contract: the same manifest must yield byte-identical member
histories, including across the process-parallel path.
"""

import csv
from dataclasses import replace

import numpy as np
import pytest

from adabasis.cli import (
    ExperimentConfig,
    build_arch,
    build_problem,
    main,
    run,
    sweep,
)
from adabasis.network import load_params
from adabasis.optimize import quadratic_toy, toy_loss


def tiny_config(tmp_path, **kw):
    base = dict(command="regress", problem="u2", n_points=60, width=8, depth=1,
                iters=3, lr=0.01, out=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestManifest:
    def test_default_roundtrip(self):
        cfg = ExperimentConfig()
        assert ExperimentConfig.from_manifest(cfg.to_manifest()) == cfg

    def test_nondefault_roundtrip(self):
        cfg = ExperimentConfig(command="pinn", problem="pinn-linear", lr=0.0005,
                               rank_tol=1e-12, alpha=0.5, conservative=True,
                               kind="resnet", activation="tanh", width=64,
                               depth=4, ensemble=16, out="runs/x y")
        back = ExperimentConfig.from_manifest(cfg.to_manifest())
        assert back == cfg
        assert back.lr == 0.0005 and back.rank_tol == 1e-12

    def test_comments_and_blanks_ignored(self):
        text = ExperimentConfig().to_manifest()
        text = "# header\n\n" + text.replace('problem = "u2"',
                                            'problem = "u1"  # target')
        assert ExperimentConfig.from_manifest(text).problem == "u1"

    def test_unknown_key_rejected(self):
        text = ExperimentConfig().to_manifest() + "momentum = 0.9\n"
        with pytest.raises(ValueError, match="unknown key"):
            ExperimentConfig.from_manifest(text)

    def test_missing_key_rejected(self):
        lines = [l for l in ExperimentConfig().to_manifest().splitlines()
                 if not l.startswith("width")]
        with pytest.raises(ValueError, match="missing"):
            ExperimentConfig.from_manifest("\n".join(lines))

    def test_duplicate_key_rejected(self):
        text = ExperimentConfig().to_manifest() + "width = 16\n"
        with pytest.raises(ValueError, match="duplicate"):
            ExperimentConfig.from_manifest(text)

    def test_type_mismatches_rejected(self):
        base = ExperimentConfig().to_manifest()
        for bad in ("width = 3.5", "width = true", 'width = "8"',
                    "conservative = 1", 'lr = "fast"', "problem = u2",
                    "lr = 1e", "width"):
            text = "\n".join(bad if l.split(" =")[0] == bad.split(" ")[0] else l
                             for l in base.splitlines())
            with pytest.raises(ValueError):
                ExperimentConfig.from_manifest(text)

    def test_values_still_validated(self):
        text = ExperimentConfig().to_manifest().replace('kind = "plain"',
                                                        'kind = "cnn"')
        with pytest.raises(ValueError, match="kind"):
            ExperimentConfig.from_manifest(text)

    def test_config_field_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(opt="newton")
        with pytest.raises(ValueError):
            ExperimentConfig(lr=0.0)
        with pytest.raises(ValueError):
            ExperimentConfig(ensemble=0)
        with pytest.raises(ValueError):
            ExperimentConfig(sweep="seed")


class TestBuildProblem:
    def test_regression_targets(self):
        cfg = ExperimentConfig(problem="u1", n_points=80)
        prob = build_problem(cfg)
        assert prob.name == "u1" and prob.terms[0].npoints == 80

    def test_legendre_family(self):
        prob = build_problem(ExperimentConfig(problem="legendre:4"))
        assert prob.n_out == 4

    def test_pinn_variants(self):
        cfg = ExperimentConfig(problem="pinn-linear", alpha=0.5, width=16)
        prob = build_problem(cfg)
        assert prob.name == "pinn-linear"
        assert prob.terms[0].weight == pytest.approx(0.25)

    def test_unknown_problem(self):
        with pytest.raises(ValueError):
            build_problem(ExperimentConfig(problem="u3"))

    def test_arch_follows_problem(self):
        cfg = ExperimentConfig(problem="pinn-const", kind="resnet", width=8, depth=2)
        arch = build_arch(cfg, build_problem(cfg))
        assert arch.input_dim == 2 and arch.n_out == 1 and arch.kind == "resnet"


class TestRun:
    def test_outputs_and_manifest(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, ensemble=3)
        recs = run(cfg)
        out = tmp_path / "out"
        assert len(recs) == 3
        for i in range(3):
            assert (out / f"member_{i:02d}.csv").exists()
        parsed = ExperimentConfig.from_manifest((out / "manifest.txt").read_text())
        assert parsed == cfg
        assert "median_final_loss" in capsys.readouterr().out

    def test_member_csv_excludes_wall_clock(self, tmp_path):
        run(tiny_config(tmp_path))
        rows = read_rows(tmp_path / "out" / "member_00.csv")
        assert rows[0] == ["iter", "loss_total", "loss_fit", "rms_error"]
        assert len(rows) == 5

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_a = tiny_config(tmp_path, ensemble=2, out=str(tmp_path / "a"))
        cfg_b = replace(cfg_a, out=str(tmp_path / "b"))
        run(cfg_a)
        run(cfg_b)
        for name in ("member_00.csv", "member_01.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        cfg_s = tiny_config(tmp_path, ensemble=2, jobs=1, out=str(tmp_path / "s"))
        cfg_p = replace(cfg_s, jobs=2, out=str(tmp_path / "p"))
        run(cfg_s)
        run(cfg_p)
        assert (tmp_path / "s" / "member_00.csv").read_bytes() == \
               (tmp_path / "p" / "member_00.csv").read_bytes()
        assert (tmp_path / "s" / "member_01.csv").read_bytes() == \
               (tmp_path / "p" / "member_01.csv").read_bytes()

    def test_members_differ_from_each_other(self, tmp_path):
        run(tiny_config(tmp_path, ensemble=2))
        a = read_rows(tmp_path / "out" / "member_00.csv")
        b = read_rows(tmp_path / "out" / "member_01.csv")
        assert a[1][1] != b[1][1]

    def test_summary_statistics(self, tmp_path):
        cfg = tiny_config(tmp_path, ensemble=3, iters=2)
        recs = run(cfg)
        rows = read_rows(tmp_path / "out" / "summary.csv")
        assert rows[0] == ["iter", "mean_log10_loss", "std_log10_loss",
                           "n_members", "n_diverged"]
        assert len(rows) == 4
        logs = np.log10([r.loss_total[2] for r in recs])
        assert float(rows[3][1]) == pytest.approx(logs.mean(), rel=1e-12)
        assert rows[3][3] == "3" and rows[3][4] == "0"

    def test_save_params_checkpoints(self, tmp_path):
        cfg = tiny_config(tmp_path, save_params=True)
        run(cfg)
        params, arch = load_params(tmp_path / "out" / "member_00.ckpt")
        assert arch.width == 8 and params.linear.shape == (8, 1)


class TestSweep:
    def test_width_sweep(self, tmp_path):
        cfg = tiny_config(tmp_path, sweep="width", sweep_values="4,8",
                          out=str(tmp_path / "sw"))
        rows = sweep(cfg)
        assert [r["value"] for r in rows] == [4, 8]
        assert (tmp_path / "sw" / "width_4" / "member_00.csv").exists()
        assert (tmp_path / "sw" / "width_8" / "summary.csv").exists()
        table = read_rows(tmp_path / "sw" / "sweep.csv")
        assert table[0][:2] == ["axis", "value"]
        assert len(table) == 3
        sub = ExperimentConfig.from_manifest(
            (tmp_path / "sw" / "width_4" / "manifest.txt").read_text())
        assert sub.width == 4 and sub.sweep == ""

    def test_empty_values_rejected(self, tmp_path):
        cfg = tiny_config(tmp_path, sweep="depth", sweep_values=",")
        with pytest.raises(ValueError):
            sweep(cfg)


class TestMain:
    def test_toy_csvs_match_library(self, tmp_path, capsys):
        out = tmp_path / "toy"
        assert main(["toy2d", "--out", str(out), "--iters", "4",
                     "--lr", "0.1", "--start=-4,1"]) == 0
        for mode in ("gd", "lsgd"):
            rows = read_rows(out / f"toy_{mode}.csv")
            assert rows[0] == ["iter", "x", "y", "loss"]
            traj = quadratic_toy((-4.0, 1.0), 0.1, 4, mode)
            got = np.array([[float(v) for v in r[1:3]] for r in rows[1:]])
            assert np.array_equal(got, traj)
            assert float(rows[1][3]) == toy_loss(traj[0])

    def test_regress_subcommand(self, tmp_path, capsys):
        rc = main(["regress", "--problem", "u1", "--npoints", "50",
                   "--width", "6", "--depth", "1", "--iters", "2",
                   "--out", str(tmp_path / "r")])
        assert rc == 0
        cfg = ExperimentConfig.from_manifest((tmp_path / "r" / "manifest.txt").read_text())
        assert cfg.problem == "u1" and cfg.width == 6 and cfg.command == "regress"

    def test_manifest_plus_flag_override(self, tmp_path):
        base = tiny_config(tmp_path, width=4)
        cfg_file = tmp_path / "exp.txt"
        cfg_file.write_text(base.to_manifest())
        rc = main(["regress", "--config", str(cfg_file), "--width", "6",
                   "--out", str(tmp_path / "o")])
        assert rc == 0
        cfg = ExperimentConfig.from_manifest((tmp_path / "o" / "manifest.txt").read_text())
        assert cfg.width == 6
        assert cfg.n_points == 60

    def test_invalid_value_exits_2(self, tmp_path, capsys):
        rc = main(["regress", "--lr", "-1", "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_diagnose_collapse(self, tmp_path, capsys):
        rc = main(["diagnose", "--diag", "collapse", "--problem", "u2",
                   "--width", "4", "--depth", "1", "--init", "box",
                   "--out", str(tmp_path / "d")])
        assert rc == 0
        rows = read_rows(tmp_path / "d" / "collapse.csv")
        assert rows[0] == ["score", "collapsed"]
        assert float(rows[1][0]) > 0.5 and rows[1][1] == "false"

    def test_diagnose_eig_profile(self, tmp_path, capsys):
        rc = main(["diagnose", "--diag", "eig-profile", "--problem", "u2",
                   "--width", "4", "--depth", "3", "--samples", "200",
                   "--out", str(tmp_path / "e")])
        assert rc == 0
        rows = read_rows(tmp_path / "e" / "eig_profile.csv")
        assert rows[0][0] == "stage" and len(rows) == 5

    def test_diagnose_cutplanes_rejects_deep(self, tmp_path, capsys):
        rc = main(["diagnose", "--diag", "cutplanes", "--problem", "u2",
                   "--width", "4", "--depth", "2", "--out", str(tmp_path / "c")])
        assert rc == 2

    def test_bench_kernels(self, tmp_path, capsys):
        rc = main(["bench", "--kernels", "--widths", "4", "--depths", "2",
                   "--npoints", "64", "--out", str(tmp_path / "b")])
        assert rc == 0
        rows = read_rows(tmp_path / "b" / "bench_kernels.csv")
        assert "reference_ms" in rows[0]
        assert len(rows) == 2

    def test_bench_trainers(self, tmp_path, capsys):
        rc = main(["bench", "--widths", "4", "--depths", "1", "--iters", "2",
                   "--out", str(tmp_path / "t")])
        assert rc == 0
        rows = read_rows(tmp_path / "t" / "bench_timing.csv")
        assert set(rows[0]) >= {"width", "depth", "ratio"}
