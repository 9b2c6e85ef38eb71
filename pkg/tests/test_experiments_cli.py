import numpy as np
import pytest

import agos.mgp
from agos.cli import build_parser, run
from agos.config import TrainConfig, tiny_config
from agos.experiments import (
    ALPHA_GRID, GRAIN_GRID, KINDS, gradcheck, read_report, relative_error, run_experiment, variants,
)
from agos.mil import STRATEGIES, read_matrix_csv
from agos.tensor import _result


def micro_config(**kw):
    base = dict(precision="single", epochs=1, runs=2, batch_size=8, lr0=1e-2, agos_init_std=0.1,
                samples_per_class=4, object_size_min=3, object_size_max=5, distractors_min=0,
                distractors_max=1, train_ratios=(0.5,))
    base.update(kw)
    return tiny_config(**base)


def test_variant_grids():
    cfg = TrainConfig()
    assert [n for n, _ in variants("sweep-grains", cfg)] == [f"T={t}" for t in range(6)]
    assert GRAIN_GRID == (0, 1, 2, 3, 4, 5)
    assert [c.alpha for _, c in variants("sweep-alpha", cfg)] == [5e-2, 5e-3, 5e-4, 5e-5]
    assert ALPHA_GRID == (5e-2, 5e-3, 5e-4, 5e-5)
    ddc = {n: (c.dilated, c.differential) for n, c in variants("ddc-variants", cfg)}
    assert ddc == {"C": (False, False), "DD#C": (False, True), "D#DC": (True, False), "DDC": (True, True)}
    ab = dict(variants("ablate", cfg))
    assert ab["backbone"].variant == "backbone" and ab["full"].enable_sealig
    with pytest.raises(ValueError):
        variants("nope", cfg)


@pytest.mark.parametrize("kind", ["ablate", "ddc-variants", "sweep-alpha", "fusion-compare"])
def test_experiment_reports(tmp_path, kind):
    cfg = micro_config(train_ratios=(0.5, 0.25))
    rows = read_report(run_experiment(kind, cfg, tmp_path))
    expected = len(variants(kind, cfg)) if kind != "fusion-compare" else len(STRATEGIES) + 1
    assert len(rows) == expected
    for row in rows:
        for r in ("0.5", "0.25"):
            assert 0.0 <= row[f"oa_mean@{r}"] <= 1.0 and row[f"oa_std@{r}"] >= 0.0
        assert row["runtime_s"] >= 0.0
    if kind == "fusion-compare":
        assert [r["variant"] for r in rows] == [*STRATEGIES, "agos"]


def test_covariance_experiment_writes_matrices(tmp_path):
    run_experiment("covariance", micro_config(), tmp_path)
    files = sorted(tmp_path.glob("covariance_*.csv"))
    assert len(files) == len(STRATEGIES) + 1
    for f in files:
        m = read_matrix_csv(f)
        assert m.shape == (3, 3)
        np.testing.assert_array_equal(m, m.T)
        assert np.linalg.eigvalsh(m).min() >= -1e-10


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        run_experiment("nope", micro_config(), tmp_path)
    assert set(KINDS) >= {"ablate", "ddc-variants", "fusion-compare", "sweep-grains", "sweep-alpha"}


# ---------------------------------------------------------------- gradcheck

def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([0.0, 4.0]), np.array([0.0, 3.0])) == 0.25
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_gradcheck_passes_on_tiny_model():
    report = gradcheck()
    assert report.passed and report.exit_code == 0 and report.max_error < 1e-5
    groups = {n for n, _, _ in report.rows}
    assert {"backbone.block0.w", "mgp.base.w", "mgp.dilated2.b", "mbmir.branch2.w"} <= groups
    assert "PASS" in report.format()


def test_gradcheck_catches_a_wrong_backward(monkeypatch):
    def bad_abs_diff(a, b):
        d = a.data - b.data
        # backward drops the sign, so every difference map routes gradient the wrong way half the time
        return _result("abs_diff", np.abs(d), (a, b), lambda g: (g, -g))

    monkeypatch.setattr(agos.mgp, "abs_diff", bad_abs_diff)
    report = gradcheck()
    assert not report.passed and report.exit_code == 2
    assert "FAIL" in report.format()


# ---------------------------------------------------------------------- CLI

def test_cli_gradcheck_exit_codes(capsys, monkeypatch):
    assert run(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out

    def bad_abs_diff(a, b):
        return _result("abs_diff", np.abs(a.data - b.data), (a, b), lambda g: (g, -g))

    monkeypatch.setattr(agos.mgp, "abs_diff", bad_abs_diff)
    assert run(["gradcheck"]) == 2


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["no-such-command"])
    assert exc.value.code == 1
    assert run(["gradcheck", "--set", "train.unknown=3"]) == 1
    assert run(["gradcheck", "--set", "nokeyvalue"]) == 1


def test_cli_io_errors(tmp_path, capsys):
    assert run(["eval", "--checkpoint", str(tmp_path / "missing")]) == 3
    bad = tmp_path / "data" / "a"
    bad.mkdir(parents=True)
    (bad / "x.pgm").write_bytes(b"P5\n4 4\n255\n")
    assert run(["train", "--data", str(tmp_path / "data"), "--out-dir", str(tmp_path / "o")]) == 3


def test_cli_train_eval_synth_heatmaps(tmp_path, capsys):
    conf = tmp_path / "micro.txt"
    micro_config(runs=1, epochs=2).save(conf)
    out = tmp_path / "run"
    assert run(["train", "--config", str(conf), "--out-dir", str(out)]) == 0
    trained = capsys.readouterr().out
    assert (out / "final" / "config.txt").exists() and (out / "metrics.csv").exists()
    assert run(["eval", "--checkpoint", str(out / "final")]) == 0
    oa_eval = capsys.readouterr().out.split()[1]
    assert trained.split()[2] == oa_eval
    synth = tmp_path / "synth"
    assert run(["synth", "--config", str(conf), "--out-dir", str(synth)]) == 0
    assert (synth / "weak_labels.agt").exists() and (synth / "manifest.csv").exists()
    assert len(list(synth.glob("*/*.ppm"))) == 12
    heat = tmp_path / "heat"
    assert run(["export-heatmaps", "--checkpoint", str(out / "final"), "--data", str(synth),
                "--out-dir", str(heat), "--limit", "2"]) == 0
    assert len(list(heat.glob("*.pgm"))) == 2 * 3  # two samples, grains 0..2


def test_cli_experiment_subcommand(tmp_path, capsys):
    conf = tmp_path / "micro.txt"
    micro_config().save(conf)
    assert run(["sweep-alpha", "--config", str(conf), "--out-dir", str(tmp_path)]) == 0
    assert len(read_report(tmp_path / "sweep-alpha.csv")) == 4
    assert capsys.readouterr().out.startswith("variant,")


def test_parser_has_every_subcommand():
    sub = build_parser()._subparsers._group_actions[0].choices
    for name in ("train", "eval", "gradcheck", "synth", "export-heatmaps", *KINDS):
        assert name in sub
