import json

import pytest

from mvlab.cli import main


def run_cli(args):
    return main(args)


class TestListPresets:
    def test_contains_documented_presets(self, capsys):
        assert run_cli(["list-presets"]) == 0
        out = capsys.readouterr().out
        assert "linear-ou" in out
        assert "kinetic-langevin" in out
        assert "'l': 2" in out

    def test_stable_output(self, capsys):
        run_cli(["list-presets"])
        first = capsys.readouterr().out
        run_cli(["list-presets"])
        second = capsys.readouterr().out
        assert first == second


class TestConfigValidation:
    def test_zero_h_rejected(self, tmp_path):
        assert run_cli(["coupling", "--h", "0", "--out", str(tmp_path)]) == 2

    def test_h_vs_grid_precondition(self, tmp_path):
        assert run_cli(["coupling", "--h", "0.1", "--t0", "0.25",
                        "--out", str(tmp_path)]) == 2

    def test_unknown_preset(self, tmp_path):
        assert run_cli(["simulate", "--preset", "nope", "--out", str(tmp_path)]) == 2

    def test_config_file_merging(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"t_final": 0.2, "n_particles": 64}))
        code = run_cli(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 0
        manifest = json.loads(next(tmp_path.glob("manifest_*.json")).read_text())
        assert manifest["config"]["t_final"] == 0.2
        assert manifest["config"]["n_particles"] == 64


@pytest.mark.parametrize("args,kind", [
    (["simulate", "--t-final", "0.3", "--n", "256"], "simulate"),
    (["gramian"], "gramian"),
    (["coupling", "--t0", "0.25", "--replicas", "500", "--n", "200"], "coupling"),
    (["bismut", "--t-grid", "0.5", "--replicas", "1000", "--n", "500"], "bismut"),
    (["harnack", "--n", "800"], "harnack"),
    (["ergodicity", "--horizon", "3", "--n", "600"], "ergodicity"),
])
def test_subcommand_artifacts(tmp_path, args, kind):
    code = run_cli(args + ["--out", str(tmp_path)])
    assert code == 0
    csvs = list(tmp_path.glob(f"{kind}_*.csv"))
    figs = list(tmp_path.glob(f"{kind}_*.png"))
    manifests = list(tmp_path.glob("manifest_*.json"))
    assert len(csvs) == 1 and len(manifests) == 1 and len(figs) == 1
    manifest = json.loads(manifests[0].read_text())
    assert all(v == "PASS" for v in manifest["checks"].values())
    assert csvs[0].name in manifest["outputs"]


def test_harnack_csv_columns(tmp_path):
    assert run_cli(["harnack", "--n", "800", "--out", str(tmp_path)]) == 0
    header = next(tmp_path.glob("harnack_*.csv")).read_text().splitlines()[0]
    assert header == "t,entropy,w2sq,w2tsq,fitted_c,path_tag"


def test_ergodicity_csv_columns(tmp_path):
    assert run_cli(["ergodicity", "--horizon", "3", "--n", "600",
                    "--out", str(tmp_path)]) == 0
    header = next(tmp_path.glob("ergodicity_*.csv")).read_text().splitlines()[0]
    assert header == "t,w2sq,entropy,fitted_rate,theoretical_rate"


def test_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["coupling", "--t0", "0.25", "--replicas", "400", "--n", "200",
            "--seed", "9", "--no-plots"]
    assert run_cli(args + ["--out", str(a)]) == 0
    assert run_cli(args + ["--out", str(b), "--workers", "4"]) == 0
    csv_a = next(a.glob("coupling_*.csv"))
    csv_b = next(b.glob("coupling_*.csv"))
    assert csv_a.name == csv_b.name  # out dir and workers are hash-excluded
    assert csv_a.read_bytes() == csv_b.read_bytes()


def test_failing_check_gives_nonzero_exit(tmp_path, monkeypatch):
    import mvlab.cli as cli

    def failing_handler(config, manifest, out_dir, plots=True):
        manifest.add_check("forced_failure", False)

    monkeypatch.setitem(cli.HANDLERS, "simulate", failing_handler)
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 1
