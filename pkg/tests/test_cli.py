"""Command-line surface: model tables, sweep runs with reports and figures,
golden verification, and the oracle/preset helpers.
"""

import json

import pytest

from specsim.cli import main
from specsim.metrics import import_report
from specsim.oracle import TokenStreamOracle
from specsim.presets import preset_names

TINY_CONFIG = """
batch_size = 2
n_requests = 2
output_len = 8
alpha = 0.8
qps = 1e6
seed = 3
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


class TestModel:
    def test_table_with_derived_length(self, capsys):
        assert main(["model"]) == 0
        out = capsys.readouterr().out
        assert "r* = " in out
        assert "thr_ordinary" in out
        assert "parallel" in out and "ordinary" in out

    def test_reference_numbers(self, capsys):
        assert main(["model", "--accepted-len", "3.0"]) == 0
        out = capsys.readouterr().out
        assert "r* = 0.34615" in out
        assert "1476.92" in out

    def test_degenerate_length_fails_cleanly(self, capsys):
        assert main(["model", "--accepted-len", "1.0"]) == 2
        err = capsys.readouterr().err
        assert "requires L>1" in err

    def test_csv_export(self, tmp_path, capsys):
        target = tmp_path / "table.csv"
        assert main(["model", "--csv", str(target), "--r-grid", "0,0.5,1"]) == 0
        lines = target.read_text().splitlines()
        assert lines[0] == "r,thr_ordinary,thr_parallel,preferred"
        assert len(lines) == 4


class TestOracleCommand:
    def test_output_stream_dump(self, capsys):
        assert main(["oracle", "--seed", "7", "--request", "0", "--len", "3"]) == 0
        out = capsys.readouterr().out.split()
        assert [int(t) for t in out] == TokenStreamOracle(seed=7).reference_prefix(0, 3)

    def test_prompt_stream_dump(self, capsys):
        assert main(["oracle", "--len", "2", "--prompt"]) == 0
        out = capsys.readouterr().out.split()
        assert [int(t) for t in out] == TokenStreamOracle(seed=0).prompt_tokens(0, 2)


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in preset_names():
        assert name in out


class TestRun:
    def test_config_run_writes_reports_and_figures(self, tiny_config, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert main(["run", "--config", str(tiny_config), "--out", str(out_dir)]) == 0
        stdout = capsys.readouterr().out
        assert "wrote 4 report(s)" in stdout
        csvs = sorted(p.name for p in out_dir.glob("*.csv"))
        assert csvs == [
            "ar_single_run_3.csv",
            "hybrid_single_run_3.csv",
            "ordinary_single_run_3.csv",
            "parallel_single_run_3.csv",
        ]
        pngs = sorted(p.name for p in out_dir.glob("*.png"))
        assert pngs == [
            "tiny_accepted_length.png",
            "tiny_rollback_ratio.png",
            "tiny_throughput.png",
        ]
        report = import_report((out_dir / "hybrid_single_run_3.csv").read_text())
        assert report.requests_completed == 2
        assert report.total_committed == 16

    def test_json_format_and_no_plots(self, tiny_config, tmp_path):
        out_dir = tmp_path / "out"
        assert main([
            "run", "--config", str(tiny_config), "--out", str(out_dir),
            "--format", "json", "--no-plots", "--variant", "hybrid",
            "--variant", "hybrid",
        ]) == 0
        files = list(out_dir.iterdir())
        assert [p.name for p in files] == ["hybrid_single_run_3.json"]
        payload = json.loads(files[0].read_text())
        assert payload["variant"] == "hybrid"

    def test_seed_flag_overrides_config(self, tiny_config, tmp_path):
        out_dir = tmp_path / "out"
        assert main([
            "run", "--config", str(tiny_config), "--out", str(out_dir),
            "--seed", "99", "--no-plots", "--variant", "ar",
        ]) == 0
        assert (out_dir / "ar_single_run_99.csv").exists()

    def test_env_overrides_apply(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("SPECSIM_SEED", "11")
        out_dir = tmp_path / "out"
        assert main([
            "run", "--config", str(tiny_config), "--out", str(out_dir),
            "--no-plots", "--variant", "ar",
        ]) == 0
        assert (out_dir / "ar_single_run_11.csv").exists()

    def test_preset_run(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert main([
            "run", "--preset", "tp-imbalance", "--replicates", "1",
            "--out", str(out_dir), "--no-plots",
        ]) == 0
        stdout = capsys.readouterr()
        assert "wrote 2 report(s)" in stdout.out
        # this preset violates the overlap assumption by design and must warn
        assert "overlap assumption" in stdout.err
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [
            "parallel_compression_p_0.1_0.csv",
            "parallel_compression_p_1.0_0.csv",
        ]

    def test_bad_config_key_is_a_usage_error(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("batchsize = 8\n")
        assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_config_file_is_a_usage_error(self, tmp_path, capsys):
        missing = tmp_path / "nope.cfg"
        assert main(["run", "--config", str(missing), "--out", str(tmp_path)]) == 2
        assert "error:" in capsys.readouterr().err


class TestVerify:
    def test_golden_round_trip(self, tmp_path, capsys):
        golden = tmp_path / "goldens"
        assert main(["verify", "--write-golden", str(golden)]) == 0
        assert len(list(golden.glob("*.csv"))) == 4
        capsys.readouterr()

        rc = main(["verify", "--criteria", "1,11", "--golden", str(golden)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "PASS  1 formula-fidelity" in out
        assert "PASS 11 benefit-formula" in out
        assert out.count("PASS golden") == 4

    def test_tampered_golden_fails(self, tmp_path, capsys):
        golden = tmp_path / "goldens"
        main(["verify", "--write-golden", str(golden)])
        victim = sorted(golden.glob("*.csv"))[0]
        victim.write_text(victim.read_text().replace("ar", "xx", 1))
        capsys.readouterr()
        rc = main(["verify", "--criteria", "1", "--golden", str(golden)])
        out = capsys.readouterr().out
        assert rc == 1
        assert "FAIL golden" in out

    def test_missing_golden_fails(self, tmp_path, capsys):
        golden = tmp_path / "goldens"
        main(["verify", "--write-golden", str(golden)])
        removed = sorted(golden.glob("*.csv"))[0]
        removed.unlink()
        capsys.readouterr()
        rc = main(["verify", "--criteria", "1", "--golden", str(golden)])
        out = capsys.readouterr().out
        assert rc == 1
        assert f"MISSING golden {removed.name}" in out

    def test_bad_criteria_argument(self, capsys):
        assert main(["verify", "--criteria", "one,two"]) == 2
        assert "--criteria" in capsys.readouterr().err
