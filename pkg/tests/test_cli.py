from __future__ import annotations

import csv
import hashlib
import json
import subprocess
import sys

import pytest

from bca import cli
from bca.embio import load_state, read_embeddings


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def gen_args(out_dir, name="toy", samples=300, shift="confusion:0.7", seed=1):
    args = [
        "--output-dir", out_dir,
        "gen",
        "--classes", 4,
        "--dim", 16,
        "--samples", samples,
        "--noise", 0.35,
        "--seed", seed,
        "--out", name,
    ]
    if shift:
        args += ["--shift", shift]
    return args


class TestGen:
    def test_generates_stream_bank_and_sidecar(self, tmp_path, capsys):
        assert run_cli(*gen_args(tmp_path)) == 0
        header, vectors, labels = read_embeddings(tmp_path / "toy.bcae")
        assert header.count == 300 and header.dim == 16 and header.labeled
        bank_header, bank, none = read_embeddings(tmp_path / "toy.text.bcae")
        assert bank_header.count == 4 and none is None
        meta = json.loads((tmp_path / "toy.meta.json").read_text())
        assert meta["spec"]["num_classes"] == 4
        assert meta["spec"]["seed"] == 1
        out = capsys.readouterr().out
        assert "spec=" in out

    def test_identical_flags_identical_hashes(self, tmp_path):
        assert run_cli(*gen_args(tmp_path / "a")) == 0
        assert run_cli(*gen_args(tmp_path / "b")) == 0
        for name in ("toy.bcae", "toy.text.bcae", "toy.meta.json"):
            a = hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest()
            b = hashlib.sha256((tmp_path / "b" / name).read_bytes()).hexdigest()
            assert a == b, name

    def test_zero_samples_is_validation_error(self, tmp_path, capsys):
        code = run_cli(*gen_args(tmp_path, samples=0))
        assert code == cli.EXIT_VALIDATION
        assert "error" in capsys.readouterr().err

    def test_spec_file_round_trip(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(
            json.dumps(
                {
                    "num_classes": 3,
                    "embedding_dim": 8,
                    "num_samples": 40,
                    "noise_scale": 0.2,
                    "seed": 9,
                    "shifts": [{"kind": "skew", "weights": [2, 1, 1]}],
                }
            )
        )
        assert run_cli("--output-dir", tmp_path, "gen", "--spec", spec_path,
                       "--out", "fromspec") == 0
        header, _, labels = read_embeddings(tmp_path / "fromspec.bcae")
        assert header.count == 40

    def test_bad_shift_spec_rejected(self, tmp_path):
        assert run_cli(*gen_args(tmp_path, shift="wobble:1")) == cli.EXIT_VALIDATION


@pytest.fixture
def generated(tmp_path):
    assert run_cli(*gen_args(tmp_path, samples=400)) == 0
    return tmp_path


class TestRun:
    def test_run_writes_report_and_metrics(self, generated, capsys):
        code = run_cli(
            "--output-dir", generated,
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10,
            "--temperature", 20,
            "--out", "res",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "overall_accuracy=" in out
        assert "config.tau=0.3" in out
        with open(generated / "res.metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 401
        with open(generated / "res.summary.csv") as fh:
            summary = dict(list(csv.reader(fh))[1:])
        assert summary["config.n1" if "config.n1" in summary
                       else "config.init_count_embedding"] == "100"

    def test_ood_preset_defaults_echoed(self, generated, capsys):
        code = run_cli(
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "config.tau=0.3" in out
        assert "config.init_count_embedding=30000" in out
        assert "config.init_count_prior=10" in out
        assert "preset=ood" in out

    def test_crossdomain_preset(self, generated, capsys):
        code = run_cli(
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--preset", "crossdomain",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "config.tau=0.35" in out
        assert "config.init_count_embedding=50000" in out

    def test_baseline_mode_deterministic_reports(self, generated):
        for sub in ("x", "y"):
            code = run_cli(
                "--output-dir", generated / sub,
                "--quiet",
                "run",
                "--embeddings", generated / "toy.bcae",
                "--text-embeddings", generated / "toy.text.bcae",
                "--mode", "baseline",
                "--out", "base",
            )
            assert code == 0
        a = (generated / "x" / "base.metrics.csv").read_bytes()
        b = (generated / "y" / "base.metrics.csv").read_bytes()
        assert a == b

    def test_checkpoint_interval_writes_checkpoints(self, generated):
        code = run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10, "--temperature", 20,
            "--checkpoint-every", 100, "--out", "ck",
        )
        assert code == 0
        checkpoints = sorted((generated / "ck-checkpoints").glob("*.bcas"))
        assert len(checkpoints) == 4  # 400 samples / every 100
        state = load_state(checkpoints[0])
        assert (state.c1 - 100).sum() >= 0

    def test_missing_file_is_io_error(self, generated):
        code = run_cli(
            "run",
            "--embeddings", generated / "nope.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
        )
        assert code == cli.EXIT_IO

    def test_save_and_resume_state(self, generated):
        code = run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 50, "--n2", 5, "--temperature", 20,
            "--save-state", "final.bcas",
        )
        assert code == 0
        state = load_state(generated / "final.bcas")
        assert (state.c1 - 50).sum() > 0
        code = run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--resume-from", generated / "final.bcas",
            "--save-state", "final2.bcas",
        )
        assert code == 0


class TestAblate:
    def test_four_rows_and_baseline_match(self, generated, capsys):
        code = run_cli(
            "--output-dir", generated,
            "ablate",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10, "--temperature", 20,
            "--out", "cmp",
        )
        assert code == 0
        with open(generated / "cmp.ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == ["Baseline", "LA", "PA", "Full"]

        capsys.readouterr()
        code = run_cli(
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10, "--temperature", 20,
            "--mode", "baseline",
        )
        assert code == 0
        out = capsys.readouterr().out
        standalone = [
            line.split("=")[1]
            for line in out.splitlines()
            if line.startswith("overall_accuracy=")
        ][0]
        assert float(rows[1][1]) == float(standalone)


class TestSweep:
    def test_sweep_emits_grid_rows(self, generated):
        code = run_cli(
            "--output-dir", generated, "--quiet",
            "sweep",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--temperature", 20,
            "--tau-grid", "0.1,0.3",
            "--n1-grid", "50,100",
            "--n2-grid", "5",
            "--out", "grid",
        )
        assert code == 0
        with open(generated / "grid.sweep.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 5
        assert rows[0][:3] == ["tau", "n1", "n2"]


class TestInspect:
    def test_inspect_embeddings_zero_warnings(self, generated, capsys):
        assert run_cli("inspect", generated / "toy.bcae") == 0
        out = capsys.readouterr().out
        assert "kind=embeddings" in out
        assert "warnings=0" in out

    def test_inspect_state_counters_match_updates(self, generated, capsys):
        run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10, "--temperature", 20,
            "--save-state", "st.bcas", "--out", "insp",
        )
        with open(generated / "insp.summary.csv") as fh:
            summary = dict(list(csv.reader(fh))[1:])
        capsys.readouterr()
        assert run_cli("inspect", generated / "st.bcas") == 0
        out = capsys.readouterr().out
        assert "kind=state-checkpoint" in out
        assert f"updates_total={summary['updates_fired']}" in out
        assert "warnings=0" in out

    def test_inspect_corrupted_file_nonzero_exit(self, tmp_path):
        bad = tmp_path / "bad.bcae"
        bad.write_bytes(b"GARBAGE!")
        assert run_cli("inspect", bad) == cli.EXIT_IO

    def test_invariant_violation_exit_code(self, generated):
        import numpy as np

        run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 1.0, "--save-state", "iv.bcas",
        )
        path = generated / "iv.bcas"
        data = bytearray(path.read_bytes())
        offset = 56 + 4 * 16 * 4  # first prior value, after the bank section
        data[offset : offset + 4] = np.array([0.4], dtype="<f4").tobytes()
        path.write_bytes(bytes(data))
        assert run_cli("inspect", path) == cli.EXIT_INVARIANT

    def test_inspect_fresh_state_zero_entropy(self, generated, capsys):
        run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 1.0,
            "--save-state", "fresh.bcas",
        )
        capsys.readouterr()
        assert run_cli("inspect", generated / "fresh.bcas") == 0
        out = capsys.readouterr().out
        assert "prior_entropy_min=0.000000 mean=0.000000 max=0.000000" in out


class TestExportPrior:
    def test_export_and_reparse(self, generated, capsys):
        run_cli(
            "--output-dir", generated, "--quiet",
            "run",
            "--embeddings", generated / "toy.bcae",
            "--text-embeddings", generated / "toy.text.bcae",
            "--tau", 0.3, "--n1", 100, "--n2", 10, "--temperature", 20,
            "--save-state", "pr.bcas",
        )
        assert run_cli(
            "--output-dir", generated, "--quiet",
            "export-prior",
            "--state", generated / "pr.bcas",
            "--out", "prior.csv",
            "--top", 2,
        ) == 0
        with open(generated / "prior.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows[0]) == 3 + 2


class TestBench:
    def test_bench_reports_phases(self, capsys):
        assert run_cli("bench", "--dim", 32, "--classes", 8,
                       "--iterations", 50) == 0
        out = capsys.readouterr().out
        assert "t2 membership" in out
        assert "step_latency_median_ms=" in out

    def test_zero_iterations_rejected(self):
        assert run_cli("bench", "--iterations", 0) == cli.EXIT_VALIDATION


def test_console_script_entry_point(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "bca.cli", "bench", "--dim", "16",
         "--classes", "4", "--iterations", "20"],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0
    assert "step_latency_median_ms=" in result.stdout
