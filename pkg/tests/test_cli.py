"""End-to-end CLI behavior: pipelines, determinism, exit codes, manifests."""

import json
import os
import subprocess
import sys

import pytest

from cogrl.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def visual_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("visual")
    assert run(["synth", "visual", "--out-dir", d, "--seed", "3",
                "--templates", "2", "--per-template", "3",
                "--height", "12", "--width", "12", "--jitter", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def cloze_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cloze")
    assert run(["synth", "cloze", "--out-dir", d, "--seed", "2",
                "--questions", "40"]) == 0
    return d


class TestSynth:
    def test_visual_outputs_exist(self, visual_dir):
        assert (visual_dir / "manifest.tsv").exists()
        assert (visual_dir / "oracle_q.tsv").exists()
        assert (visual_dir / "manifest.tsv.manifest.json").exists()

    def test_cloze_outputs_exist(self, cloze_dir):
        for name in ("cloze.tsv", "oracle_q.tsv", "features_human.tsv",
                     "features_full.tsv"):
            assert (cloze_dir / name).exists()

    def test_afm_log_rerun_byte_identical(self, tmp_path):
        args = ["synth", "afm-log", "--seed", "5", "--students", "10",
                "--items", "8", "--kcs", "2"]
        assert run(args + ["--out-dir", tmp_path / "a"]) == 0
        assert run(args + ["--out-dir", tmp_path / "b"]) == 0
        for name in ("transactions.tsv", "qmatrix.tsv", "true_params.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_manifest_records_inputs_and_flags(self, tmp_path, visual_dir):
        out = tmp_path / "log"
        assert run(["synth", "afm-log", "--out-dir", out, "--seed", "1",
                    "--students", "5", "--items", "6", "--kcs", "2",
                    "--qmatrix", visual_dir / "oracle_q.tsv"]) == 0
        manifest = json.loads(
            (out / "transactions.tsv.manifest.json").read_text())
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 1
        assert len(manifest["inputs"]) == 1
        digest = next(iter(manifest["inputs"].values()))
        assert len(digest) == 64


@pytest.fixture(scope="module")
def trained(tmp_path_factory, visual_dir):
    d = tmp_path_factory.mktemp("trained")
    code = run(["train-rep", "--images", visual_dir / "manifest.tsv",
                "--out-checkpoint", d / "model.ckpt",
                "--out-reps", d / "reps.tsv",
                "--filters", "3", "--kernel", "3", "--stride", "2",
                "--rep-size", "8", "--epochs", "60", "--lr", "0.5",
                "--target-loss", "0.001", "--seed", "4"])
    assert code == 0
    return d


@pytest.fixture(scope="module")
def log_dir(tmp_path_factory, visual_dir):
    d = tmp_path_factory.mktemp("logs")
    assert run(["synth", "afm-log", "--out-dir", d, "--seed", "6",
                "--students", "12",
                "--qmatrix", visual_dir / "oracle_q.tsv"]) == 0
    return d


class TestTrainAndQmatrix:
    def test_outputs_written(self, trained):
        assert (trained / "model.ckpt").exists()
        assert (trained / "reps.tsv").exists()

    def test_qmatrix_with_baselines(self, trained, tmp_path):
        # human-authored map covering the six items of the tiny visual set
        human_map = tmp_path / "map.tsv"
        lines = ["item_id\tkc_name"]
        reps_items = [line.split("\t")[0] for line in
                      (trained / "reps.tsv").read_text().splitlines()[1:]]
        for item in reps_items:
            lines.append(f"{item}\tkc_{item[:3]}")
        human_map.write_text("\n".join(lines) + "\n")
        code = run(["qmatrix", "--reps", trained / "reps.tsv",
                    "--tau", "0.95", "--out", tmp_path / "q.tsv",
                    "--emit-faculty", tmp_path / "fac.tsv",
                    "--emit-identical", tmp_path / "ide.tsv",
                    "--human-map", human_map,
                    "--emit-human", tmp_path / "hum.tsv"])
        assert code == 0
        assert (tmp_path / "q.tsv").exists()
        assert (tmp_path / "q.tsv.report.txt").exists()
        fac = (tmp_path / "fac.tsv").read_text().splitlines()
        assert fac[0] == "item_id\tfaculty"
        assert all(line.endswith("\t1") for line in fac[1:])
        hum = (tmp_path / "hum.tsv").read_text().splitlines()
        assert hum[0].startswith("item_id\tkc_")

    def test_rerun_byte_identical(self, tmp_path, visual_dir, trained):
        args = ["train-rep", "--images", visual_dir / "manifest.tsv",
                "--filters", "3", "--kernel", "3", "--stride", "2",
                "--rep-size", "8", "--epochs", "60", "--lr", "0.5",
                "--target-loss", "0.001", "--seed", "4"]
        assert run(args + ["--out-checkpoint", tmp_path / "m2.ckpt",
                           "--out-reps", tmp_path / "r2.tsv"]) == 0
        assert (tmp_path / "m2.ckpt").read_bytes() == \
               (trained / "model.ckpt").read_bytes()
        assert (tmp_path / "r2.tsv").read_bytes() == \
               (trained / "reps.tsv").read_bytes()


class TestFitCvCompare:
    def test_fit_afm(self, log_dir, tmp_path):
        code = run(["fit-afm", "--log", log_dir / "transactions.tsv",
                    "--qmatrix", log_dir / "qmatrix.tsv",
                    "--out", tmp_path / "params.tsv",
                    "--report", tmp_path / "report.tsv"])
        assert code == 0
        lines = (tmp_path / "params.tsv").read_text().splitlines()
        assert lines[0] == "entity\trole\tvalue"
        roles = {line.split("\t")[1] for line in lines[1:]}
        assert roles == {"theta", "beta", "gamma"}

    def test_synth_fit_recovery_pipeline(self, tmp_path):
        from cogrl.afm import pearson, read_params

        assert run(["synth", "afm-log", "--out-dir", tmp_path / "d",
                    "--seed", "13", "--students", "60", "--items", "30",
                    "--kcs", "4"]) == 0
        assert run(["fit-afm", "--log", tmp_path / "d" / "transactions.tsv",
                    "--qmatrix", tmp_path / "d" / "qmatrix.tsv",
                    "--out", tmp_path / "params.tsv"]) == 0
        true = read_params(tmp_path / "d" / "true_params.tsv")
        fit = read_params(tmp_path / "params.tsv")
        kcs = sorted(true.beta)
        assert pearson([fit.beta[k] for k in kcs],
                       [true.beta[k] for k in kcs]) >= 0.9
        assert pearson([fit.gamma[k] for k in kcs],
                       [true.gamma[k] for k in kcs]) >= 0.8

    def test_cv_and_compare_consistent(self, log_dir, tmp_path):
        assert run(["cv", "--log", log_dir / "transactions.tsv",
                    "--qmatrix", log_dir / "qmatrix.tsv", "--folds", "3",
                    "--seed", "9", "--out", tmp_path / "cv.tsv"]) == 0
        assert run(["compare", "--log", log_dir / "transactions.tsv",
                    "--models",
                    f"faculty,identical,oracle={log_dir / 'qmatrix.tsv'}",
                    "--folds", "3", "--seed", "9",
                    "--out", tmp_path / "cmp.tsv"]) == 0
        cv_mean = (tmp_path / "cv.tsv").read_text().splitlines()[-1]
        cmp_lines = (tmp_path / "cmp.tsv").read_text().splitlines()
        oracle_row = [l for l in cmp_lines if l.startswith("oracle\t")][0]
        assert cv_mean.split("\t")[1] == oracle_row.split("\t")[1]

    def test_compare_jobs_byte_identical(self, log_dir, tmp_path):
        base = ["compare", "--log", log_dir / "transactions.tsv",
                "--models", "faculty,identical", "--folds", "3",
                "--seed", "9"]
        assert run(base + ["--out", tmp_path / "j1.tsv", "--jobs", "1"]) == 0
        assert run(base + ["--out", tmp_path / "j2.tsv", "--jobs", "2"]) == 0
        assert (tmp_path / "j1.tsv").read_bytes() == \
               (tmp_path / "j2.tsv").read_bytes()


class TestSimulate:
    def test_simulate_human_features(self, cloze_dir, tmp_path):
        assert run(["synth", "afm-log", "--out-dir", tmp_path / "log",
                    "--seed", "3", "--students", "8",
                    "--qmatrix", cloze_dir / "oracle_q.tsv"]) == 0
        code = run(["simulate", "--log", tmp_path / "log" / "transactions.tsv",
                    "--cloze", cloze_dir / "cloze.tsv",
                    "--q-eval", cloze_dir / "oracle_q.tsv",
                    "--features", "human", "--seed", "5",
                    "--out", tmp_path / "study.tsv",
                    "--out-sim-log", tmp_path / "sim_log.tsv"])
        assert code == 0
        lines = (tmp_path / "study.tsv").read_text().splitlines()
        assert lines[0].startswith("kc\torig_intercept")
        assert lines[-1].startswith("correlation_with_original")
        assert (tmp_path / "sim_log.tsv").exists()

    def test_simulate_cogrl_features(self, cloze_dir, tmp_path):
        assert run(["synth", "afm-log", "--out-dir", tmp_path / "log",
                    "--seed", "4", "--students", "5",
                    "--qmatrix", cloze_dir / "oracle_q.tsv"]) == 0
        code = run(["simulate", "--log", tmp_path / "log" / "transactions.tsv",
                    "--cloze", cloze_dir / "cloze.tsv",
                    "--q-eval", cloze_dir / "oracle_q.tsv",
                    "--features", "cogrl",
                    "--cogrl-q", cloze_dir / "oracle_q.tsv",
                    "--seed", "2", "--out", tmp_path / "study.tsv"])
        assert code == 0
        assert (tmp_path / "study.tsv").exists()

    def test_simulate_file_features_rerun_identical(self, cloze_dir, tmp_path):
        assert run(["synth", "afm-log", "--out-dir", tmp_path / "log",
                    "--seed", "3", "--students", "6",
                    "--qmatrix", cloze_dir / "oracle_q.tsv"]) == 0
        base = ["simulate", "--log", tmp_path / "log" / "transactions.tsv",
                "--cloze", cloze_dir / "cloze.tsv",
                "--q-eval", cloze_dir / "oracle_q.tsv",
                "--features", "file",
                "--features-file", cloze_dir / "features_full.tsv",
                "--seed", "7"]
        assert run(base + ["--out", tmp_path / "a.tsv"]) == 0
        assert run(base + ["--out", tmp_path / "b.tsv", "--jobs", "2"]) == 0
        assert (tmp_path / "a.tsv").read_bytes() == \
               (tmp_path / "b.tsv").read_bytes()


class TestGradcheckAndErrors:
    def test_gradcheck_passes(self, capsys):
        assert run(["gradcheck", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "cnn" in out and "lstm" in out

    def test_gradcheck_impossible_tolerance_fails(self):
        assert run(["gradcheck", "--seed", "1", "--tolerance", "1e-12"]) == 5

    def test_missing_file_exit_code(self, tmp_path):
        assert run(["fit-afm", "--log", tmp_path / "nope.tsv",
                    "--qmatrix", tmp_path / "also_nope.tsv",
                    "--out", tmp_path / "p.tsv"]) == 3

    def test_malformed_file_exit_code(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("not\ta\theader\n")
        assert run(["fit-afm", "--log", bad, "--qmatrix", bad,
                    "--out", tmp_path / "p.tsv"]) == 3

    def test_bad_model_entry_exit_code(self, tmp_path, visual_dir):
        assert run(["synth", "afm-log", "--out-dir", tmp_path, "--seed", "0",
                    "--students", "4", "--items", "4", "--kcs", "2"]) == 0
        assert run(["compare", "--log", tmp_path / "transactions.tsv",
                    "--models", "mystery", "--folds", "2",
                    "--out", tmp_path / "c.tsv"]) == 4

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COGRL_SEED", "11")
        assert run(["synth", "afm-log", "--out-dir", tmp_path / "env",
                    "--students", "5", "--items", "4", "--kcs", "2"]) == 0
        manifest = json.loads(
            (tmp_path / "env" / "transactions.tsv.manifest.json").read_text())
        assert manifest["seed"] == 11
        monkeypatch.setenv("COGRL_SEED", "eleven")
        assert run(["synth", "afm-log", "--out-dir", tmp_path / "env2",
                    "--students", "5", "--items", "4", "--kcs", "2"]) == 4

    def test_console_module_entrypoint(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "cogrl.cli", "gradcheck", "--arch", "cnn",
             "--seed", "2"],
            capture_output=True, text=True,
            env={**os.environ, "PYTHONPATH": ""})
        assert result.returncode == 0
        assert "max_relative_error" in result.stdout
