"""CLI tests: subcommand behaviour, exit codes, manifests, determinism."""

import json

import pytest

from darkrank import dataio
from darkrank.cli import main


@pytest.fixture()
def workspace(tmp_path):
    """A small dataset file plus a fast distillation config."""
    data_path = tmp_path / "data.csv"
    spec = dataio.SynthSpec(num_identities=6, samples_per_identity=6, feature_dim=8,
                            intra_class_stddev=1.0, inter_class_separation=5.0,
                            heldout_fraction=0.34, seed=3)
    dataio.save(dataio.generate(spec), data_path)
    config = {
        "version": 1,
        "dataset": str(data_path),
        "teacher_hidden": [16],
        "student_hidden": [8],
        "embed_dim": 8,
        "variant": "soft",
        "schedule": {"epochs": 2, "decay_epochs": [1], "decay_factor": 0.5},
        "batch_size": 6,
        "seed": 1,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return tmp_path, config_path, config


def train_teacher(tmp_path, config_path):
    out = tmp_path / "teacher"
    assert main(["train-teacher", "--config", str(config_path), "--out", str(out)]) == 0
    return out / "teacher.drknet"


class TestGenData:
    def test_default_spec_produces_loadable_dataset(self, tmp_path, capsys):
        out = tmp_path / "gen.csv"
        assert main(["gen-data", "--out", str(out), "--seed", "4"]) == 0
        ds = dataio.load(out)
        assert ds.num_samples == 320
        assert "320 samples" in capsys.readouterr().out

    def test_repeated_seed_identical_bytes(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(["gen-data", "--out", str(a), "--seed", "9"])
        main(["gen-data", "--out", str(b), "--seed", "9"])
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_heldout_fraction_exit_2(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path / "x.csv"),
                     "--heldout-fraction", "1.5"])
        assert code == 2
        assert "heldout_fraction" in capsys.readouterr().err


class TestTrainAndDistill:
    def test_full_flow(self, workspace, capsys):
        tmp_path, config_path, _ = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        assert teacher_ckpt.exists()
        manifest = json.loads((tmp_path / "teacher" / "manifest.json").read_text())
        assert manifest["outcome"] == "completed"
        assert manifest["config_hash"]

        out = tmp_path / "student"
        code = main(["distill", "--config", str(config_path),
                     "--teacher", str(teacher_ckpt), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        for key in ("mAP", "rank_1", "rank_5", "rank_10", "recall_at_1", "f1", "nmi"):
            assert key in report["final_metrics"]
        assert report["config"]["variant"] == "soft"
        assert "soft" in report["epochs"][0]["components"]
        stdout = capsys.readouterr().out
        assert "mAP" in stdout

    def test_kd_hard_combination_runs(self, workspace):
        tmp_path, config_path, config = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        config["variant"] = "kd+hard"
        combo_path = tmp_path / "combo.json"
        combo_path.write_text(json.dumps(config))
        out = tmp_path / "combo_run"
        assert main(["distill", "--config", str(combo_path),
                     "--teacher", str(teacher_ckpt), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        comps = report["epochs"][0]["components"]
        assert "kd" in comps and "hard" in comps

    def test_determinism_byte_identical_reports(self, workspace):
        tmp_path, config_path, _ = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        outs = []
        for name in ("run_a", "run_b"):
            out = tmp_path / name
            assert main(["distill", "--config", str(config_path),
                         "--teacher", str(teacher_ckpt), "--out", str(out)]) == 0
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_teacher_file_exit_2(self, workspace):
        tmp_path, config_path, _ = workspace
        code = main(["distill", "--config", str(config_path),
                     "--teacher", str(tmp_path / "nope.drknet"),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_unknown_config_key_exit_2(self, workspace, capsys):
        tmp_path, _, config = workspace
        config["wieghts"] = {"transfer": 2.0}
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(config))
        code = main(["train-teacher", "--config", str(bad),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "wieghts" in capsys.readouterr().err

    def test_config_missing_version_exit_2(self, workspace):
        tmp_path, _, config = workspace
        del config["version"]
        bad = tmp_path / "nover.json"
        bad.write_text(json.dumps(config))
        assert main(["train-teacher", "--config", str(bad),
                     "--out", str(tmp_path / "out")]) == 2

    def test_manifest_written_before_outputs(self, workspace, monkeypatch):
        tmp_path, config_path, _ = workspace
        order = []
        import darkrank.cli as cli_mod
        real_start = cli_mod._start_manifest

        def spy_start(*args, **kwargs):
            order.append("manifest")
            return real_start(*args, **kwargs)

        import darkrank.trainer as trainer_mod
        real_train = trainer_mod.train_teacher

        def spy_train(*args, **kwargs):
            order.append("train")
            return real_train(*args, **kwargs)

        monkeypatch.setattr(cli_mod, "_start_manifest", spy_start)
        monkeypatch.setattr(cli_mod.trainer, "train_teacher", spy_train)
        main(["train-teacher", "--config", str(config_path),
              "--out", str(tmp_path / "spyrun")])
        assert order[:2] == ["manifest", "train"]

    def test_seed_flag_overrides_config(self, workspace):
        tmp_path, config_path, _ = workspace
        out = tmp_path / "seeded"
        assert main(["train-teacher", "--config", str(config_path),
                     "--out", str(out), "--seed", "42"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["seed"] == 42


class TestEvaluate:
    def test_outputs_metric_json(self, workspace, capsys):
        tmp_path, config_path, config = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        capsys.readouterr()  # drop training output
        assert main(["evaluate", "--checkpoint", str(teacher_ckpt),
                     "--data", config["dataset"], "--seed", "0"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) >= {"mAP", "rank_1", "recall_at_1", "f1", "nmi"}


class TestSweep:
    def test_unknown_parameter_exit_2(self, workspace):
        tmp_path, config_path, _ = workspace
        code = main(["sweep", "--config", str(config_path),
                     "--teacher", "x", "--parameter", "gamma",
                     "--values", "1,2", "--out", str(tmp_path / "sweep")])
        assert code == 2

    def test_empty_values_exit_2(self, workspace):
        tmp_path, config_path, _ = workspace
        code = main(["sweep", "--config", str(config_path),
                     "--teacher", "x", "--parameter", "beta",
                     "--values", ",", "--out", str(tmp_path / "sweep")])
        assert code == 2

    def test_sweep_rows_match_values_and_single_point_matches_distill(self, workspace):
        tmp_path, config_path, _ = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(config_path),
                     "--teacher", str(teacher_ckpt), "--parameter", "beta",
                     "--values", "2,3", "--out", str(out)]) == 0
        rows = json.loads((out / "sweep.json").read_text())
        assert len(rows) == 2
        csv_lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 3  # header + 2 rows
        assert csv_lines[0].startswith("parameter,value,")

        # a sweep holding beta at the config value reproduces a plain distill
        distill_out = tmp_path / "plain"
        main(["distill", "--config", str(config_path),
              "--teacher", str(teacher_ckpt), "--out", str(distill_out)])
        report = json.loads((distill_out / "report.json").read_text())
        single = tmp_path / "sweep_single"
        main(["sweep", "--config", str(config_path), "--teacher", str(teacher_ckpt),
              "--parameter", "beta", "--values", "3", "--out", str(single)])
        row = json.loads((single / "sweep.json").read_text())[0]
        for key, value in report["final_metrics"].items():
            assert row[key] == value

    def test_parallel_matches_sequential(self, workspace):
        tmp_path, config_path, _ = workspace
        teacher_ckpt = train_teacher(tmp_path, config_path)
        seq = tmp_path / "seq"
        par = tmp_path / "par"
        main(["sweep", "--config", str(config_path), "--teacher", str(teacher_ckpt),
              "--parameter", "lambda", "--values", "1,2", "--out", str(seq)])
        main(["sweep", "--config", str(config_path), "--teacher", str(teacher_ckpt),
              "--parameter", "lambda", "--values", "1,2", "--out", str(par),
              "--parallel", "2"])
        assert (seq / "sweep.json").read_text() == (par / "sweep.json").read_text()


class TestGradcheckCommand:
    def test_passes_on_fresh_checkout(self, tmp_path, capsys):
        out = tmp_path / "gradcheck.json"
        assert main(["gradcheck", "--instances", "2", "--seed", "1",
                     "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "PASS" in stdout and "gradcheck passed" in stdout
        doc = json.loads(out.read_text())
        assert doc["passed"] is True
        assert all("max_rel_error" in c for c in doc["checks"])


class TestReportCommand:
    def test_prints_stored_report(self, workspace, capsys):
        tmp_path, config_path, _ = workspace
        out = tmp_path / "teacher"
        main(["train-teacher", "--config", str(config_path), "--out", str(out)])
        capsys.readouterr()
        assert main(["report", "--run", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "heldout metrics" in stdout
        assert "completed" in stdout

    def test_missing_report_exit_2(self, tmp_path):
        assert main(["report", "--run", str(tmp_path)]) == 2
